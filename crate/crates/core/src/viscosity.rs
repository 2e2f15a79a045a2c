//! Generators, classical residuals and numerical viscosity checks.
//!
//! A test function `φ` qualifies on the sub side when `φ − u^{t,ω}` vanishes
//! at `(t, 0)` and its lower Snell value over a hitting time is zero (φ
//! touches `u` from above in the nonlinear sense); it qualifies on the super
//! side when the upper Snell value is zero. Qualifying candidates must then
//! satisfy `Lφ ≤ 0` (sub) or `Lφ ≥ 0` (super), where
//! `Lφ = −∂_tφ − G(t, ω, φ, ∂_ωφ, ∂²_ωωφ)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::RngCore;
use rayon::prelude::*;

use crate::calculus::{time_derivative_fd, vertical_derivative_fd, vertical_hessian_fd, SmoothFunctional};
use crate::error::{domain, Error, Result};
use crate::measures::{build_lattice, first_order_lattice, ControlLattice, ControlPair, Refinement};
use crate::pathspace::{shift_functional, AdaptedFunctional, ConvexDomain, DiscretePath, HittingTimeSpec};
use crate::rng;
use crate::snell::{HittingTree, TreeKernel, TreeSpec};

/// Which family of measures the equation is tested against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Flavor {
    /// Drift and diffusion controls in `P_L`.
    FullyNonlinear,
    /// Drift changes `|α| ≤ L` around the fixed diffusion `σ I`.
    Semilinear { sigma: f64 },
    /// Drift-only controls.
    FirstOrder,
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Flavor::FullyNonlinear => f.write_str("fully-nonlinear"),
            Flavor::Semilinear { sigma } => write!(f, "semilinear(sigma={sigma})"),
            Flavor::FirstOrder => f.write_str("first-order"),
        }
    }
}

type GenFn = dyn Fn(f64, &DiscretePath, f64, &[f64], &DMatrix<f64>) -> f64 + Send + Sync;

/// Nonlinearity `G(t, ω, y, z, γ)` of the equation `−∂_t u − G = 0`.
#[derive(Clone)]
pub struct Generator {
    name: String,
    f: Arc<GenFn>,
    lipschitz: f64,
    flavor: Flavor,
    bound_at_zero: f64,
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Generator")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .field("flavor", &self.flavor)
            .finish()
    }
}

impl Generator {
    pub fn new(
        name: impl Into<String>,
        lipschitz: f64,
        flavor: Flavor,
        f: impl Fn(f64, &DiscretePath, f64, &[f64], &DMatrix<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), f: Arc::new(f), lipschitz, flavor, bound_at_zero: f64::INFINITY }
    }

    /// Declares `C₀ ≥ |G(t, ω, 0, 0, 0)|`.
    pub fn with_bound_at_zero(mut self, c0: f64) -> Self {
        self.bound_at_zero = c0;
        self
    }

    pub fn with_flavor(mut self, flavor: Flavor) -> Self {
        self.flavor = flavor;
        self
    }

    /// `½ tr γ`.
    pub fn heat() -> Self {
        Self::new("heat", 0.5, Flavor::FullyNonlinear, |_, _, _, _, g| 0.5 * g.trace()).with_bound_at_zero(0.0)
    }

    /// `G ≡ 0`.
    pub fn zero() -> Self {
        Self::new("zero", 0.0, Flavor::FirstOrder, |_, _, _, _, _| 0.0).with_bound_at_zero(0.0)
    }

    /// `G = |z| − 1`.
    pub fn abs_gradient_minus_one() -> Self {
        Self::new("abs-gradient-minus-one", 1.0, Flavor::FirstOrder, |_, _, _, z, _| {
            z.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0
        })
        .with_bound_at_zero(1.0)
    }

    /// `G = ½σ² tr γ + F(t, ω, y, σz)`.
    pub fn semilinear(
        sigma: f64,
        f_lipschitz: f64,
        f: impl Fn(f64, &DiscretePath, f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let lip = 0.5 * sigma * sigma + f_lipschitz * sigma.max(1.0);
        Self::new("semilinear", lip, Flavor::Semilinear { sigma }, move |t, p, y, z, g| {
            let sz: Vec<f64> = z.iter().map(|v| sigma * v).collect();
            0.5 * sigma * sigma * g.trace() + f(t, p, y, &sz)
        })
    }

    /// `G = sup_k ½σ_k² tr γ`.
    pub fn uncertain_volatility(sigmas: Vec<f64>) -> Self {
        let top = sigmas.iter().fold(0.0f64, |a, s| a.max(s * s));
        Self::new("uncertain-volatility", 0.5 * top, Flavor::FullyNonlinear, move |_, _, _, _, g| {
            let tr = g.trace();
            sigmas.iter().map(|s| 0.5 * s * s * tr).fold(f64::NEG_INFINITY, f64::max)
        })
        .with_bound_at_zero(0.0)
    }

    /// `G + δ`.
    pub fn shifted(&self, delta: f64) -> Self {
        let g = self.clone();
        let mut out = Self::new(format!("{}+{delta}", self.name), self.lipschitz, self.flavor, move |t, p, y, z, gm| {
            g.eval(t, p, y, z, gm) + delta
        });
        out.bound_at_zero = self.bound_at_zero + delta.abs();
        out
    }

    pub fn eval(&self, t: f64, path: &DiscretePath, y: f64, z: &[f64], gamma: &DMatrix<f64>) -> f64 {
        (self.f)(t, path, y, z, gamma)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn bound_at_zero(&self) -> f64 {
        self.bound_at_zero
    }

    /// `Lφ = −∂_tφ − G(t, ω, φ, ∂_ωφ, ∂²φ)` from a jet.
    pub fn operator(&self, t: f64, path: &DiscretePath, dt: f64, y: f64, z: &[f64], gamma: &DMatrix<f64>) -> f64 {
        -dt - self.eval(t, path, y, z, gamma)
    }
}

/// Outcome of the structural generator checks.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorReport {
    pub samples: usize,
    pub elliptic: bool,
    pub lipschitz: bool,
    pub bounded_at_zero: bool,
}

impl GeneratorReport {
    pub fn ok(&self) -> bool {
        self.elliptic && self.lipschitz && self.bounded_at_zero
    }
}

fn random_symmetric(r: &mut impl RngCore, d: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng::uniform_in(r, -scale, scale));
    (&a + a.transpose()) * 0.5
}

/// Spot-checks ellipticity, the Lipschitz bound in `(y, z, γ)` (with the
/// entrywise ℓ¹ norm on `γ`) and `|G(·, 0, 0, 0)| ≤ C₀` on random samples.
pub fn check_generator(g: &Generator, paths: &[(f64, DiscretePath)], samples: usize, seed: u64) -> GeneratorReport {
    let mut r = rng::stream(seed, 0xC0FFEE);
    let (mut elliptic, mut lipschitz, mut bounded) = (true, true, true);
    const SLACK: f64 = 1e-12;
    for s in 0..samples {
        let (t, path) = &paths[s % paths.len()];
        let d = path.dim();
        let y = rng::uniform_in(&mut r, -2.0, 2.0);
        let z: Vec<f64> = (0..d).map(|_| rng::uniform_in(&mut r, -2.0, 2.0)).collect();
        let gm = random_symmetric(&mut r, d, 2.0);
        let a = DMatrix::from_fn(d, d, |_, _| rng::uniform_in(&mut r, -1.0, 1.0));
        let psd = &a * a.transpose();
        let base = g.eval(*t, path, y, &z, &gm);
        if g.eval(*t, path, y, &z, &(&gm + &psd)) < base - SLACK * (1.0 + base.abs()) {
            elliptic = false;
        }
        let y2 = rng::uniform_in(&mut r, -2.0, 2.0);
        let z2: Vec<f64> = (0..d).map(|_| rng::uniform_in(&mut r, -2.0, 2.0)).collect();
        let gm2 = random_symmetric(&mut r, d, 2.0);
        let dist = (y - y2).abs()
            + z.iter().zip(&z2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
            + (&gm - &gm2).abs().sum();
        let diff = (base - g.eval(*t, path, y2, &z2, &gm2)).abs();
        if diff > g.lipschitz() * dist + SLACK * (1.0 + base.abs()) {
            lipschitz = false;
        }
        if g.eval(*t, path, 0.0, &vec![0.0; d], &DMatrix::zeros(d, d)).abs() > g.bound_at_zero() + SLACK {
            bounded = false;
        }
    }
    GeneratorReport { samples, elliptic, lipschitz, bounded_at_zero: bounded }
}

/// Per-point values of `Lu` for a candidate classical solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub values: Vec<f64>,
    pub max_abs: f64,
    pub tolerance: f64,
}

impl ResidualReport {
    pub fn solution(&self) -> bool {
        self.max_abs <= self.tolerance
    }

    pub fn subsolution(&self) -> bool {
        self.values.iter().all(|&v| v <= self.tolerance)
    }

    pub fn supersolution(&self) -> bool {
        self.values.iter().all(|&v| v >= -self.tolerance)
    }
}

/// `Lu(t, ω) = −∂_t u − G(t, ω, u, ∂_ω u, ∂²u)` at every point.
pub fn classical_residual(
    f: &dyn SmoothFunctional,
    g: &Generator,
    points: &[(f64, DiscretePath)],
    tolerance: f64,
) -> Result<ResidualReport> {
    let mut values = Vec::with_capacity(points.len());
    for (idx, (t, path)) in points.iter().enumerate() {
        let y = f.eval(*t, path);
        let v = g.operator(*t, path, f.time_derivative(*t, path), y, &f.space_gradient(*t, path), &f.space_hessian(*t, path));
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("residual at point {idx} (t = {t}) is {v}")));
        }
        values.push(v);
    }
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(ResidualReport { values, max_abs, tolerance })
}

/// `φ(s, ω') = a(s−t) + b·ω'_s + ½ω'_sᵀ c ω'_s + q(s−t)² + φ₀` on `Λ^t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCandidate {
    pub t: f64,
    pub a: f64,
    pub b: Vec<f64>,
    pub c: DMatrix<f64>,
    pub q: f64,
    pub phi0: f64,
}

impl TestCandidate {
    pub fn value(&self, s: f64, x: &[f64]) -> f64 {
        let tau = s - self.t;
        let xv = DVector::from_column_slice(x);
        let quad = (xv.transpose() * &self.c * &xv)[(0, 0)];
        self.a * tau + self.b.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + 0.5 * quad + self.q * tau * tau + self.phi0
    }

    /// Sets `φ₀ = u(t, ω)` so that `(φ − u^{t,ω})(t, 0) = 0`.
    pub fn recentre(&self, u_at_anchor: f64) -> Self {
        Self { phi0: u_at_anchor, ..self.clone() }
    }

    /// `Lφ(t, 0)` with `∂_tφ = a`, `∂_ωφ = b`, `∂²φ = c`.
    pub fn operator(&self, g: &Generator, anchor: &DiscretePath) -> f64 {
        g.operator(self.t, anchor, self.a, self.phi0, &self.b, &self.c)
    }
}

impl AdaptedFunctional for TestCandidate {
    fn eval(&self, t: f64, path: &DiscretePath) -> f64 {
        self.value(t, &path.value_at(t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Sub,
    Super,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Sub => "sub",
            Side::Super => "super",
        })
    }
}

/// Measure family with the tree kernel realising it.
#[derive(Debug, Clone)]
pub struct MeasureFamily {
    lattice: ControlLattice,
    first_order: bool,
    alphabet_bound: f64,
}

impl MeasureFamily {
    pub fn for_flavor(flavor: Flavor, l: f64, d: usize, refinement: Refinement) -> Result<Self> {
        match flavor {
            Flavor::FullyNonlinear => Self::second_order(build_lattice(l, d, refinement)?),
            Flavor::FirstOrder => Ok(Self { alphabet_bound: l, lattice: first_order_lattice(l, d, refinement)?, first_order: true }),
            Flavor::Semilinear { sigma } => {
                if !(sigma > 0.0) {
                    return domain("σ must be positive");
                }
                let eff = l.max(0.5 * d as f64 * sigma * sigma);
                let members = first_order_lattice(l, d, refinement)?
                    .members()
                    .iter()
                    .map(|m| ControlPair { drift: m.drift.clone(), diffusion: DMatrix::identity(d, d) * sigma })
                    .collect();
                Self::second_order(ControlLattice::from_members(eff, members)?)
            }
        }
    }

    pub fn second_order(lattice: ControlLattice) -> Result<Self> {
        Ok(Self { alphabet_bound: lattice.bound(), lattice, first_order: false })
    }

    /// Uses a common tree alphabet sized for the bound `l` (for nesting comparisons).
    pub fn with_alphabet_bound(mut self, l: f64) -> Self {
        self.alphabet_bound = self.alphabet_bound.max(l);
        self
    }

    pub fn lattice(&self) -> &ControlLattice {
        &self.lattice
    }

    /// Kernel whose spatial step is `step`, with its time step.
    pub fn kernel(&self, step: f64) -> Result<(TreeKernel, f64)> {
        let l = self.alphabet_bound;
        if self.first_order {
            let dt = step / l;
            Ok((TreeKernel::first_order(&self.lattice, dt)?, dt))
        } else {
            let dt = ((1.0 + step * step).sqrt() - 1.0) / l;
            let wide = ControlLattice::from_members(l, self.lattice.members().to_vec())?;
            Ok((TreeKernel::second_order(&wide, dt)?, dt))
        }
    }
}

/// Coefficient grid of the default test family, centred at the jet of `u`.
#[derive(Debug, Clone, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub a_offsets: Vec<f64>,
    pub b_offsets: Vec<f64>,
    pub c_offsets: Vec<f64>,
    pub q_values: Vec<f64>,
    /// The centre of the `c` grid is clipped to `[−c_clip, c_clip]`.
    pub c_clip: f64,
    pub time_bump: f64,
    pub space_bump: f64,
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self {
            a_offsets: vec![-0.1, -0.05, 0.0, 0.05, 0.1],
            b_offsets: vec![-0.05, 0.0, 0.05],
            c_offsets: vec![-0.5, 0.0, 0.5],
            q_values: vec![0.0],
            c_clip: 8.0,
            time_bump: 1e-5,
            space_bump: 1e-3,
        }
    }
}

/// Numerical settings of a viscosity check.
#[derive(Debug, Clone)]
pub struct CheckConfig {
    /// Radii of the ball hitting times.
    pub radii: Vec<f64>,
    /// Tree depth; the hitting time is capped at `depth · Δt`.
    pub depth: usize,
    /// Spatial steps per radius.
    pub steps_per_radius: f64,
    pub membership_tol: f64,
    pub check_tol: f64,
    pub family: FamilySpec,
    /// Horizon `T` of the equation.
    pub horizon: f64,
}

impl CheckConfig {
    pub fn new(horizon: f64) -> Self {
        let r = horizon.sqrt();
        Self {
            radii: vec![0.05 * r, 0.1 * r, 0.2 * r],
            depth: 6,
            steps_per_radius: 3.0,
            membership_tol: 1e-12,
            check_tol: 1e-3,
            family: FamilySpec::default(),
            horizon,
        }
    }
}

/// One candidate on one hitting time.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub radius: f64,
    pub candidate: TestCandidate,
    /// Snell value of `φ − u^{t,ω}` (zero for exact members).
    pub snell_value: f64,
    pub member: bool,
    pub operator: f64,
    pub violates: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Violation,
    Vacuous,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Violation => "violation",
            Verdict::Vacuous => "vacuous",
        })
    }
}

impl Verdict {
    /// Associative reduction: any violation wins, then any pass.
    pub fn combine(self, other: Verdict) -> Verdict {
        use Verdict::*;
        match (self, other) {
            (Violation, _) | (_, Violation) => Violation,
            (Pass, _) | (_, Pass) => Pass,
            _ => Vacuous,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub side: Side,
    pub t: f64,
    pub records: Vec<CandidateRecord>,
    pub verdict: Verdict,
}

impl CheckReport {
    pub fn members(&self) -> impl Iterator<Item = &CandidateRecord> {
        self.records.iter().filter(|r| r.member)
    }
}

/// Default candidates centred at finite-difference jets of `u` at `(t, ω)`.
pub fn default_family(u: &dyn AdaptedFunctional, t: f64, path: &DiscretePath, cfg: &CheckConfig) -> Result<Vec<TestCandidate>> {
    let fam = &cfg.family;
    let prefix = path.stopped_at(t);
    let d = path.dim();
    let h = fam.time_bump.min(cfg.horizon - t);
    let a0 = if h > 0.0 { time_derivative_fd(u, t, &prefix, h, cfg.horizon)? } else { 0.0 };
    let b0 = vertical_derivative_fd(u, t, &prefix, fam.space_bump)?;
    let mut c0 = vertical_hessian_fd(u, t, &prefix, fam.space_bump)?;
    c0.apply(|v| *v = v.clamp(-fam.c_clip, fam.c_clip));
    let phi0 = u.eval(t, &prefix);
    let mut bs = vec![b0.clone()];
    for k in 0..d {
        for &db in &fam.b_offsets {
            if db != 0.0 {
                let mut b = b0.clone();
                b[k] += db;
                bs.push(b);
            }
        }
    }
    let mut out = Vec::new();
    for &da in &fam.a_offsets {
        for b in &bs {
            for &dc in &fam.c_offsets {
                for &q in &fam.q_values {
                    out.push(TestCandidate {
                        t,
                        a: a0 + da,
                        b: b.clone(),
                        c: &c0 + DMatrix::identity(d, d) * dc,
                        q,
                        phi0,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Runs one side of the viscosity check at `(t, ω)` over explicit candidates.
pub fn check_candidates(
    u: Arc<dyn AdaptedFunctional>,
    g: &Generator,
    side: Side,
    t: f64,
    path: &DiscretePath,
    candidates: &[TestCandidate],
    family: &MeasureFamily,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    if !(t < cfg.horizon) {
        return domain(format!("viscosity checks need t < T, got t = {t}"));
    }
    let prefix = path.stopped_at(t);
    let anchor_value = u.eval(t, &prefix);
    let shifted = shift_functional(u, t, &prefix)?;
    let mut records = Vec::new();
    for &radius in &cfg.radii {
        let (kernel, dt) = family.kernel(radius / cfg.steps_per_radius)?;
        let depth = cfg.depth.min(((cfg.horizon - t) / dt).floor() as usize);
        if depth == 0 {
            continue;
        }
        let h = HittingTimeSpec::domain(ConvexDomain::Ball { radius }, depth as f64 * dt)?;
        let tree = HittingTree::build(&h, &kernel, TreeSpec::new(depth, dt).with_origin(t))?;
        let u_vals = tree.evaluate(&shifted)?;
        let tr = tree.tree();
        let recs: Vec<CandidateRecord> = candidates
            .par_iter()
            .map(|cand| {
                let cand = cand.recentre(anchor_value);
                let raw: Vec<Vec<f64>> = (0..tr.layers())
                    .map(|k| {
                        let s = tr.spec().time(k);
                        (0..tr.layer_len(k)).map(|i| cand.value(s, tr.point(k, i)) - u_vals[k][i]).collect()
                    })
                    .collect();
                let (snell_value, member) = match side {
                    Side::Sub => {
                        let v = tree.lower_value(&raw);
                        (v, v >= -cfg.membership_tol)
                    }
                    Side::Super => {
                        let v = tree.upper_value(&raw);
                        (v, v <= cfg.membership_tol)
                    }
                };
                let operator = cand.operator(g, &prefix);
                let violates = member
                    && match side {
                        Side::Sub => operator > cfg.check_tol,
                        Side::Super => operator < -cfg.check_tol,
                    };
                CandidateRecord { radius, candidate: cand, snell_value, member, operator, violates }
            })
            .collect();
        records.extend(recs);
    }
    let verdict = if records.iter().any(|r| r.violates) {
        Verdict::Violation
    } else if records.iter().any(|r| r.member) {
        Verdict::Pass
    } else {
        Verdict::Vacuous
    };
    Ok(CheckReport { side, t, records, verdict })
}

/// Sub-side check with the default family and the generator's own flavor.
pub fn check_subsolution(
    u: Arc<dyn AdaptedFunctional>,
    g: &Generator,
    l: f64,
    t: f64,
    path: &DiscretePath,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    check_side(u, g, l, Side::Sub, t, path, cfg)
}

/// Super-side check with the default family and the generator's own flavor.
pub fn check_supersolution(
    u: Arc<dyn AdaptedFunctional>,
    g: &Generator,
    l: f64,
    t: f64,
    path: &DiscretePath,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    check_side(u, g, l, Side::Super, t, path, cfg)
}

pub fn check_side(
    u: Arc<dyn AdaptedFunctional>,
    g: &Generator,
    l: f64,
    side: Side,
    t: f64,
    path: &DiscretePath,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    let family = MeasureFamily::for_flavor(g.flavor(), l, path.dim(), Refinement::default())?;
    let candidates = default_family(u.as_ref(), t, path, cfg)?;
    check_candidates(u, g, side, t, path, &candidates, &family, cfg)
}

/// Both sides at one point.
pub fn check_both(
    u: Arc<dyn AdaptedFunctional>,
    g: &Generator,
    l: f64,
    t: f64,
    path: &DiscretePath,
    cfg: &CheckConfig,
) -> Result<(CheckReport, CheckReport)> {
    Ok((
        check_side(u.clone(), g, l, Side::Sub, t, path, cfg)?,
        check_side(u, g, l, Side::Super, t, path, cfg)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathspace::TimeGrid;

    fn path() -> DiscretePath {
        let g = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        DiscretePath::scalar(&g, &[0.0, 0.2, -0.1, 0.3, 0.1]).unwrap()
    }

    fn heat_integral() -> Arc<dyn AdaptedFunctional> {
        Arc::new(|t: f64, p: &DiscretePath| p.coord_integral(t, 0) + (1.0 - t) * p.x(t))
    }

    #[test]
    fn generators_satisfy_structure() {
        let pts = vec![(0.5, path())];
        for g in [
            Generator::heat(),
            Generator::zero(),
            Generator::abs_gradient_minus_one(),
            Generator::uncertain_volatility(vec![0.5, 1.0]),
            Generator::semilinear(1.0, 1.0, |_, _, y, z| 0.5 * y.sin() + z[0].cos()),
        ] {
            let r = check_generator(&g, &pts, 100, 1);
            assert!(r.ok(), "{}: {r:?}", g.name());
        }
        let bad = Generator::new("anti", 1.0, Flavor::FullyNonlinear, |_, _, _, _, g| -g.trace());
        assert!(!check_generator(&bad, &pts, 100, 1).elliptic);
    }

    #[test]
    fn maxdrift_residual_below_maximum() {
        let g = Generator::abs_gradient_minus_one();
        let v = g.operator(0.5, &path(), 0.0, 0.0, &[-1.0], &DMatrix::zeros(1, 1));
        assert_eq!(v, 0.0);
    }

    #[test]
    fn recentring_is_idempotent() {
        let c = TestCandidate { t: 0.5, a: 1.0, b: vec![0.5], c: DMatrix::from_element(1, 1, 2.0), q: 0.3, phi0: 7.0 };
        let once = c.recentre(0.25);
        assert_eq!(once.recentre(0.25), once);
        assert_eq!(once.value(0.5, &[0.0]), 0.25);
    }

    #[test]
    fn heat_integral_passes_both_sides() {
        let cfg = CheckConfig::new(1.0);
        let (sub, sup) = check_both(heat_integral(), &Generator::heat(), 1.0, 0.5, &path(), &cfg).unwrap();
        assert_eq!(sub.verdict, Verdict::Pass, "{:?}", sub.records.iter().filter(|r| r.violates).collect::<Vec<_>>());
        assert_eq!(sup.verdict, Verdict::Pass);
    }

    #[test]
    fn bumps_fail_on_the_correct_side() {
        let cfg = CheckConfig::new(1.0);
        let base = heat_integral();
        let b1 = base.clone();
        let up: Arc<dyn AdaptedFunctional> = Arc::new(move |t: f64, p: &DiscretePath| b1.eval(t, p) + 0.1 * (1.0 - t));
        let b2 = base.clone();
        let down: Arc<dyn AdaptedFunctional> = Arc::new(move |t: f64, p: &DiscretePath| b2.eval(t, p) - 0.1 * (1.0 - t));
        let g = Generator::heat();
        let (sub, sup) = check_both(up, &g, 1.0, 0.5, &path(), &cfg).unwrap();
        assert_eq!(sub.verdict, Verdict::Violation);
        assert_ne!(sup.verdict, Verdict::Violation);
        let (sub, sup) = check_both(down, &g, 1.0, 0.5, &path(), &cfg).unwrap();
        assert_ne!(sub.verdict, Verdict::Violation);
        assert_eq!(sup.verdict, Verdict::Violation);
    }

    #[test]
    fn verdict_reduction() {
        use Verdict::*;
        assert_eq!(Vacuous.combine(Pass), Pass);
        assert_eq!(Pass.combine(Violation), Violation);
        assert_eq!(Vacuous.combine(Vacuous), Vacuous);
    }
}
