//! Closed-form solutions with their generators and derivatives.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::calculus::{fd_convergence_ratios, ito_residual_rms, Provenance, SmoothFunctional};
use crate::error::{Error, Result};
use crate::measures::{first_order_lattice, simulate_path, ControlPair, ControlProcess, Refinement};
use crate::pathspace::{fmt_f64, AdaptedFunctional, DiscretePath, TimeGrid};
use crate::rng::{self, NoiseKind};
use crate::solvers::{FirstOrderProblem, FirstOrderTerminal, SemilinearProblem};
use crate::viscosity::{check_both, check_generator, classical_residual, CheckConfig, Generator, Side, Verdict};

/// Horizon shared by the registered oracles.
pub const HORIZON: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    ClassicalSmooth,
    ViscosityOnly,
    NonSmoothCounterexample,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::ClassicalSmooth => "classical-smooth",
            Classification::ViscosityOnly => "viscosity-only",
            Classification::NonSmoothCounterexample => "non-smooth-counterexample",
        })
    }
}

/// Path family used for the Itô residual of an oracle: Rademacher noise,
/// unit diffusion, constant drift, on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItoProbe {
    pub drift: f64,
    pub horizon: f64,
}

type Scalar = Arc<dyn Fn(f64, &DiscretePath) -> f64 + Send + Sync>;

/// Scalar functional with closed-form derivatives.
#[derive(Clone)]
pub struct Analytic {
    value: Scalar,
    time: Scalar,
    gradient: Scalar,
    hessian: Scalar,
}

impl Analytic {
    pub fn new(
        value: impl Fn(f64, &DiscretePath) -> f64 + Send + Sync + 'static,
        time: impl Fn(f64, &DiscretePath) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(f64, &DiscretePath) -> f64 + Send + Sync + 'static,
        hessian: impl Fn(f64, &DiscretePath) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { value: Arc::new(value), time: Arc::new(time), gradient: Arc::new(gradient), hessian: Arc::new(hessian) }
    }

    /// Same functional with `∂_ω` shifted by `delta` (a corrupted copy).
    pub fn with_gradient_shift(&self, delta: f64) -> Self {
        let g = self.gradient.clone();
        Self { gradient: Arc::new(move |t, p| g(t, p) + delta), ..self.clone() }
    }

    /// `u + c(T − t + k)`, which changes `Lu` by `+c`.
    pub fn with_time_bump(&self, c: f64, horizon: f64, k: f64) -> Self {
        let v = self.value.clone();
        let d = self.time.clone();
        Self {
            value: Arc::new(move |t, p| v(t, p) + c * (horizon - t + k)),
            time: Arc::new(move |t, p| d(t, p) - c),
            ..self.clone()
        }
    }
}

impl AdaptedFunctional for Analytic {
    fn eval(&self, t: f64, path: &DiscretePath) -> f64 {
        (self.value)(t, path)
    }
}

impl SmoothFunctional for Analytic {
    fn dim(&self) -> usize {
        1
    }

    fn time_derivative(&self, t: f64, path: &DiscretePath) -> f64 {
        (self.time)(t, path)
    }

    fn space_gradient(&self, t: f64, path: &DiscretePath) -> Vec<f64> {
        vec![(self.gradient)(t, path)]
    }

    fn space_hessian(&self, t: f64, path: &DiscretePath) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, (self.hessian)(t, path))
    }

    fn provenance(&self) -> Provenance {
        Provenance::Analytic
    }
}

/// A registered closed-form solution.
#[derive(Clone)]
pub struct OracleEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub horizon: f64,
    pub u: Arc<dyn AdaptedFunctional>,
    /// Derivative assignment used by the classical and Itô checks.
    pub smooth: Option<Analytic>,
    pub generator: Generator,
    pub terminal: Arc<dyn AdaptedFunctional>,
    pub classification: Classification,
    pub probe: ItoProbe,
    /// Sampled points must satisfy `ω_t < ω̄_t` (closed form stated off the diagonal).
    pub off_diagonal: bool,
}

impl fmt::Debug for OracleEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OracleEntry").field("name", &self.name).field("classification", &self.classification).finish()
    }
}

impl OracleEntry {
    /// The oracle as a semilinear problem; only heat-equation oracles qualify.
    pub fn semilinear_problem(&self) -> Result<SemilinearProblem> {
        if self.generator.name() != "heat" {
            return Err(Error::Config(format!("{} is not a heat-equation oracle", self.name)));
        }
        Ok(SemilinearProblem::heat(self.name, 1, self.horizon, self.terminal.clone()))
    }

    /// The oracle as a first-order control problem; only `MAXDRIFT` qualifies.
    pub fn first_order_problem(&self, l: f64, refinement: Refinement) -> Result<FirstOrderProblem> {
        if self.name != "MAXDRIFT" {
            return Err(Error::Config(format!("{} has no first-order control representation", self.name)));
        }
        Ok(FirstOrderProblem {
            name: self.name.to_string(),
            horizon: self.horizon,
            lattice: first_order_lattice(l, 1, refinement)?,
            running_cost: Arc::new(|_, _| 1.0),
            terminal: FirstOrderTerminal::XMax(Arc::new(|x, m| 2.0 * m - x)),
        })
    }
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `2Φ(z) − 1`.
fn two_cdf_minus_one(z: f64) -> f64 {
    libm::erf(z / std::f64::consts::SQRT_2)
}

/// `ψ(z) = z(2Φ(z) − 1) + 2φ(z)`; arguments beyond 8 use the asymptote `z`.
pub fn psi(z: f64) -> f64 {
    if z > 8.0 {
        return z;
    }
    z * two_cdf_minus_one(z) + 2.0 * std_normal_pdf(z)
}

/// Value and partial derivatives of `v(t, x, y) = x + √(T−t) ψ((y − x)/√(T−t))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunmaxJet {
    pub value: f64,
    pub dt: f64,
    pub dx: f64,
    pub dy: f64,
    pub dxx: f64,
    pub dxy: f64,
    pub dyy: f64,
}

/// Running-maximum heat solution; rejects `x > y` and needs `t < T`.
pub fn runmax_jet(t: f64, x: f64, y: f64, horizon: f64) -> Result<RunmaxJet> {
    if x > y + 1e-12 {
        return Err(Error::Domain(format!("running maximum {y} below the current value {x}")));
    }
    if !(t < horizon) {
        return Err(Error::Domain(format!("t = {t} must precede the horizon {horizon}")));
    }
    let s = (horizon - t).sqrt();
    let z = ((y - x) / s).max(0.0);
    let p1 = two_cdf_minus_one(z);
    let p2 = 2.0 * std_normal_pdf(z);
    Ok(RunmaxJet {
        value: x + s * psi(z),
        dt: -0.5 * p2 / s,
        dx: 1.0 - p1,
        dy: p1,
        dxx: p2 / s,
        dxy: -p2 / s,
        dyy: p2 / s,
    })
}

fn runmax_u(horizon: f64) -> impl Fn(f64, &DiscretePath) -> f64 + Send + Sync + Clone {
    move |t, p| {
        if t >= horizon {
            return p.coord_max(t, 0);
        }
        runmax_jet(t, p.x(t), p.coord_max(t, 0), horizon).map_or(f64::NAN, |j| j.value)
    }
}

fn on_diagonal(t: f64, p: &DiscretePath) -> bool {
    p.coord_max(t, 0) - p.x(t) <= 1e-12
}

fn heat_integral(horizon: f64) -> OracleEntry {
    let u = move |t: f64, p: &DiscretePath| p.coord_integral(t, 0) + (horizon - t) * p.x(t);
    OracleEntry {
        name: "HEAT-INTEGRAL",
        description: "u = ∫ω ds + (T − t) ω_t for the heat equation",
        horizon,
        u: Arc::new(u),
        smooth: Some(Analytic::new(u, |_, _| 0.0, move |t, _| horizon - t, |_, _| 0.0)),
        generator: Generator::heat(),
        terminal: Arc::new(move |t: f64, p: &DiscretePath| p.coord_integral(t.min(horizon), 0)),
        classification: Classification::ClassicalSmooth,
        probe: ItoProbe { drift: 0.0, horizon },
        off_diagonal: false,
    }
}

fn heat_runmax(horizon: f64) -> OracleEntry {
    let u = runmax_u(horizon);
    let jet = move |t: f64, p: &DiscretePath| runmax_jet(t, p.x(t), p.coord_max(t, 0), horizon);
    // On the diagonal the vertical second difference equals half the
    // one-sided value `ψ''(0)/s`; that set is time-null along paths.
    let hess = move |t: f64, p: &DiscretePath| {
        jet(t, p).map_or(f64::NAN, |j| if on_diagonal(t, p) { 0.5 * j.dxx } else { j.dxx })
    };
    OracleEntry {
        name: "HEAT-RUNMAX",
        description: "u = v(t, ω_t, ω̄_t) with v = x + √(T−t) ψ((y − x)/√(T−t)) for the heat equation",
        horizon,
        u: Arc::new(u.clone()),
        smooth: Some(Analytic::new(
            u,
            move |t, p| jet(t, p).map_or(f64::NAN, |j| j.dt),
            move |t, p| jet(t, p).map_or(f64::NAN, |j| j.dx),
            hess,
        )),
        generator: Generator::heat(),
        terminal: Arc::new(|t: f64, p: &DiscretePath| p.coord_max(t, 0)),
        classification: Classification::ClassicalSmooth,
        probe: ItoProbe { drift: 0.0, horizon: 0.5 * horizon },
        off_diagonal: true,
    }
}

fn frozen(horizon: f64) -> OracleEntry {
    let u = |t: f64, p: &DiscretePath| p.x(t).tanh();
    OracleEntry {
        name: "FROZEN",
        description: "u = tanh(ω_t) for −∂_t u = 0",
        horizon,
        u: Arc::new(u),
        smooth: Some(Analytic::new(
            u,
            |_, _| 0.0,
            |t, p| 1.0 - p.x(t).tanh().powi(2),
            |t, p| {
                let th = p.x(t).tanh();
                -2.0 * th * (1.0 - th * th)
            },
        )),
        generator: Generator::zero(),
        terminal: Arc::new(u),
        classification: Classification::ClassicalSmooth,
        probe: ItoProbe { drift: 0.0, horizon },
        off_diagonal: false,
    }
}

fn maxdrift(horizon: f64) -> OracleEntry {
    let u = |t: f64, p: &DiscretePath| 2.0 * p.coord_max(t, 0) - p.x(t);
    OracleEntry {
        name: "MAXDRIFT",
        description: "u = 2ω̄_t − ω_t for −∂_t u − |∂_ω u| + 1 = 0",
        horizon,
        u: Arc::new(u),
        smooth: Some(Analytic::new(u, |_, _| 0.0, |_, _| -1.0, |_, _| 0.0)),
        generator: Generator::abs_gradient_minus_one(),
        terminal: Arc::new(u),
        classification: Classification::ViscosityOnly,
        probe: ItoProbe { drift: 0.0, horizon },
        off_diagonal: false,
    }
}

/// Time of the kink in `KINK`.
pub fn kink_time(horizon: f64) -> f64 {
    0.5 * horizon
}

fn kink(horizon: f64) -> OracleEntry {
    let t0 = kink_time(horizon);
    let u = move |t: f64, p: &DiscretePath| p.x(t.min(t0));
    OracleEntry {
        name: "KINK",
        description: "u = ω_{t∧t₀} with t₀ = T/2 for the heat equation",
        horizon,
        u: Arc::new(u),
        smooth: Some(Analytic::new(u, |_, _| 0.0, move |t, _| if t < t0 { 1.0 } else { 0.0 }, |_, _| 0.0)),
        generator: Generator::heat(),
        terminal: Arc::new(u),
        classification: Classification::ViscosityOnly,
        probe: ItoProbe { drift: 0.0, horizon },
        off_diagonal: false,
    }
}

fn runmax_nonsmooth(horizon: f64) -> OracleEntry {
    let u = |t: f64, p: &DiscretePath| p.coord_max(t, 0);
    // Central vertical difference of the running maximum: ½ on the diagonal.
    let grad = |t: f64, p: &DiscretePath| if on_diagonal(t, p) { 0.5 } else { 0.0 };
    OracleEntry {
        name: "RUNMAX-NONSMOOTH",
        description: "u = ω̄_t, not vertically differentiable on the diagonal",
        horizon,
        u: Arc::new(u),
        smooth: Some(Analytic::new(u, |_, _| 0.0, grad, |_, _| 0.0)),
        generator: Generator::heat(),
        terminal: Arc::new(u),
        classification: Classification::NonSmoothCounterexample,
        probe: ItoProbe { drift: 0.0, horizon },
        off_diagonal: false,
    }
}

fn quadratic(horizon: f64) -> OracleEntry {
    let u = move |t: f64, p: &DiscretePath| p.x(t).powi(2) + (horizon - t);
    OracleEntry {
        name: "QUADRATIC",
        description: "u = ω_t² + (T − t) for the heat equation",
        horizon,
        u: Arc::new(u),
        smooth: Some(Analytic::new(u, |_, _| -1.0, |t, p| 2.0 * p.x(t), |_, _| 2.0)),
        generator: Generator::heat(),
        terminal: Arc::new(|t: f64, p: &DiscretePath| p.x(t).powi(2)),
        classification: Classification::ClassicalSmooth,
        probe: ItoProbe { drift: 0.5, horizon },
        off_diagonal: false,
    }
}

/// Every registered oracle, in a fixed order.
pub fn registry() -> Vec<OracleEntry> {
    let t = HORIZON;
    vec![heat_integral(t), heat_runmax(t), frozen(t), maxdrift(t), kink(t), runmax_nonsmooth(t), quadratic(t)]
}

pub fn find(name: &str) -> Result<OracleEntry> {
    registry()
        .into_iter()
        .find(|e| e.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Config(format!("unknown oracle {name:?}")))
}

/// Points `(t, ω_{·∧t})` on simulated Brownian prefixes with `t` in `[0.05T, 0.9T]`.
pub fn sample_points(e: &OracleEntry, count: usize, seed: u64) -> Result<Vec<(f64, DiscretePath)>> {
    let grid = TimeGrid::uniform(0.0, e.horizon, 64)?;
    let c = ControlProcess::constant(grid, ControlPair::scalar(1, &[0.0], 1.0)?, 1.0)?;
    let mut r = rng::stream(seed, 0x5eed);
    let mut out = Vec::with_capacity(count);
    let mut index = 0u64;
    while out.len() < count {
        let path = simulate_path(&c, index, seed, NoiseKind::Gaussian);
        index += 1;
        let t = e.horizon * rng::uniform_in(&mut r, 0.05, 0.9);
        let prefix = path.stopped_at(t);
        if e.off_diagonal && prefix.coord_max(t, 0) - prefix.x(t) < 0.05 {
            continue;
        }
        out.push((t, prefix));
    }
    Ok(out)
}

/// Settings of the registry checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    pub residual: f64,
    pub residual_points: usize,
    pub generator_samples: usize,
    pub viscosity_points: usize,
    pub viscosity_l: f64,
    pub ito_paths: usize,
    pub ito_steps: [usize; 3],
    pub ito_ratio: (f64, f64),
    pub fd_time_ratio: (f64, f64),
    pub fd_space_ratio: (f64, f64),
    /// Lower bound on Itô residuals that must not vanish.
    pub nonsmooth_floor: f64,
    pub boundary: f64,
    pub seed: u64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            residual: 1e-6,
            residual_points: 50,
            generator_samples: 100,
            viscosity_points: 10,
            viscosity_l: 1.0,
            ito_paths: 200,
            ito_steps: [128, 256, 512],
            ito_ratio: (1.5, 3.0),
            fd_time_ratio: (1.5, 3.0),
            fd_space_ratio: (3.0, 5.0),
            nonsmooth_floor: 0.2,
            boundary: 1e-8,
            seed: 2024,
        }
    }
}

/// One line of the verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub oracle: String,
    pub check: String,
    pub points: usize,
    pub max_defect: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub rows: Vec<CheckRow>,
}

impl VerifyReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["oracle", "check", "points", "max_defect", "pass"])?;
        for r in &self.rows {
            wr.write_record([r.oracle.clone(), r.check.clone(), r.points.to_string(), fmt_f64(r.max_defect), r.pass.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// RMS Itô residuals on the oracle's probe for each step count.
pub fn ito_residuals(f: &dyn SmoothFunctional, probe: ItoProbe, steps: &[usize], n: usize, seed: u64) -> Result<Vec<f64>> {
    steps
        .iter()
        .map(|&k| {
            let grid = TimeGrid::uniform(0.0, probe.horizon, k)?;
            let c = ControlProcess::constant(grid, ControlPair::scalar(1, &[probe.drift], 1.0)?, 1.0f64.max(probe.drift.abs()))?;
            ito_residual_rms(f, &c, n, seed, NoiseKind::Rademacher)
        })
        .collect()
}

fn in_range(v: f64, r: (f64, f64)) -> bool {
    v >= r.0 && v <= r.1
}

/// Worst violation of the viscosity inequality over member candidates.
fn viscosity_rows(e: &OracleEntry, u: Arc<dyn AdaptedFunctional>, tol: &Tolerances, label: &str) -> Result<[CheckRow; 2]> {
    let pts = sample_points(e, tol.viscosity_points, tol.seed ^ 0x7)?;
    let cfg = CheckConfig::new(e.horizon);
    let (mut sub_v, mut sup_v) = (Verdict::Vacuous, Verdict::Vacuous);
    let (mut sub_d, mut sup_d) = (0.0f64, 0.0f64);
    for (t, p) in &pts {
        let (sub, sup) = check_both(u.clone(), &e.generator, tol.viscosity_l, *t, p, &cfg)?;
        sub_v = sub_v.combine(sub.verdict);
        sup_v = sup_v.combine(sup.verdict);
        sub_d = sub.members().fold(sub_d, |m, r| m.max(r.operator));
        sup_d = sup.members().fold(sup_d, |m, r| m.max(-r.operator));
    }
    let row = |side: Side, v: Verdict, d: f64| CheckRow {
        oracle: e.name.to_string(),
        check: format!("{label}-{side}"),
        points: pts.len(),
        max_defect: d.max(0.0),
        pass: v != Verdict::Violation,
    };
    Ok([row(Side::Sub, sub_v, sub_d), row(Side::Super, sup_v, sup_d)])
}

/// Runs the classification checks of one oracle.
pub fn verify_entry(e: &OracleEntry, tol: &Tolerances) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let row = |check: &str, points: usize, max_defect: f64, pass: bool| CheckRow {
        oracle: e.name.to_string(),
        check: check.to_string(),
        points,
        max_defect,
        pass,
    };
    let gpts = sample_points(e, 20, tol.seed ^ 0x3)?;
    let g = check_generator(&e.generator, &gpts, tol.generator_samples, tol.seed);
    rows.push(row("generator", g.samples, 0.0, g.ok()));
    let smooth = e.smooth.as_ref().ok_or_else(|| Error::Config(format!("{} has no derivative assignment", e.name)))?;
    match e.classification {
        Classification::ClassicalSmooth => {
            let pts = sample_points(e, tol.residual_points, tol.seed ^ 0x1)?;
            let res = classical_residual(smooth, &e.generator, &pts, tol.residual)?;
            rows.push(row("classical-residual", pts.len(), res.max_abs, res.solution()));
            let (mut worst_t, mut worst_s, mut ok) = (f64::NAN, f64::NAN, true);
            for (t, p) in pts.iter().take(10) {
                let r = fd_convergence_ratios(smooth, *t, p, 1e-3, 1e-3, e.horizon)?;
                if let Some(v) = r.time {
                    ok &= in_range(v, tol.fd_time_ratio);
                    worst_t = v;
                }
                if let Some(v) = r.space {
                    ok &= in_range(v, tol.fd_space_ratio);
                    worst_s = v;
                }
            }
            let shown = if worst_t.is_nan() { worst_s } else { worst_t };
            rows.push(row("fd-ratio", 10, if shown.is_nan() { 0.0 } else { shown }, ok));
            let ito = ito_residuals(smooth, e.probe, &tol.ito_steps, tol.ito_paths, tol.seed)?;
            let r1 = ito[0] / ito[1];
            let r2 = ito[1] / ito[2];
            let exact = ito.iter().all(|&v| v < 1e-12);
            rows.push(row("ito-ratio", tol.ito_paths, ito[2], exact || (in_range(r1, tol.ito_ratio) && in_range(r2, tol.ito_ratio))));
            rows.extend(viscosity_rows(e, e.u.clone(), tol, "viscosity")?);
        }
        Classification::ViscosityOnly => {
            rows.extend(viscosity_rows(e, e.u.clone(), tol, "viscosity")?);
            let floor = constant_derivative_floor(e, tol)?;
            rows.push(row("smoothness-fails", tol.ito_paths, floor, floor >= tol.nonsmooth_floor));
        }
        Classification::NonSmoothCounterexample => {
            let ito = ito_residuals(smooth, e.probe, &tol.ito_steps, tol.ito_paths, tol.seed)?;
            let low = ito.iter().cloned().fold(f64::INFINITY, f64::min);
            rows.push(row("ito-bounded-below", tol.ito_paths, low, low >= tol.nonsmooth_floor));
        }
    }
    if e.name == "HEAT-RUNMAX" {
        let mut r = rng::stream(tol.seed, 0xb0);
        let mut worst = 0.0f64;
        for _ in 0..tol.residual_points {
            let t = e.horizon * rng::uniform_in(&mut r, 0.0, 0.99);
            let x = rng::uniform_in(&mut r, -2.0, 2.0);
            worst = worst.max(runmax_jet(t, x, x, e.horizon)?.dy.abs());
        }
        rows.push(row("boundary-dy", tol.residual_points, worst, worst <= tol.boundary));
    }
    if e.name == "KINK" {
        let probe = ItoProbe { drift: 0.0, horizon: e.horizon };
        let proper = ito_residuals(smooth, probe, &tol.ito_steps[..1], tol.ito_paths, tol.seed)?[0];
        let naive = Analytic { gradient: Arc::new(|_, _| 1.0), ..smooth.clone() };
        let spike = ito_residuals(&naive, probe, &tol.ito_steps[..1], tol.ito_paths, tol.seed)?[0];
        rows.push(row("kink-derivative", tol.ito_paths, proper, proper < 1e-9 && spike >= tol.nonsmooth_floor));
    }
    Ok(rows)
}

/// Smallest RMS Itô residual over constant assignments `∂_ω u ≡ c`
/// (`∂_t u = ∂²u = 0`), `c ∈ {−2, −1.75, …, 2}`.
pub fn constant_derivative_floor(e: &OracleEntry, tol: &Tolerances) -> Result<f64> {
    let mut best = f64::INFINITY;
    for i in 0..=16 {
        let c = -2.0 + 0.25 * i as f64;
        let u = e.u.clone();
        let f = Analytic::new(move |t, p| u.eval(t, p), |_, _| 0.0, move |_, _| c, |_, _| 0.0);
        let r = ito_residuals(&f, e.probe, &tol.ito_steps[2..], tol.ito_paths, tol.seed)?[0];
        best = best.min(r);
    }
    Ok(best)
}

/// Checks every registered oracle.
pub fn verify_all(tol: &Tolerances) -> Result<VerifyReport> {
    let mut rows = Vec::new();
    for e in registry() {
        rows.extend(verify_entry(&e, tol)?);
    }
    Ok(VerifyReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> Tolerances {
        Tolerances { viscosity_points: 2, residual_points: 10, ito_paths: 50, ..Tolerances::default() }
    }

    #[test]
    fn closed_form_values() {
        let e = find("heat-runmax").unwrap();
        let origin = DiscretePath::at_origin(0.0, 1);
        assert!((e.u.eval(0.0, &origin) - 2.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        let g = TimeGrid::uniform(0.0, 0.5, 1).unwrap();
        let w = DiscretePath::scalar(&g, &[0.0, 1.0]).unwrap();
        assert!((find("HEAT-INTEGRAL").unwrap().u.eval(0.5, &w) - 0.75).abs() < 1e-12);
        assert_eq!(find("MAXDRIFT").unwrap().u.eval(0.0, &origin), 0.0);
        assert!(runmax_jet(0.5, 1.0, 0.5, 1.0).is_err());
        assert!(find("nope").is_err());
    }

    #[test]
    fn psi_identities() {
        for z in [0.0, 0.3, 1.7, 5.0] {
            let h = 1e-4;
            let d = (psi(z + h) - psi(z - h)) / (2.0 * h);
            assert!((d - two_cdf_minus_one(z)).abs() < 1e-7);
        }
        assert!((psi(9.0) - 9.0).abs() < 1e-15);
    }

    #[test]
    fn heat_integral_verifies() {
        let rows = verify_entry(&find("HEAT-INTEGRAL").unwrap(), &quick()).unwrap();
        assert!(rows.iter().all(|r| r.pass), "{rows:?}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut e = find("HEAT-INTEGRAL").unwrap();
        e.smooth = e.smooth.map(|s| s.with_gradient_shift(0.1));
        let rows = verify_entry(&e, &quick()).unwrap();
        assert!(rows.iter().any(|r| r.check == "ito-ratio" && !r.pass), "{rows:?}");
    }

    #[test]
    fn report_csv_header() {
        let rep = VerifyReport {
            rows: vec![CheckRow { oracle: "X".into(), check: "c".into(), points: 3, max_defect: 0.5, pass: true }],
        };
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "oracle,check,points,max_defect,pass\nX,c,3,0.5,true\n");
    }
}
