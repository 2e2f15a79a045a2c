//! Constructive schemes: semilinear BSDE regression, the uncertain-volatility
//! HJB lattice, first-order dynamic programming and the exit-skeleton
//! Perron construction, plus the DPP, stability and comparison probes.
//!
//! The Monte Carlo engine simulates paths on a fine grid and regresses on a
//! small set of coarse dates; the generator is integrated on the coarse
//! dates. Regressions use polynomials of degree ≤ 2 in the standardised
//! summary statistics `(ω_t, ω̄_t, ∫ω)` of every coordinate.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::calculus::SmoothFunctional;
use crate::error::{domain, Error, Result};
use crate::expectation::{mean, stderr};
use crate::measures::ControlLattice;
use crate::pathspace::{concat, diff, norm, AdaptedFunctional, DiscretePath, HittingTimeSpec, PathSummary};
use crate::rng::{NoiseKind, NoiseStream};
use crate::snell::{Tree, TreeKernel, TreeSpec};
use crate::viscosity::{classical_residual, Generator, Side};

/// Longest horizon, in steps, handled by full tree enumeration.
pub const EXACT_MAX_STEPS: usize = 12;

const CHUNK: usize = 4096;

/// Generator part `F(t, ω, y, z)`; `ω` enters through its summary statistics.
pub type Driver = Arc<dyn Fn(f64, &PathSummary, f64, &[f64]) -> f64 + Send + Sync>;

/// HJB generator part `F(t, ω, y, z, k)` for control index `k`.
pub type ControlDriver = Arc<dyn Fn(f64, &PathSummary, f64, &[f64], usize) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Volatility {
    Constant(DMatrix<f64>),
    Path(Arc<dyn Fn(f64, &DiscretePath) -> DMatrix<f64> + Send + Sync>),
}

impl Volatility {
    fn at(&self, t: f64, path: &DiscretePath) -> DMatrix<f64> {
        match self {
            Volatility::Constant(m) => m.clone(),
            Volatility::Path(f) => f(t, path),
        }
    }
}

/// Modulus of continuity `ρ₀` of the data in the path variable.
#[derive(Debug, Clone, PartialEq)]
pub enum Modulus {
    Lipschitz(f64),
    /// Points `(r, ρ(r))` with increasing `r`; linear in between and beyond.
    Table(Vec<(f64, f64)>),
}

impl Modulus {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Modulus::Lipschitz(c) => c * r,
            Modulus::Table(pts) => {
                if pts.is_empty() {
                    return 0.0;
                }
                if pts.len() == 1 || r <= pts[0].0 {
                    return pts[0].1 * if pts[0].0 > 0.0 { r / pts[0].0 } else { 1.0 };
                }
                let j = pts.windows(2).position(|w| r <= w[1].0).unwrap_or(pts.len() - 2);
                let ((r0, v0), (r1, v1)) = (pts[j], pts[j + 1]);
                v0 + (v1 - v0) * (r - r0) / (r1 - r0)
            }
        }
    }
}

/// `−∂_t u − ½σσᵀ:∂²u − F(t, ω, u, σᵀ∂u) = 0` with `u(T, ·) = ξ`.
#[derive(Clone)]
pub struct SemilinearProblem {
    pub name: String,
    pub dim: usize,
    pub horizon: f64,
    pub sigma: Volatility,
    pub driver: Option<Driver>,
    /// Lipschitz constant `L₀` of the driver in `(y, z)`.
    pub driver_lipschitz: f64,
    pub terminal: Arc<dyn AdaptedFunctional>,
    pub c0: f64,
    pub modulus: Modulus,
}

impl SemilinearProblem {
    /// Heat equation (`σ = I`, `F ≡ 0`) with terminal data `ξ`.
    pub fn heat(name: impl Into<String>, dim: usize, horizon: f64, terminal: Arc<dyn AdaptedFunctional>) -> Self {
        Self {
            name: name.into(),
            dim,
            horizon,
            sigma: Volatility::Constant(DMatrix::identity(dim, dim)),
            driver: None,
            driver_lipschitz: 0.0,
            terminal,
            c0: f64::INFINITY,
            modulus: Modulus::Lipschitz(1.0),
        }
    }

    pub fn with_driver(mut self, lipschitz: f64, f: impl Fn(f64, &PathSummary, f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.driver = Some(Arc::new(f));
        self.driver_lipschitz = lipschitz;
        self
    }

    pub fn with_modulus(mut self, m: Modulus) -> Self {
        self.modulus = m;
        self
    }

    pub fn with_bound(mut self, c0: f64) -> Self {
        self.c0 = c0;
        self
    }

    /// Same problem with `F + δ`.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut out = self.clone();
        out.driver = Some(match &self.driver {
            None => Arc::new(move |_, _, _, _| delta),
            Some(f) => {
                let f = f.clone();
                Arc::new(move |t, s, y, z| f(t, s, y, z) + delta)
            }
        });
        out
    }

    /// Checks `σ > 0` and `|ξ|, |F(·, 0, 0)| ≤ C₀` at the given points.
    pub fn validate(&self, points: &[(f64, DiscretePath)]) -> Result<()> {
        for (idx, (t, p)) in points.iter().enumerate() {
            let s = self.sigma.at(*t, p);
            if s.nrows() != self.dim || s.ncols() != self.dim {
                return domain(format!("σ at point {idx} has the wrong shape"));
            }
            let sym = (&s + s.transpose()) * 0.5;
            if sym.cholesky().is_none() {
                return domain(format!("σ is not positive definite at point {idx} (t = {t})"));
            }
            let xi = self.terminal.eval(self.horizon, p);
            let f0 = self.driver.as_ref().map_or(0.0, |f| f(*t, &p.summary(*t), 0.0, &vec![0.0; self.dim]));
            if xi.abs() > self.c0 || f0.abs() > self.c0 {
                return domain(format!("data exceed C₀ = {} at point {idx}", self.c0));
            }
        }
        Ok(())
    }
}

/// Numerical settings shared by the solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub dt: f64,
    pub n: usize,
    pub seed: u64,
    /// Number of regression dates (at most the number of fine steps).
    pub dates: usize,
    pub noise: NoiseKind,
    /// Full tree enumeration instead of Monte Carlo.
    pub exact: bool,
}

impl SolveConfig {
    pub fn new(dt: f64, n: usize, seed: u64) -> Self {
        Self { dt, n, seed, dates: 20, noise: NoiseKind::Gaussian, exact: false }
    }

    pub fn exact(dt: f64) -> Self {
        Self { dt, n: 0, seed: 0, dates: 0, noise: NoiseKind::Rademacher, exact: true }
    }

    pub fn with_dates(mut self, dates: usize) -> Self {
        self.dates = dates;
        self
    }

    fn check(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return domain("dt must be positive");
        }
        if !self.exact && (self.n < 2 || self.dates == 0) {
            return domain("Monte Carlo mode needs n ≥ 2 paths and at least one date");
        }
        Ok(())
    }
}

/// Regression fit on one date.
#[derive(Debug, Clone)]
pub struct DateFit {
    pub t: f64,
    pub dt: f64,
    center: Vec<f64>,
    scale: Vec<f64>,
    active: Vec<usize>,
    /// Columns: conditional mean of `Y`, then `Z_k`.
    coef: DMatrix<f64>,
    pub rank: usize,
}

impl DateFit {
    pub fn basis_size(&self) -> usize {
        let a = self.active.len();
        1 + a + a * (a + 1) / 2
    }

    fn basis(&self, feats: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        let z: Vec<f64> = self.active.iter().map(|&a| (feats[a] - self.center[a]) / self.scale[a]).collect();
        out.extend_from_slice(&z);
        for i in 0..z.len() {
            for j in i..z.len() {
                out.push(z[i] * z[j]);
            }
        }
    }

    /// `(Ê[Y_next | S], Ẑ)` at the summary features.
    fn predict(&self, feats: &[f64], buf: &mut Vec<f64>) -> (f64, Vec<f64>) {
        self.basis(feats, buf);
        let cols = self.coef.ncols();
        let mut out = vec![0.0; cols];
        for (c, o) in out.iter_mut().enumerate() {
            *o = buf.iter().enumerate().map(|(r, b)| b * self.coef[(r, c)]).sum();
        }
        let y = out[0];
        (y, out[1..].iter().map(|v| v / self.dt).collect())
    }
}

fn features(s: &PathSummary) -> Vec<f64> {
    let mut f = Vec::with_capacity(3 * s.x.len());
    for k in 0..s.x.len() {
        f.extend([s.x[k], s.max[k], s.integral[k]]);
    }
    f
}

fn summary_from(t: f64, feats: &[f64]) -> PathSummary {
    let d = feats.len() / 3;
    PathSummary {
        t,
        x: (0..d).map(|k| feats[3 * k]).collect(),
        max: (0..d).map(|k| feats[3 * k + 1]).collect(),
        integral: (0..d).map(|k| feats[3 * k + 2]).collect(),
    }
}

/// Regression-based value function `u(t_i, ·)` on the coarse dates.
#[derive(Clone)]
pub struct ValueField {
    fits: Vec<DateFit>,
    driver: Option<Driver>,
    horizon: f64,
}

impl ValueField {
    pub fn dates(&self) -> Vec<f64> {
        self.fits.iter().map(|f| f.t).collect()
    }

    /// `u(t_i, ω)` for the `i`-th regression date.
    pub fn eval(&self, i: usize, s: &PathSummary) -> f64 {
        let fit = &self.fits[i];
        let mut buf = Vec::new();
        let (c, z) = fit.predict(&features(s), &mut buf);
        c + fit.dt * self.driver.as_ref().map_or(0.0, |f| f(fit.t, s, c, &z))
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
}

impl std::fmt::Debug for ValueField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ValueField").field("dates", &self.dates()).finish()
    }
}

/// Result of a solver run.
#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub scheme: &'static str,
    pub problem: String,
    pub dt: f64,
    pub npaths: usize,
    pub seed: u64,
    pub value: f64,
    pub stderr: f64,
    pub runtime_ms: u64,
    pub basis_size: usize,
    pub min_rank: usize,
    /// Maximising control at the anchor (HJB).
    pub control: Option<String>,
    pub notes: Vec<String>,
    pub field: Option<ValueField>,
}

impl SolverOutput {
    fn new(scheme: &'static str, problem: &str, dt: f64, cfg: &SolveConfig) -> Self {
        Self {
            scheme,
            problem: problem.to_string(),
            dt,
            npaths: if cfg.exact { 0 } else { cfg.n },
            seed: cfg.seed,
            value: f64::NAN,
            stderr: 0.0,
            runtime_ms: 0,
            basis_size: 0,
            min_rank: 0,
            control: None,
            notes: Vec::new(),
            field: None,
        }
    }
}

#[derive(Clone, Copy)]
enum View {
    Raw,
    Skeleton(f64),
}

struct PathRecord {
    feats: Vec<f64>,
    dw: Vec<f64>,
    xi: f64,
    stop: usize,
}

struct Forward {
    dates: Vec<f64>,
    d: usize,
    records: Vec<PathRecord>,
    fine_dt: f64,
}

impl Forward {
    fn feats(&self, j: usize, i: usize) -> &[f64] {
        let w = 3 * self.d;
        &self.records[j].feats[i * w..(i + 1) * w]
    }

    fn dw(&self, j: usize, i: usize) -> &[f64] {
        &self.records[j].dw[i * self.d..(i + 1) * self.d]
    }
}

fn fine_steps(span: f64, dt: f64) -> usize {
    ((span / dt) - 1e-9).ceil().max(1.0) as usize
}

fn simulate_forward(
    sigma: &Volatility,
    terminal: &dyn AdaptedFunctional,
    horizon: f64,
    t0: f64,
    prefix: &DiscretePath,
    cfg: &SolveConfig,
    view: View,
    stop_at: Option<&HittingTimeSpec>,
) -> Result<Forward> {
    let d = prefix.dim();
    let n_fine = fine_steps(horizon - t0, cfg.dt);
    let m = cfg.dates.min(n_fine);
    let h = (horizon - t0) / n_fine as f64;
    let time = |s: usize| if s == n_fine { horizon } else { t0 + s as f64 * h };
    let date_idx: Vec<usize> = (0..=m).map(|i| i * n_fine / m).collect();
    let dates: Vec<f64> = date_idx.iter().map(|&s| time(s)).collect();
    let base = prefix.stopped_at(t0);
    let s0 = base.summary(t0);
    if let Volatility::Constant(s) = sigma {
        if s.nrows() != d || (s + s.transpose()).cholesky().is_none() {
            return domain("σ must be a positive definite d×d matrix");
        }
    }
    let sq = h.sqrt();
    let records: Vec<PathRecord> = (0..cfg.n as u64)
        .into_par_iter()
        .map(|j| {
            let mut noise = vec![0.0; n_fine * d];
            NoiseStream::new(cfg.seed, j, cfg.noise).fill(&mut noise);
            let mut path = base.clone();
            let (mut x, mut mx, mut integ) = (s0.x.clone(), s0.max.clone(), s0.integral.clone());
            let mut feats = Vec::with_capacity((m + 1) * 3 * d);
            feats.extend(features(&s0));
            let mut dw_rec = Vec::with_capacity(m * d);
            let mut w_acc = vec![0.0; d];
            let mut next_date = 1;
            let mut dw = vec![0.0; d];
            for s in 0..n_fine {
                let sig = sigma.at(time(s), &path);
                for k in 0..d {
                    dw[k] = noise[s * d + k] * sq;
                    w_acc[k] += dw[k];
                }
                for k in 0..d {
                    let dx: f64 = (0..d).map(|c| sig[(k, c)] * dw[c]).sum();
                    let old = x[k];
                    x[k] += dx;
                    integ[k] += 0.5 * h * (old + x[k]);
                    mx[k] = mx[k].max(x[k]);
                }
                path.push_knot(time(s + 1), &x);
                if s + 1 == date_idx[next_date] {
                    for k in 0..d {
                        feats.extend([x[k], mx[k], integ[k]]);
                    }
                    dw_rec.extend_from_slice(&w_acc);
                    w_acc.iter_mut().for_each(|v| *v = 0.0);
                    next_date += 1;
                }
            }
            let xi = match view {
                View::Raw => terminal.eval(horizon, &path),
                View::Skeleton(eps) => {
                    for i in 1..=m {
                        let sk = exit_skeleton(&path.stopped_at(dates[i]), eps)?;
                        let f = features(&sk.summary(dates[i]));
                        feats[i * 3 * d..(i + 1) * 3 * d].copy_from_slice(&f);
                    }
                    terminal.eval(horizon, &exit_skeleton(&path, eps)?)
                }
            };
            if !xi.is_finite() {
                return Err(Error::Evaluation(format!("terminal value on path {j} is {xi}")));
            }
            let stop = match stop_at.and_then(|spec| spec.first_exit(&path)) {
                Some((k, _)) => {
                    let tau = path.knots()[k];
                    dates.iter().position(|&t| t >= tau - 1e-12).unwrap_or(m)
                }
                None => m,
            };
            Ok(PathRecord { feats, dw: dw_rec, xi, stop })
        })
        .collect::<Result<_>>()?;
    Ok(Forward { dates, d, records, fine_dt: h })
}

/// Least-squares fit of `responses` (rows × cols) on the date-`i` basis.
fn regress(fw: &Forward, i: usize, rows: &[usize], responses: &[Vec<f64>]) -> Result<DateFit> {
    let w = 3 * fw.d;
    let nr = rows.len() as f64;
    let mut center = vec![0.0; w];
    let mut scale = vec![0.0; w];
    for a in 0..w {
        let m = rows.iter().map(|&j| fw.feats(j, i)[a]).sum::<f64>() / nr;
        let v = rows.iter().map(|&j| (fw.feats(j, i)[a] - m).powi(2)).sum::<f64>() / nr;
        center[a] = m;
        scale[a] = v.sqrt();
    }
    let active: Vec<usize> = (0..w).filter(|&a| scale[a] > 1e-12 * (1.0 + center[a].abs())).collect();
    let dt = fw.dates[i + 1] - fw.dates[i];
    let mut fit = DateFit { t: fw.dates[i], dt, center, scale, active, coef: DMatrix::zeros(0, 0), rank: 0 };
    let p = fit.basis_size();
    let cols = responses[0].len();
    let partial: Vec<(DMatrix<f64>, DMatrix<f64>)> = rows
        .par_chunks(CHUNK)
        .zip(responses.par_chunks(CHUNK))
        .map(|(rc, yc)| {
            let mut g = DMatrix::zeros(p, p);
            let mut r = DMatrix::zeros(p, cols);
            let mut phi = Vec::with_capacity(p);
            for (&j, y) in rc.iter().zip(yc) {
                fit.basis(fw.feats(j, i), &mut phi);
                for a in 0..p {
                    for b in a..p {
                        g[(a, b)] += phi[a] * phi[b];
                    }
                    for c in 0..cols {
                        r[(a, c)] += phi[a] * y[c];
                    }
                }
            }
            (g, r)
        })
        .collect();
    let mut g = DMatrix::zeros(p, p);
    let mut r = DMatrix::zeros(p, cols);
    for (pg, pr) in partial {
        g += pg;
        r += pr;
    }
    for a in 0..p {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    let svd = g.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = 1e-10 * smax;
    fit.rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if fit.rank == 0 {
        return Err(Error::Regression(format!("design matrix at t = {} has rank 0 (basis size {p})", fit.t)));
    }
    let pinv = svd.pseudo_inverse(tol).map_err(|e| Error::Regression(e.to_string()))?;
    fit.coef = pinv * r;
    Ok(fit)
}

struct Backward {
    value: f64,
    stderr: f64,
    fits: Vec<DateFit>,
}

/// Explicit backward induction `Y_i = Ê[Y_{i+1}] + Δ F(t_i, S_i, Ê[Y_{i+1}], Ẑ_i)`,
/// where each path enters at its own stop date with the given terminal value.
fn backward(fw: &Forward, driver: Option<&Driver>, terminal: &[f64]) -> Result<Backward> {
    let n = fw.records.len();
    let m = fw.dates.len() - 1;
    let d = fw.d;
    let mut y = terminal.to_vec();
    let mut acc = vec![0.0; n];
    let mut fits: Vec<Option<DateFit>> = vec![None; m];
    for i in (0..m).rev() {
        let rows: Vec<usize> = (0..n).filter(|&j| fw.records[j].stop > i).collect();
        if rows.is_empty() {
            continue;
        }
        let responses: Vec<Vec<f64>> = rows
            .iter()
            .map(|&j| {
                let mut r = Vec::with_capacity(1 + d);
                r.push(y[j]);
                r.extend(fw.dw(j, i).iter().map(|w| y[j] * w));
                r
            })
            .collect();
        let fit = regress(fw, i, &rows, &responses)?;
        let t = fw.dates[i];
        let updates: Vec<(f64, f64)> = rows
            .par_iter()
            .map(|&j| {
                let mut buf = Vec::new();
                let feats = fw.feats(j, i);
                let (c, z) = fit.predict(feats, &mut buf);
                let f = driver.map_or(0.0, |f| f(t, &summary_from(t, feats), c, &z));
                (c + fit.dt * f, fit.dt * f)
            })
            .collect();
        for (&j, (yn, inc)) in rows.iter().zip(updates) {
            y[j] = yn;
            acc[j] += inc;
        }
        fits[i] = Some(fit);
    }
    let pathwise: Vec<f64> = terminal.iter().zip(&acc).map(|(a, b)| a + b).collect();
    let value = mean(&pathwise);
    Ok(Backward { value, stderr: stderr(&pathwise, value), fits: fits.into_iter().flatten().collect() })
}

/// Semilinear solve at `(0, 0)`.
pub fn solve_semilinear(p: &SemilinearProblem, cfg: &SolveConfig) -> Result<SolverOutput> {
    solve_semilinear_at(p, 0.0, &DiscretePath::at_origin(0.0, p.dim), cfg)
}

/// `u(t, ω) = Y^{t,ω}_t`, simulating forward from the prefix `ω_{·∧t}`.
pub fn solve_semilinear_at(p: &SemilinearProblem, t: f64, prefix: &DiscretePath, cfg: &SolveConfig) -> Result<SolverOutput> {
    cfg.check()?;
    if !(t < p.horizon) {
        return domain(format!("anchor time {t} must precede the horizon {}", p.horizon));
    }
    if prefix.dim() != p.dim {
        return domain("anchor path dimension differs from the problem dimension");
    }
    let start = Instant::now();
    if cfg.exact {
        let sig = match &p.sigma {
            Volatility::Constant(s) if p.dim == 1 => s[(0, 0)],
            _ => return domain("exact-tree mode needs a constant scalar σ"),
        };
        let driver: Option<ControlDriver> = p.driver.clone().map(|f| -> ControlDriver { Arc::new(move |t, s, y, z, _| f(t, s, y, z)) });
        let tr = tree_solve(p.horizon, t, prefix, cfg.dt, &[sig], driver.as_ref(), p.terminal.as_ref())?;
        let mut out = SolverOutput::new("semilinear-tree", &p.name, tr.dt, cfg);
        out.value = tr.value;
        out.notes.push(format!("exact trinomial tree, {} steps", tr.steps));
        out.runtime_ms = start.elapsed().as_millis() as u64;
        return Ok(out);
    }
    let fw = simulate_forward(&p.sigma, p.terminal.as_ref(), p.horizon, t, prefix, cfg, View::Raw, None)?;
    let terminal: Vec<f64> = fw.records.iter().map(|r| r.xi).collect();
    let bw = backward(&fw, p.driver.as_ref(), &terminal)?;
    let mut out = SolverOutput::new("semilinear", &p.name, fw.fine_dt, cfg);
    out.value = bw.value;
    out.stderr = bw.stderr;
    out.basis_size = bw.fits.iter().map(DateFit::basis_size).max().unwrap_or(1);
    out.min_rank = bw.fits.iter().map(|f| f.rank).min().unwrap_or(1);
    out.notes.push(format!("{} regression dates, explicit Z", fw.dates.len() - 1));
    out.field = Some(ValueField { fits: bw.fits, driver: p.driver.clone(), horizon: p.horizon });
    out.runtime_ms = start.elapsed().as_millis() as u64;
    Ok(out)
}

/// Restart time for the dynamic programming check.
#[derive(Debug, Clone)]
pub enum Restart {
    Fixed(f64),
    Hitting(HittingTimeSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DppReport {
    pub full: f64,
    pub restarted: f64,
    pub defect: f64,
    pub combined_se: f64,
}

impl DppReport {
    pub fn within(&self, k: f64) -> bool {
        self.defect <= k * self.combined_se + 1e-12
    }
}

/// Solves to the restart time with terminal data `u(τ, ·)` from the full
/// solve and compares `u(0, 0)`. Stopping times are rounded up to the next
/// regression date, which keeps them stopping times.
pub fn dpp_consistency(p: &SemilinearProblem, restart: &Restart, cfg: &SolveConfig) -> Result<DppReport> {
    cfg.check()?;
    if cfg.exact {
        return domain("the DPP check runs in Monte Carlo mode");
    }
    let origin = DiscretePath::at_origin(0.0, p.dim);
    let spec = match restart {
        Restart::Fixed(tau) if !(0.0..=p.horizon).contains(tau) => return domain("τ must lie in [0, T]"),
        Restart::Fixed(_) => None,
        Restart::Hitting(h) => {
            h.validate()?;
            Some(h)
        }
    };
    let mut fw = simulate_forward(&p.sigma, p.terminal.as_ref(), p.horizon, 0.0, &origin, cfg, View::Raw, spec)?;
    let xi: Vec<f64> = fw.records.iter().map(|r| r.xi).collect();
    let m = fw.dates.len() - 1;
    let stops: Vec<usize> = match restart {
        Restart::Fixed(tau) => {
            let i = fw.dates.iter().position(|&t| t >= tau - 1e-12).unwrap_or(m);
            vec![i; fw.records.len()]
        }
        Restart::Hitting(_) => fw.records.iter().map(|r| r.stop).collect(),
    };
    fw.records.iter_mut().for_each(|r| r.stop = m);
    let full = backward(&fw, p.driver.as_ref(), &xi)?;
    let field = ValueField { fits: full.fits, driver: p.driver.clone(), horizon: p.horizon };
    let mut terminal = Vec::with_capacity(xi.len());
    for (j, rec) in fw.records.iter_mut().enumerate() {
        rec.stop = stops[j];
        terminal.push(if stops[j] == m {
            xi[j]
        } else if stops[j] == 0 {
            full.value
        } else {
            field.eval(stops[j], &summary_from(fw.dates[stops[j]], &rec.feats[stops[j] * 3 * fw.d..(stops[j] + 1) * 3 * fw.d]))
        });
    }
    let re = backward(&fw, p.driver.as_ref(), &terminal)?;
    Ok(DppReport {
        full: full.value,
        restarted: re.value,
        defect: (full.value - re.value).abs(),
        combined_se: (full.stderr.powi(2) + re.stderr.powi(2)).sqrt(),
    })
}

/// `−∂_t u − sup_k [½σ_k² ∂²u + F(t, ω, u, σ_k ∂u, k)] = 0` in one dimension.
#[derive(Clone)]
pub struct HjbProblem {
    pub name: String,
    pub horizon: f64,
    pub sigmas: Vec<f64>,
    pub driver: Option<ControlDriver>,
    pub terminal: Arc<dyn AdaptedFunctional>,
}

impl HjbProblem {
    /// Uncertain volatility: `F ≡ 0`, `σ(k) = k`.
    pub fn uncertain_volatility(name: impl Into<String>, horizon: f64, sigmas: Vec<f64>, terminal: Arc<dyn AdaptedFunctional>) -> Self {
        Self { name: name.into(), horizon, sigmas, driver: None, terminal }
    }

    fn check(&self) -> Result<()> {
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s > 0.0)) {
            return domain("every control must give a positive σ");
        }
        Ok(())
    }
}

struct TreeSolution {
    value: f64,
    root_control: usize,
    dt: f64,
    steps: usize,
}

/// Exact backward induction on the trinomial tree with step `σ_max √Δt`.
fn tree_solve(
    horizon: f64,
    t0: f64,
    prefix: &DiscretePath,
    dt: f64,
    sigmas: &[f64],
    driver: Option<&ControlDriver>,
    terminal: &dyn AdaptedFunctional,
) -> Result<TreeSolution> {
    if prefix.dim() != 1 {
        return domain("exact-tree mode is one-dimensional");
    }
    let steps = ((horizon - t0) / dt).round().max(1.0) as usize;
    if steps > EXACT_MAX_STEPS {
        return Err(Error::Resource(format!("{steps} steps exceed the exact-tree cap of {EXACT_MAX_STEPS}")));
    }
    let dt = (horizon - t0) / steps as f64;
    let smax = sigmas.iter().cloned().fold(0.0, f64::max);
    let h = smax * dt.sqrt();
    let ratios: Vec<f64> = sigmas.iter().map(|s| s * s / (smax * smax)).collect();
    let binomial = ratios.iter().all(|&r| r == 1.0);
    let (incs, probs): (Vec<Vec<f64>>, Vec<Vec<f64>>) = if binomial {
        (vec![vec![-h], vec![h]], sigmas.iter().map(|_| vec![0.5, 0.5]).collect())
    } else {
        (
            vec![vec![-h], vec![0.0], vec![h]],
            ratios.iter().map(|&r| vec![0.5 * r, 1.0 - r, 0.5 * r]).collect(),
        )
    };
    let labels = sigmas.iter().map(|s| format!("sigma={s}")).collect();
    let kernel = TreeKernel::new(1, incs.clone(), probs, labels)?;
    let tree = Tree::build(TreeSpec::new(steps, dt).with_origin(t0), kernel, |_, _| false)?;
    let base = prefix.stopped_at(t0);
    let s0 = base.summary(t0);
    // Node states (x, max, integral).
    let mut states: Vec<Vec<[f64; 3]>> = vec![vec![[s0.x[0], s0.max[0], s0.integral[0]]]];
    for k in 1..tree.layers() {
        let layer: Vec<[f64; 3]> = (0..tree.layer_len(k))
            .map(|i| {
                let par = states[k - 1][tree.parent(k, i)];
                let x = s0.x[0] + tree.point(k, i)[0];
                [x, par[1].max(x), par[2] + 0.5 * dt * (par[0] + x)]
            })
            .collect();
        states.push(layer);
    }
    let last = tree.layers() - 1;
    let mut next: Vec<f64> = (0..tree.layer_len(last))
        .into_par_iter()
        .map(|i| {
            let p = concat(&base, t0, &tree.path(last, i))?;
            let v = terminal.eval(horizon, &p);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Evaluation(format!("terminal value on leaf {i} is {v}")))
            }
        })
        .collect::<Result<_>>()?;
    let mut root_control = 0;
    for k in (0..last).rev() {
        let t = tree.spec().time(k);
        let vals: Vec<(f64, usize)> = (0..tree.layer_len(k))
            .into_par_iter()
            .map(|i| {
                let c0 = tree.first_child(k, i).expect("full tree");
                let st = states[k][i];
                let summ = PathSummary { t, x: vec![st[0]], max: vec![st[1]], integral: vec![st[2]] };
                let mut best = (f64::NEG_INFINITY, 0);
                for (m, &s) in sigmas.iter().enumerate() {
                    let p = tree.kernel().probs(m);
                    let e = tree.child_expectation(k, i, m, &next).expect("full tree");
                    let v = match driver {
                        None => e,
                        Some(f) => {
                            let ey: f64 = p.iter().enumerate().map(|(c, q)| q * next[c0 + c] * incs[c][0]).sum();
                            let z = ey / (s * dt);
                            e + dt * f(t, &summ, e, &[z], m)
                        }
                    };
                    if v > best.0 {
                        best = (v, m);
                    }
                }
                best
            })
            .collect();
        if k == 0 {
            root_control = vals[0].1;
        }
        next = vals.into_iter().map(|v| v.0).collect();
    }
    Ok(TreeSolution { value: next[0], root_control, dt, steps })
}

/// HJB solve at `(0, 0)`: exact tree, or regression under the largest
/// volatility with the generator maximised pathwise.
pub fn solve_hjb(p: &HjbProblem, cfg: &SolveConfig) -> Result<SolverOutput> {
    p.check()?;
    cfg.check()?;
    let start = Instant::now();
    let origin = DiscretePath::at_origin(0.0, 1);
    if cfg.exact {
        let tr = tree_solve(p.horizon, 0.0, &origin, cfg.dt, &p.sigmas, p.driver.as_ref(), p.terminal.as_ref())?;
        let mut out = SolverOutput::new("hjb-tree", &p.name, tr.dt, cfg);
        out.value = tr.value;
        out.control = Some(format!("sigma={}", p.sigmas[tr.root_control]));
        out.notes.push(format!("exact trinomial tree, {} steps", tr.steps));
        out.runtime_ms = start.elapsed().as_millis() as u64;
        return Ok(out);
    }
    let sref = p.sigmas.iter().cloned().fold(0.0, f64::max);
    let fw = simulate_forward(
        &Volatility::Constant(DMatrix::from_element(1, 1, sref)),
        p.terminal.as_ref(),
        p.horizon,
        0.0,
        &origin,
        cfg,
        View::Raw,
        None,
    )?;
    let n = fw.records.len();
    let m = fw.dates.len() - 1;
    let mut y: Vec<f64> = fw.records.iter().map(|r| r.xi).collect();
    let terminal = y.clone();
    let mut acc = vec![0.0; n];
    let rows: Vec<usize> = (0..n).collect();
    let mut min_rank = usize::MAX;
    let mut basis = 0;
    let mut root = 0;
    for i in (0..m).rev() {
        let dt = fw.dates[i + 1] - fw.dates[i];
        let responses: Vec<Vec<f64>> = rows
            .iter()
            .map(|&j| {
                let w = fw.dw(j, i)[0];
                vec![y[j], y[j] * w, y[j] * (w * w - dt)]
            })
            .collect();
        let fit = regress(&fw, i, &rows, &responses)?;
        min_rank = min_rank.min(fit.rank);
        basis = basis.max(fit.basis_size());
        let t = fw.dates[i];
        let upd: Vec<(f64, f64, usize)> = rows
            .par_iter()
            .map(|&j| {
                let mut buf = Vec::new();
                let feats = fw.feats(j, i);
                let (c, zz) = fit.predict(feats, &mut buf);
                let du = zz[0] / sref;
                let d2u = zz[1] / (dt * sref * sref);
                let summ = summary_from(t, feats);
                let mut best = (f64::NEG_INFINITY, 0);
                for (k, &s) in p.sigmas.iter().enumerate() {
                    let f = p.driver.as_ref().map_or(0.0, |f| f(t, &summ, c, &[s * du], k));
                    let v = 0.5 * (s * s - sref * sref) * d2u + f;
                    if v > best.0 {
                        best = (v, k);
                    }
                }
                (c + dt * best.0, dt * best.0, best.1)
            })
            .collect();
        for (&j, (yn, inc, k)) in rows.iter().zip(upd) {
            y[j] = yn;
            acc[j] += inc;
            if i == 0 {
                root = k;
            }
        }
    }
    let pathwise: Vec<f64> = terminal.iter().zip(&acc).map(|(a, b)| a + b).collect();
    let mut out = SolverOutput::new("hjb", &p.name, fw.fine_dt, cfg);
    out.value = mean(&pathwise);
    out.stderr = stderr(&pathwise, out.value);
    out.min_rank = min_rank;
    out.basis_size = basis;
    out.control = Some(format!("sigma={}", p.sigmas[root]));
    out.notes.push(format!("reference volatility {sref}, {} regression dates", m));
    out.runtime_ms = start.elapsed().as_millis() as u64;
    Ok(out)
}

/// Terminal data of a first-order problem.
#[derive(Clone)]
pub enum FirstOrderTerminal {
    /// `ξ(ω_T, ω̄_T)` in one dimension; enables memoisation on `(x, max)`.
    XMax(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
    /// General path functional, solved by full enumeration.
    Path(Arc<dyn AdaptedFunctional>),
}

/// `u(t, ω) = sup_α [ξ(ω ⊗ ∫α) − ∫ c(s, α_s) ds]` over piecewise-constant drifts.
#[derive(Clone)]
pub struct FirstOrderProblem {
    pub name: String,
    pub horizon: f64,
    pub lattice: ControlLattice,
    pub running_cost: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
    pub terminal: FirstOrderTerminal,
}

/// First-order dynamic programming at `(t, ω)`; the step is adjusted so
/// that it divides `T − t`.
pub fn solve_first_order(p: &FirstOrderProblem, t: f64, prefix: &DiscretePath, dt: f64, max_nodes: usize) -> Result<SolverOutput> {
    if !(dt > 0.0) || !(t < p.horizon) {
        return domain("need dt > 0 and t < T");
    }
    let start = Instant::now();
    let steps = fine_steps(p.horizon - t, dt);
    let h = (p.horizon - t) / steps as f64;
    let base = prefix.stopped_at(t);
    let drifts = p.lattice.drifts();
    let value = match &p.terminal {
        FirstOrderTerminal::XMax(xi) => {
            if p.lattice.dim() != 1 {
                return domain("memoised first-order mode is one-dimensional");
            }
            let unit = drifts.iter().map(|a| a[0].abs()).filter(|&a| a > 0.0).fold(f64::INFINITY, f64::min) * h;
            let mut moves = Vec::with_capacity(drifts.len());
            for a in &drifts {
                let q = a[0] * h / unit;
                if (q - q.round()).abs() > 1e-9 {
                    return domain("drifts must be integer multiples of the smallest drift");
                }
                moves.push(q.round() as i64);
            }
            let r = moves.iter().map(|m| m.abs()).max().unwrap_or(0);
            let states = ((steps as i64 * r + 1) * (2 * steps as i64 * r + 1)) as usize;
            if states > max_nodes {
                return Err(Error::Resource(format!("{states} lattice states exceed {max_nodes}")));
            }
            let (x0, m0) = (base.x(t), base.coord_max(t, 0));
            // Values indexed by (i, j): x = x0 + i·unit, running max max(m0, x0 + j·unit).
            let width = |k: usize| (k as i64 * r) as usize;
            let idx = |k: usize, i: i64, j: i64| -> usize {
                let w = width(k) as i64;
                ((i + w) * (w + 1) + j) as usize
            };
            let kk = steps;
            let w = width(kk) as i64;
            let mut next = vec![f64::NEG_INFINITY; ((2 * w + 1) * (w + 1)) as usize];
            for i in -w..=w {
                for j in i.max(0)..=w {
                    next[idx(kk, i, j)] = xi(x0 + i as f64 * unit, m0.max(x0 + j as f64 * unit));
                }
            }
            for k in (0..steps).rev() {
                let tk = t + k as f64 * h;
                let costs: Vec<f64> = drifts.iter().map(|a| (p.running_cost)(tk, a.as_slice())).collect();
                let w = width(k) as i64;
                let mut cur = vec![f64::NEG_INFINITY; ((2 * w + 1) * (w + 1)) as usize];
                for i in -w..=w {
                    for j in i.max(0)..=w {
                        let mut best = f64::NEG_INFINITY;
                        for (mv, c) in moves.iter().zip(&costs) {
                            let ni = i + mv;
                            let v = next[idx(k + 1, ni, j.max(ni))] - h * c;
                            best = best.max(v);
                        }
                        cur[idx(k, i, j)] = best;
                    }
                }
                next = cur;
            }
            next[idx(0, 0, 0)]
        }
        FirstOrderTerminal::Path(xi) => {
            let kernel = TreeKernel::first_order(&p.lattice, h)?;
            let mut spec = TreeSpec::new(steps, h).with_origin(t);
            spec.max_nodes = max_nodes;
            let tree = Tree::build(spec, kernel, |_, _| false)?;
            let last = tree.layers() - 1;
            let mut next: Vec<f64> = (0..tree.layer_len(last))
                .into_par_iter()
                .map(|i| Ok(xi.eval(p.horizon, &concat(&base, t, &tree.path(last, i))?)))
                .collect::<Result<_>>()?;
            for k in (0..last).rev() {
                let tk = tree.spec().time(k);
                let costs: Vec<f64> = drifts.iter().map(|a| (p.running_cost)(tk, a.as_slice())).collect();
                next = (0..tree.layer_len(k))
                    .map(|i| {
                        let c0 = tree.first_child(k, i).expect("full tree");
                        (0..drifts.len()).map(|c| next[c0 + c] - h * costs[c]).fold(f64::NEG_INFINITY, f64::max)
                    })
                    .collect();
            }
            next[0]
        }
    };
    let cfg = SolveConfig::exact(h);
    let mut out = SolverOutput::new("first-order", &p.name, h, &cfg);
    out.value = value;
    out.notes.push(format!("{steps} steps, {} drifts", drifts.len()));
    out.runtime_ms = start.elapsed().as_millis() as u64;
    Ok(out)
}

/// Linear interpolation through successive radius-`ε` exits, capped at `T`.
pub fn exit_skeleton(path: &DiscretePath, eps: f64) -> Result<DiscretePath> {
    if !(eps > 0.0) {
        return domain("ε must be positive");
    }
    let d = path.dim();
    let mut knots = vec![path.origin()];
    let mut values = path.point(0).to_vec();
    let mut anchor = 0;
    for i in 1..path.len() {
        if norm(&diff(path.point(i), path.point(anchor))) >= eps {
            knots.push(path.knots()[i]);
            values.extend_from_slice(path.point(i));
            anchor = i;
        }
    }
    if anchor != path.len() - 1 {
        knots.push(path.horizon());
        values.extend_from_slice(path.last_point());
    }
    DiscretePath::new(knots, values, d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerronReport {
    pub eps: f64,
    pub psi: f64,
    pub stderr: f64,
    pub upper: f64,
    pub lower: f64,
    pub gap: f64,
    /// `ρ₀(2ε)(1 + T)`.
    pub half_gap: f64,
}

/// `ψ^ε(0, 0)`: the BSDE value with every path argument replaced by its exit
/// skeleton, and the envelopes `ψ^ε ± ρ₀(2ε)(1 + T)`.
pub fn perron_scheme(p: &SemilinearProblem, eps: f64, cfg: &SolveConfig) -> Result<PerronReport> {
    cfg.check()?;
    match &p.sigma {
        Volatility::Constant(s) if *s == DMatrix::identity(p.dim, p.dim) => {}
        _ => return domain("the Perron construction needs σ = I"),
    }
    if !(eps > 0.0) {
        return domain("ε must be positive");
    }
    let origin = DiscretePath::at_origin(0.0, p.dim);
    let fw = simulate_forward(&p.sigma, p.terminal.as_ref(), p.horizon, 0.0, &origin, cfg, View::Skeleton(eps), None)?;
    let terminal: Vec<f64> = fw.records.iter().map(|r| r.xi).collect();
    let bw = backward(&fw, p.driver.as_ref(), &terminal)?;
    let half_gap = p.modulus.eval(2.0 * eps) * (1.0 + p.horizon);
    Ok(PerronReport {
        eps,
        psi: bw.value,
        stderr: bw.stderr,
        upper: bw.value + half_gap,
        lower: bw.value - half_gap,
        gap: 2.0 * half_gap,
        half_gap,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub delta: f64,
    pub value: f64,
    pub defect: f64,
    pub bound: f64,
    pub within: bool,
}

/// Solves with `F + δ` and compares with the unperturbed value against
/// `|δ| T e^{L₀T} + 3 SE`.
pub fn stability_probe(p: &SemilinearProblem, deltas: &[f64], cfg: &SolveConfig) -> Result<Vec<StabilityRow>> {
    let base = solve_semilinear(p, cfg)?;
    deltas
        .iter()
        .map(|&delta| {
            let out = if delta == 0.0 { base.clone() } else { solve_semilinear(&p.shifted(delta), cfg)? };
            let se = (base.stderr.powi(2) + out.stderr.powi(2)).sqrt();
            let bound = delta.abs() * p.horizon * (p.driver_lipschitz * p.horizon).exp() + 3.0 * se;
            let defect = out.value - base.value;
            Ok(StabilityRow { delta, value: out.value, defect, bound, within: defect.abs() <= bound + 1e-12 })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub side: Side,
    pub residual_ok: bool,
    pub terminal_ok: bool,
    pub classical_value: f64,
    pub solver_value: f64,
    /// Signed distance in the direction of the expected ordering.
    pub margin: f64,
    pub ordered: bool,
}

/// Partial comparison between a classical semi-solution and a solver value.
///
/// For `Side::Super` the classical functional must satisfy `Lu² ≥ 0` at the
/// residual points and `ξ¹ ≤ u²(T, ·)` on the terminal paths; the probe then
/// asserts `u¹(0, 0) ≤ u²(0, 0) + 3 SE`. `Side::Sub` mirrors everything.
pub fn partial_comparison_probe(
    classical: &dyn SmoothFunctional,
    g: &Generator,
    side: Side,
    solver: &SolverOutput,
    terminal: &dyn AdaptedFunctional,
    horizon: f64,
    residual_points: &[(f64, DiscretePath)],
    terminal_paths: &[DiscretePath],
    tol: f64,
) -> Result<ComparisonReport> {
    let res = classical_residual(classical, g, residual_points, tol)?;
    let sign = match side {
        Side::Super => 1.0,
        Side::Sub => -1.0,
    };
    let residual_ok = match side {
        Side::Super => res.supersolution(),
        Side::Sub => res.subsolution(),
    };
    let terminal_ok = terminal_paths
        .iter()
        .all(|p| sign * (classical.eval(horizon, p) - terminal.eval(horizon, p)) >= -tol);
    let d = classical.dim();
    let classical_value = classical.eval(0.0, &DiscretePath::at_origin(0.0, d));
    let margin = sign * (classical_value - solver.value);
    Ok(ComparisonReport {
        side,
        residual_ok,
        terminal_ok,
        classical_value,
        solver_value: solver.value,
        margin,
        ordered: margin >= -3.0 * solver.stderr - tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{first_order_lattice, Refinement};
    use crate::pathspace::{dist_infty, TimeGrid};

    fn square() -> Arc<dyn AdaptedFunctional> {
        Arc::new(|t: f64, p: &DiscretePath| p.x(t).powi(2))
    }

    #[test]
    fn heat_second_moment() {
        let p = SemilinearProblem::heat("square", 1, 1.0, square());
        let out = solve_semilinear(&p, &SolveConfig::new(0.05, 20000, 3)).unwrap();
        assert!((out.value - 1.0).abs() < 3.0 * out.stderr + 1e-3, "{out:?}");
        let tree = solve_semilinear(&p, &SolveConfig::exact(0.1)).unwrap();
        assert!((tree.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singleton_hjb_matches_semilinear_bitwise() {
        let p = SemilinearProblem::heat("square", 1, 1.0, square())
            .with_driver(1.0, |_, s, y, z| 0.3 * y - 0.2 * z[0] + s.max[0]);
        let mut h = HjbProblem::uncertain_volatility("square", 1.0, vec![1.0], square());
        h.driver = Some(Arc::new(|_, s, y, z, _| 0.3 * y - 0.2 * z[0] + s.max[0]));
        let a = solve_semilinear(&p, &SolveConfig::exact(0.125)).unwrap();
        let b = solve_hjb(&h, &SolveConfig::exact(0.125)).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn uncertain_volatility_targets() {
        let neg: Arc<dyn AdaptedFunctional> = Arc::new(|t: f64, p: &DiscretePath| -p.x(t).powi(2));
        let up = HjbProblem::uncertain_volatility("sq", 1.0, vec![0.5, 1.0], square());
        let down = HjbProblem::uncertain_volatility("neg", 1.0, vec![0.5, 1.0], neg);
        let a = solve_hjb(&up, &SolveConfig::exact(1.0 / 12.0)).unwrap();
        let b = solve_hjb(&down, &SolveConfig::exact(1.0 / 12.0)).unwrap();
        assert!((a.value - 1.0).abs() < 1e-12 && (b.value + 0.25).abs() < 1e-12);
        assert_eq!(a.control.as_deref(), Some("sigma=1"));
        assert_eq!(b.control.as_deref(), Some("sigma=0.5"));
        let mc = solve_hjb(&down, &SolveConfig::new(0.05, 20000, 5)).unwrap();
        assert!((mc.value + 0.25).abs() < 0.02, "{mc:?}");
    }

    #[test]
    fn explicit_scheme_converges_at_first_order() {
        let p = SemilinearProblem::heat("square", 1, 1.0, square()).with_driver(0.5, |_, _, y, _| 0.5 * y);
        let v: Vec<f64> = [0.5, 0.25, 0.125]
            .iter()
            .map(|&dt| solve_semilinear(&p, &SolveConfig::exact(dt)).unwrap().value)
            .collect();
        let ratio = (v[0] - v[1]).abs() / (v[1] - v[2]).abs();
        assert!((1.4..=3.0).contains(&ratio), "{v:?} {ratio}");
    }

    #[test]
    fn dpp_degenerate_restarts_are_exact() {
        let p = SemilinearProblem::heat("square", 1, 1.0, square());
        let cfg = SolveConfig::new(0.05, 2000, 9);
        for tau in [0.0, 1.0] {
            let r = dpp_consistency(&p, &Restart::Fixed(tau), &cfg).unwrap();
            assert_eq!(r.defect, 0.0, "{tau}: {r:?}");
        }
        let r = dpp_consistency(&p, &Restart::Fixed(0.5), &cfg).unwrap();
        assert!(r.within(3.0), "{r:?}");
        let h = HittingTimeSpec::radius(0.5).unwrap();
        let r = dpp_consistency(&p, &Restart::Hitting(h), &cfg).unwrap();
        assert!(r.within(3.0), "{r:?}");
    }

    #[test]
    fn first_order_closed_forms() {
        let lat = first_order_lattice(1.0, 1, Refinement::default()).unwrap();
        let p = FirstOrderProblem {
            name: "maxdrift".into(),
            horizon: 1.0,
            lattice: lat.clone(),
            running_cost: Arc::new(|_, _| 1.0),
            terminal: FirstOrderTerminal::XMax(Arc::new(|x, m| 2.0 * m - x)),
        };
        let origin = DiscretePath::at_origin(0.0, 1);
        assert!(solve_first_order(&p, 0.0, &origin, 0.05, 1 << 22).unwrap().value.abs() < 1e-12);
        let g = TimeGrid::new(vec![0.0, 0.25, 0.5]).unwrap();
        let w = DiscretePath::scalar(&g, &[0.0, 1.0, 0.3]).unwrap();
        let v = solve_first_order(&p, 0.5, &w, 0.05, 1 << 22).unwrap().value;
        assert!((v - 1.7).abs() < 1e-12, "{v}");
        let lin = FirstOrderProblem {
            name: "linear".into(),
            horizon: 1.0,
            lattice: lat,
            running_cost: Arc::new(|_, _| 0.0),
            terminal: FirstOrderTerminal::Path(Arc::new(|t: f64, p: &DiscretePath| p.x(t))),
        };
        let v = solve_first_order(&lin, 0.0, &origin, 0.125, 1 << 22).unwrap().value;
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn skeleton_bounds() {
        let g = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let flat = DiscretePath::scalar(&g, &[0.0, 0.01, 0.02, 0.0, 0.01, 0.03, 0.02, 0.01, 0.0, 0.02, 0.01]).unwrap();
        assert_eq!(exit_skeleton(&flat, 0.1).unwrap().len(), 2);
        let grid = TimeGrid::uniform(0.0, 1.0, 500).unwrap();
        let c = crate::measures::ControlProcess::constant(grid, crate::measures::ControlPair::scalar(1, &[0.0], 1.0).unwrap(), 1.0).unwrap();
        for (i, p) in crate::measures::simulate_paths(&c, 20, 4).iter().enumerate() {
            let a = exit_skeleton(p, 0.1).unwrap();
            let b = exit_skeleton(p, 0.05).unwrap();
            assert!(b.len() >= a.len(), "path {i}");
            assert!(dist_infty(1.0, &a, 1.0, p).unwrap() <= 0.2 + p.max_increment() + 1e-12);
        }
    }

    #[test]
    fn perron_gap_and_linear_terminal() {
        let lin: Arc<dyn AdaptedFunctional> = Arc::new(|t: f64, p: &DiscretePath| p.x(t));
        let p = SemilinearProblem::heat("linear", 1, 1.0, lin);
        let r = perron_scheme(&p, 0.1, &SolveConfig::new(0.01, 4000, 2)).unwrap();
        assert!((r.gap - 0.8).abs() < 1e-15);
        assert!(r.psi.abs() < 3.0 * r.stderr);
    }

    #[test]
    fn stability_sign_follows_delta() {
        let p = SemilinearProblem::heat("square", 1, 1.0, square());
        let rows = stability_probe(&p, &[0.1, -0.1, 0.0], &SolveConfig::exact(0.125)).unwrap();
        assert!(rows[0].defect > 0.0 && rows[1].defect < 0.0 && rows[2].defect == 0.0);
        assert!(rows.iter().all(|r| r.within));
    }

    #[test]
    fn modulus_table() {
        let m = Modulus::Table(vec![(0.0, 0.0), (1.0, 2.0), (2.0, 3.0)]);
        assert_eq!(m.eval(0.5), 1.0);
        assert_eq!(m.eval(1.5), 2.5);
        assert_eq!(Modulus::Lipschitz(1.0).eval(0.2), 0.2);
    }
}
