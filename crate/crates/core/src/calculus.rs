//! Functional Itô calculus on discrete paths.
//!
//! The time derivative compares `u` along the path frozen at `t`; vertical
//! derivatives bump the path from `t` onwards. A vertical bump is realised as
//! an extra knot at `t + η` (η = 10⁻⁹) carrying the shifted value, which keeps
//! paths continuous and anchored at the origin while approximating the jump.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{domain, Result};
use crate::measures::ControlProcess;
use crate::pathspace::{AdaptedFunctional, DiscretePath};
use crate::rng::NoiseKind;
use crate::viscosity::Generator;

/// Time offset of the knot carrying a vertical bump.
pub const BUMP_RAMP: f64 = 1e-9;

/// How derivative evaluators were obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    Analytic,
    FiniteDifference { time_bump: f64, space_bump: f64 },
}

/// An adapted functional with path derivatives `∂_t u`, `∂_ω u`, `∂²_ωω u`.
pub trait SmoothFunctional: AdaptedFunctional {
    fn dim(&self) -> usize;
    fn time_derivative(&self, t: f64, path: &DiscretePath) -> f64;
    fn space_gradient(&self, t: f64, path: &DiscretePath) -> Vec<f64>;
    fn space_hessian(&self, t: f64, path: &DiscretePath) -> DMatrix<f64>;
    fn provenance(&self) -> Provenance;
}

/// Value and derivatives at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub time: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

pub fn jet(f: &dyn SmoothFunctional, t: f64, path: &DiscretePath) -> Jet {
    Jet {
        value: f.eval(t, path),
        time: f.time_derivative(t, path),
        gradient: f.space_gradient(t, path),
        hessian: f.space_hessian(t, path),
    }
}

/// `[u(t+h, ω_{·∧t}) − u(t, ω)] / h`.
pub fn time_derivative_fd(u: &dyn AdaptedFunctional, t: f64, path: &DiscretePath, h: f64, horizon: f64) -> Result<f64> {
    if !(h > 0.0) {
        return domain("time bump must be positive");
    }
    if t + h > horizon + 1e-12 {
        return domain(format!("t + h = {} exceeds the horizon {horizon}", t + h));
    }
    let stopped = path.stopped_at(t);
    Ok((u.eval(t + h, &stopped) - u.eval(t, &stopped)) / h)
}

/// The path stopped at `t` and then moved by `shift` over `[t, t + η]`.
pub fn bumped_path(path: &DiscretePath, t: f64, shift: &[f64]) -> (DiscretePath, f64) {
    let mut p = path.stopped_at(t);
    let last: Vec<f64> = p.last_point().iter().zip(shift).map(|(a, b)| a + b).collect();
    let s = t + BUMP_RAMP;
    p.push_knot(s, &last);
    (p, s)
}

fn bumped_value(u: &dyn AdaptedFunctional, path: &DiscretePath, t: f64, shift: &[f64]) -> f64 {
    let (p, s) = bumped_path(path, t, shift);
    u.eval(s, &p)
}

/// Central first differences under the flat vertical bump.
pub fn vertical_derivative_fd(u: &dyn AdaptedFunctional, t: f64, path: &DiscretePath, bump: f64) -> Result<Vec<f64>> {
    if !(bump > 0.0) {
        return domain("space bump must be positive");
    }
    let d = path.dim();
    Ok((0..d)
        .map(|k| {
            let mut e = vec![0.0; d];
            e[k] = bump;
            let up = bumped_value(u, path, t, &e);
            e[k] = -bump;
            let down = bumped_value(u, path, t, &e);
            (up - down) / (2.0 * bump)
        })
        .collect())
}

/// Symmetrised second differences under the flat vertical bump.
pub fn vertical_hessian_fd(u: &dyn AdaptedFunctional, t: f64, path: &DiscretePath, bump: f64) -> Result<DMatrix<f64>> {
    if !(bump > 0.0) {
        return domain("space bump must be positive");
    }
    let d = path.dim();
    let zero = vec![0.0; d];
    let centre = bumped_value(u, path, t, &zero);
    let mut hess = DMatrix::zeros(d, d);
    let shifted = |pairs: &[(usize, f64)]| {
        let mut e = vec![0.0; d];
        for &(k, v) in pairs {
            e[k] += v;
        }
        bumped_value(u, path, t, &e)
    };
    for k in 0..d {
        let up = shifted(&[(k, bump)]);
        let down = shifted(&[(k, -bump)]);
        hess[(k, k)] = (up - 2.0 * centre + down) / (bump * bump);
        for j in 0..k {
            let pp = shifted(&[(k, bump), (j, bump)]);
            let pm = shifted(&[(k, bump), (j, -bump)]);
            let mp = shifted(&[(k, -bump), (j, bump)]);
            let mm = shifted(&[(k, -bump), (j, -bump)]);
            let v = (pp - pm - mp + mm) / (4.0 * bump * bump);
            hess[(k, j)] = v;
            hess[(j, k)] = v;
        }
    }
    Ok(hess)
}

/// Finite-difference derivatives of an arbitrary adapted functional.
#[derive(Clone)]
pub struct FiniteDifference {
    inner: Arc<dyn AdaptedFunctional>,
    dim: usize,
    time_bump: f64,
    space_bump: f64,
    horizon: f64,
}

impl FiniteDifference {
    pub fn new(inner: Arc<dyn AdaptedFunctional>, dim: usize, time_bump: f64, space_bump: f64, horizon: f64) -> Result<Self> {
        if !(time_bump > 0.0 && space_bump > 0.0) {
            return domain("bump sizes must be positive");
        }
        Ok(Self { inner, dim, time_bump, space_bump, horizon })
    }

    /// Default bumps for a grid step `dt`: `h = Δt`, space bump `√Δt`.
    pub fn for_step(inner: Arc<dyn AdaptedFunctional>, dim: usize, dt: f64, horizon: f64) -> Result<Self> {
        Self::new(inner, dim, dt, dt.sqrt(), horizon)
    }
}

impl AdaptedFunctional for FiniteDifference {
    fn eval(&self, t: f64, path: &DiscretePath) -> f64 {
        self.inner.eval(t, path)
    }
}

impl SmoothFunctional for FiniteDifference {
    fn dim(&self) -> usize {
        self.dim
    }

    fn time_derivative(&self, t: f64, path: &DiscretePath) -> f64 {
        let h = self.time_bump.min(self.horizon - t);
        if h > 0.0 {
            time_derivative_fd(self.inner.as_ref(), t, path, h, self.horizon).unwrap_or(f64::NAN)
        } else {
            let stopped = path.stopped_at(t);
            let s = t - self.time_bump;
            (self.inner.eval(t, &stopped) - self.inner.eval(s, &path.stopped_at(s))) / self.time_bump
        }
    }

    fn space_gradient(&self, t: f64, path: &DiscretePath) -> Vec<f64> {
        vertical_derivative_fd(self.inner.as_ref(), t, path, self.space_bump).unwrap_or_default()
    }

    fn space_hessian(&self, t: f64, path: &DiscretePath) -> DMatrix<f64> {
        vertical_hessian_fd(self.inner.as_ref(), t, path, self.space_bump).unwrap_or_else(|_| DMatrix::zeros(self.dim, self.dim))
    }

    fn provenance(&self) -> Provenance {
        Provenance::FiniteDifference { time_bump: self.time_bump, space_bump: self.space_bump }
    }
}

/// Terminal defect of the functional Itô formula along one path.
///
/// Derivatives are taken at the left end of every interval; `β²` comes
/// from the control that generated the path.
pub fn ito_residual(f: &dyn SmoothFunctional, path: &DiscretePath, c: &ControlProcess) -> Result<f64> {
    let knots = path.knots();
    if knots != c.grid().knots() {
        return domain("the path must live on the control grid");
    }
    let d = path.dim();
    let mut acc = 0.0;
    for i in 0..knots.len() - 1 {
        let t = knots[i];
        let dt = knots[i + 1] - t;
        let prefix = path.stopped_at(t);
        let grad = f.space_gradient(t, &prefix);
        let hess = f.space_hessian(t, &prefix);
        let beta = &c.pairs()[i].diffusion;
        let quad = (beta * beta).component_mul(&hess).sum();
        let mut lin = 0.0;
        for k in 0..d {
            lin += grad[k] * (path.point(i + 1)[k] - path.point(i)[k]);
        }
        acc += f.time_derivative(t, &prefix) * dt + lin + 0.5 * quad * dt;
    }
    let total = f.eval(path.horizon(), path) - f.eval(knots[0], &path.stopped_at(knots[0]));
    Ok((total - acc).abs())
}

/// Root-mean-square Itô defect over `n` simulated paths.
pub fn ito_residual_rms(f: &dyn SmoothFunctional, c: &ControlProcess, n: usize, seed: u64, noise: NoiseKind) -> Result<f64> {
    let sq: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let p = crate::measures::simulate_path(c, i, seed, noise);
            ito_residual(f, &p, c).map(|r| r * r)
        })
        .collect::<Result<_>>()?;
    Ok((sq.iter().sum::<f64>() / n as f64).sqrt())
}

/// `(ũ, G̃)` with `ũ = e^{λt} u` and
/// `G̃(t, ω, y, z, γ) = −λy + e^{λt} G(t, ω, e^{−λt}y, e^{−λt}z, e^{−λt}γ)`.
///
/// Rescaling adds exponents, so a round trip returns exactly the base pair.
#[derive(Clone)]
pub struct ExpScaled {
    base: Arc<dyn SmoothFunctional>,
    generator: Generator,
    lambda: f64,
}

impl ExpScaled {
    pub fn new(base: Arc<dyn SmoothFunctional>, generator: Generator) -> Self {
        Self { base, generator, lambda: 0.0 }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rescale(&self, lambda: f64) -> Self {
        Self { base: self.base.clone(), generator: self.generator.clone(), lambda: self.lambda + lambda }
    }

    /// The transformed generator.
    pub fn generator(&self) -> Generator {
        let lambda = self.lambda;
        if lambda == 0.0 {
            return self.generator.clone();
        }
        let g = self.generator.clone();
        let name = format!("{}*exp({lambda})", g.name());
        let lip = g.lipschitz() + lambda.abs();
        let flavor = g.flavor();
        Generator::new(name, lip, flavor, move |t, p, y, z, gamma| {
            let e = (lambda * t).exp();
            let inv = (-lambda * t).exp();
            let zs: Vec<f64> = z.iter().map(|v| v * inv).collect();
            -lambda * y + e * g.eval(t, p, y * inv, &zs, &(gamma * inv))
        })
    }
}

/// Builds the scaled pair for `λ`.
pub fn exponential_scaling(u: Arc<dyn SmoothFunctional>, g: Generator, lambda: f64) -> ExpScaled {
    ExpScaled::new(u, g).rescale(lambda)
}

impl AdaptedFunctional for ExpScaled {
    fn eval(&self, t: f64, path: &DiscretePath) -> f64 {
        let v = self.base.eval(t, path);
        if self.lambda == 0.0 {
            v
        } else {
            (self.lambda * t).exp() * v
        }
    }
}

impl SmoothFunctional for ExpScaled {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn time_derivative(&self, t: f64, path: &DiscretePath) -> f64 {
        let dt = self.base.time_derivative(t, path);
        if self.lambda == 0.0 {
            return dt;
        }
        (self.lambda * t).exp() * (self.lambda * self.base.eval(t, path) + dt)
    }

    fn space_gradient(&self, t: f64, path: &DiscretePath) -> Vec<f64> {
        let g = self.base.space_gradient(t, path);
        if self.lambda == 0.0 {
            return g;
        }
        let e = (self.lambda * t).exp();
        g.into_iter().map(|v| e * v).collect()
    }

    fn space_hessian(&self, t: f64, path: &DiscretePath) -> DMatrix<f64> {
        let h = self.base.space_hessian(t, path);
        if self.lambda == 0.0 {
            return h;
        }
        h * (self.lambda * t).exp()
    }

    fn provenance(&self) -> Provenance {
        self.base.provenance()
    }
}

/// Errors of finite differences against analytic values for halving bumps.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRatios {
    /// `err(h) / err(h/2)` for the time derivative (expected near 2).
    pub time: Option<f64>,
    /// `err(ε) / err(ε/2)` for the central vertical derivative (expected near 4).
    pub space: Option<f64>,
}

/// Ratios of successive finite-difference errors; `None` where the error
/// vanishes below the resolution of the bump ramp (finite differences exact
/// for the functional).
pub fn fd_convergence_ratios(
    f: &dyn SmoothFunctional,
    t: f64,
    path: &DiscretePath,
    time_bump: f64,
    space_bump: f64,
    horizon: f64,
) -> Result<ConvergenceRatios> {
    // The bump ramp alone leaves errors of order `BUMP_RAMP`.
    const FLOOR: f64 = 1e-8;
    let exact_t = f.time_derivative(t, path);
    let e1 = (time_derivative_fd(f, t, path, time_bump, horizon)? - exact_t).abs();
    let e2 = (time_derivative_fd(f, t, path, 0.5 * time_bump, horizon)? - exact_t).abs();
    let exact_x = f.space_gradient(t, path)[0];
    let s1 = (vertical_derivative_fd(f, t, path, space_bump)?[0] - exact_x).abs();
    let s2 = (vertical_derivative_fd(f, t, path, 0.5 * space_bump)?[0] - exact_x).abs();
    Ok(ConvergenceRatios {
        time: (e1 > FLOOR && e2 > FLOOR).then(|| e1 / e2),
        space: (s1 > FLOOR && s2 > FLOOR).then(|| s1 / s2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::ControlPair;
    use crate::pathspace::TimeGrid;

    const T: f64 = 1.0;

    fn heat_integral(t: f64, p: &DiscretePath) -> f64 {
        p.coord_integral(t, 0) + (T - t) * p.x(t)
    }

    struct HeatIntegral;
    impl AdaptedFunctional for HeatIntegral {
        fn eval(&self, t: f64, p: &DiscretePath) -> f64 {
            heat_integral(t, p)
        }
    }
    impl SmoothFunctional for HeatIntegral {
        fn dim(&self) -> usize {
            1
        }
        fn time_derivative(&self, _: f64, _: &DiscretePath) -> f64 {
            0.0
        }
        fn space_gradient(&self, t: f64, _: &DiscretePath) -> Vec<f64> {
            vec![T - t]
        }
        fn space_hessian(&self, _: f64, _: &DiscretePath) -> DMatrix<f64> {
            DMatrix::zeros(1, 1)
        }
        fn provenance(&self) -> Provenance {
            Provenance::Analytic
        }
    }

    fn wiggly() -> DiscretePath {
        let g = TimeGrid::uniform(0.0, 1.0, 8).unwrap();
        DiscretePath::scalar(&g, &[0.0, 0.3, -0.1, 0.4, 0.2, 0.5, 0.1, -0.2, 0.3]).unwrap()
    }

    #[test]
    fn time_derivative_examples() {
        let w = wiggly();
        for h in [0.1, 0.01, 0.001] {
            let d = time_derivative_fd(&heat_integral, 0.5, &w, h, T).unwrap();
            assert!(d.abs() < 1e-12, "{d}");
        }
        let clock = |t: f64, _: &DiscretePath| t;
        assert!((time_derivative_fd(&clock, 0.3, &w, 0.01, T).unwrap() - 1.0).abs() < 1e-12);
        let frozen = |t: f64, p: &DiscretePath| p.x(t).tanh();
        assert_eq!(time_derivative_fd(&frozen, 0.3, &w, 0.01, T).unwrap(), 0.0);
        assert!(time_derivative_fd(&clock, 0.95, &w, 0.1, T).is_err());
    }

    #[test]
    fn vertical_derivative_examples() {
        let w = wiggly();
        let x = |t: f64, p: &DiscretePath| p.x(t);
        assert!((vertical_derivative_fd(&x, 0.4, &w, 1e-3).unwrap()[0] - 1.0).abs() < 1e-9);
        assert!(vertical_hessian_fd(&x, 0.4, &w, 1e-3).unwrap()[(0, 0)].abs() < 1e-6);
        let g = vertical_derivative_fd(&heat_integral, 0.4, &w, 1e-3).unwrap()[0];
        assert!((g - 0.6).abs() < 1e-6, "{g}");
        assert!(vertical_hessian_fd(&heat_integral, 0.4, &w, 1e-3).unwrap()[(0, 0)].abs() < 1e-4);
        // below the running maximum the maximum does not react
        let m = |t: f64, p: &DiscretePath| p.coord_max(t, 0);
        assert!(w.x(0.5) < w.coord_max(0.5, 0));
        assert_eq!(vertical_derivative_fd(&m, 0.5, &w, 1e-3).unwrap()[0], 0.0);
    }

    #[test]
    fn progressive_measurability_of_derivatives() {
        let w = wiggly();
        let moved = w.map_points(|s, p, out| out[0] = p[0] + if s > 0.5 { 1.0 } else { 0.0 }).unwrap();
        let f = FiniteDifference::new(Arc::new(heat_integral), 1, 1e-3, 1e-3, T).unwrap();
        assert_eq!(f.time_derivative(0.5, &w), f.time_derivative(0.5, &moved));
        assert_eq!(f.space_gradient(0.5, &w), f.space_gradient(0.5, &moved));
        assert_eq!(f.space_hessian(0.5, &w), f.space_hessian(0.5, &moved));
    }

    #[test]
    fn hessian_is_symmetric() {
        let g = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let w = DiscretePath::from_points(&g, &[vec![0.0, 0.0], vec![0.1, 0.2], vec![0.3, -0.1], vec![0.2, 0.0], vec![0.0, 0.4]]).unwrap();
        let u = |t: f64, p: &DiscretePath| p.coord_at(t, 0) * p.coord_at(t, 1).sin() + p.coord_max(t, 1);
        let h = vertical_hessian_fd(&u, 0.5, &w, 1e-3).unwrap();
        assert_eq!(h[(0, 1)], h[(1, 0)]);
        assert!((h[(0, 1)] - w.coord_at(0.5, 1).cos()).abs() < 1e-5);
    }

    #[test]
    fn ito_residual_examples() {
        let grid = TimeGrid::uniform(0.0, 1.0, 64).unwrap();
        let c = ControlProcess::constant(grid, ControlPair::scalar(1, &[0.0], 1.0).unwrap(), 1.0).unwrap();
        let paths = crate::measures::simulate_paths(&c, 50, 2);
        for p in &paths {
            let r = ito_residual(&HeatIntegral, p, &c).unwrap();
            // ½ Δt |ω_T|: trapezoid against right Riemann sums
            assert!((r - 0.5 / 64.0 * p.x(1.0).abs()).abs() < 1e-12);
        }
        let constant = FiniteDifference::new(Arc::new(|_: f64, _: &DiscretePath| 2.0), 1, 1e-3, 1e-3, T).unwrap();
        assert_eq!(ito_residual(&constant, &paths[0], &c).unwrap(), 0.0);
    }

    #[test]
    fn running_max_with_zero_derivatives_is_detected() {
        struct ZeroJet;
        impl AdaptedFunctional for ZeroJet {
            fn eval(&self, t: f64, p: &DiscretePath) -> f64 {
                p.coord_max(t, 0)
            }
        }
        impl SmoothFunctional for ZeroJet {
            fn dim(&self) -> usize {
                1
            }
            fn time_derivative(&self, _: f64, _: &DiscretePath) -> f64 {
                0.0
            }
            fn space_gradient(&self, _: f64, _: &DiscretePath) -> Vec<f64> {
                vec![0.0]
            }
            fn space_hessian(&self, _: f64, _: &DiscretePath) -> DMatrix<f64> {
                DMatrix::zeros(1, 1)
            }
            fn provenance(&self) -> Provenance {
                Provenance::Analytic
            }
        }
        let grid = TimeGrid::uniform(0.0, 1.0, 256).unwrap();
        let c = ControlProcess::constant(grid, ControlPair::scalar(1, &[0.0], 1.0).unwrap(), 1.0).unwrap();
        let rms = ito_residual_rms(&ZeroJet, &c, 2000, 4, NoiseKind::Gaussian).unwrap();
        // E[ω̄_T²] = T for Brownian motion, so the RMS is close to 1
        assert!(rms > 0.8, "{rms}");
    }

    #[test]
    fn exponential_scaling_round_trip() {
        let base: Arc<dyn SmoothFunctional> = Arc::new(HeatIntegral);
        let g = Generator::heat();
        let id = exponential_scaling(base.clone(), g.clone(), 0.0);
        let w = wiggly();
        let z = [0.3];
        let gamma = DMatrix::from_element(1, 1, 0.7);
        assert_eq!(id.eval(0.5, &w), base.eval(0.5, &w));
        assert_eq!(id.generator().eval(0.5, &w, 1.0, &z, &gamma), g.eval(0.5, &w, 1.0, &z, &gamma));
        let there = exponential_scaling(base.clone(), g.clone(), 1.3);
        let back = there.rescale(-1.3);
        for i in 0..20 {
            let t = i as f64 / 20.0;
            assert_eq!(back.eval(t, &w), base.eval(t, &w));
            assert_eq!(back.space_gradient(t, &w), base.space_gradient(t, &w));
            assert_eq!(back.generator().eval(t, &w, 0.2 * i as f64, &z, &gamma), g.eval(t, &w, 0.2 * i as f64, &z, &gamma));
        }
    }

    #[test]
    fn scaled_operator_transforms_consistently() {
        // u + c(T − t) has Lu = c under the heat generator
        struct Bumped;
        impl AdaptedFunctional for Bumped {
            fn eval(&self, t: f64, p: &DiscretePath) -> f64 {
                heat_integral(t, p) + 0.1 * (T - t)
            }
        }
        impl SmoothFunctional for Bumped {
            fn dim(&self) -> usize {
                1
            }
            fn time_derivative(&self, _: f64, _: &DiscretePath) -> f64 {
                -0.1
            }
            fn space_gradient(&self, t: f64, _: &DiscretePath) -> Vec<f64> {
                vec![T - t]
            }
            fn space_hessian(&self, _: f64, _: &DiscretePath) -> DMatrix<f64> {
                DMatrix::zeros(1, 1)
            }
            fn provenance(&self) -> Provenance {
                Provenance::Analytic
            }
        }
        let w = wiggly();
        let base: Arc<dyn SmoothFunctional> = Arc::new(Bumped);
        let g = Generator::heat();
        let scaled = exponential_scaling(base.clone(), g.clone(), 1.0);
        let op = |f: &dyn SmoothFunctional, g: &Generator, t: f64| {
            let j = jet(f, t, &w);
            -j.time - g.eval(t, &w, j.value, &j.gradient, &j.hessian)
        };
        for t in [0.0, 0.25, 0.5, 0.75] {
            let lhs = op(&scaled, &scaled.generator(), t);
            let rhs = t.exp() * op(base.as_ref(), &g, t);
            assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
            assert!((rhs - 0.1 * t.exp()).abs() < 1e-12);
        }
    }
}
