//! Controlled measures in the bounded family `P_L`.
//!
//! A measure is induced by a piecewise-constant drift/diffusion pair
//! `(α, β)`; the family is approximated by finite lattices of such pairs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{domain, Result};
use crate::pathspace::{DiscretePath, TimeGrid};
use crate::rng::{NoiseKind, NoiseStream};

const BOUND_SLACK: f64 = 1e-12;

/// A single drift/diffusion characteristic `(α, β)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPair {
    pub drift: DVector<f64>,
    pub diffusion: DMatrix<f64>,
}

impl ControlPair {
    pub fn new(drift: DVector<f64>, diffusion: DMatrix<f64>) -> Result<Self> {
        let d = drift.len();
        if d == 0 || diffusion.nrows() != d || diffusion.ncols() != d {
            return domain("drift and diffusion dimensions disagree");
        }
        Ok(Self { drift, diffusion })
    }

    /// `α e`, `c I` in dimension `d`.
    pub fn scalar(d: usize, drift: &[f64], diffusion_scale: f64) -> Result<Self> {
        if drift.len() != d {
            return domain("drift length must equal the dimension");
        }
        Self::new(DVector::from_column_slice(drift), DMatrix::identity(d, d) * diffusion_scale)
    }

    pub fn zero(d: usize) -> Self {
        Self { drift: DVector::zeros(d), diffusion: DMatrix::zeros(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    /// `½ tr(β²)`.
    pub fn half_trace_sq(&self) -> f64 {
        0.5 * (&self.diffusion * &self.diffusion).trace()
    }

    /// Whether the pair lies in the constraint set with bound `l`.
    pub fn admissible(&self, l: f64) -> bool {
        let tol = BOUND_SLACK * (1.0 + l);
        let sym = (&self.diffusion - self.diffusion.transpose()).abs().max() <= tol;
        let psd = sym
            && SymmetricEigen::new(self.diffusion.clone())
                .eigenvalues
                .iter()
                .all(|&e| e >= -tol);
        self.drift.norm() <= l + tol && self.half_trace_sq() <= l + tol && psd
    }

    /// Short human-readable identifier.
    pub fn label(&self) -> String {
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
        let diag: Vec<f64> = (0..self.dim()).map(|i| self.diffusion[(i, i)]).collect();
        format!("a=[{}] b=diag[{}]", fmt(self.drift.as_slice()), fmt(&diag))
    }
}

/// Piecewise-constant control on a grid.
#[derive(Debug, Clone)]
pub struct ControlProcess {
    grid: TimeGrid,
    pairs: Vec<ControlPair>,
    bound: f64,
}

impl ControlProcess {
    pub fn new(grid: TimeGrid, pairs: Vec<ControlPair>, bound: f64) -> Result<Self> {
        if !(bound > 0.0) {
            return domain("the bound L must be positive");
        }
        if pairs.len() != grid.intervals() {
            return domain(format!("{} control pairs for {} intervals", pairs.len(), grid.intervals()));
        }
        let d = pairs[0].dim();
        for (i, p) in pairs.iter().enumerate() {
            if p.dim() != d {
                return domain("all control pairs must share one dimension");
            }
            if !p.admissible(bound) {
                return domain(format!("interval {i}: control {} violates the bound L = {bound}", p.label()));
            }
        }
        Ok(Self { grid, pairs, bound })
    }

    pub fn constant(grid: TimeGrid, pair: ControlPair, bound: f64) -> Result<Self> {
        let pairs = vec![pair; grid.intervals()];
        Self::new(grid, pairs, bound)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn pairs(&self) -> &[ControlPair] {
        &self.pairs
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn dim(&self) -> usize {
        self.pairs[0].dim()
    }

    pub fn is_admissible(&self) -> bool {
        self.pairs.iter().all(|p| p.admissible(self.bound))
    }
}

/// Simulates one path from its own noise stream.
pub fn simulate_path(c: &ControlProcess, index: u64, seed: u64, kind: NoiseKind) -> DiscretePath {
    let d = c.dim();
    let knots = c.grid().knots();
    let mut values = vec![0.0; knots.len() * d];
    let mut noise = NoiseStream::new(seed, index, kind);
    let mut zeta = vec![0.0; d];
    for i in 0..knots.len() - 1 {
        let dt = knots[i + 1] - knots[i];
        let sq = dt.sqrt();
        noise.fill(&mut zeta);
        let p = &c.pairs()[i];
        for k in 0..d {
            let mut inc = p.drift[k] * dt;
            for j in 0..d {
                inc += p.diffusion[(k, j)] * sq * zeta[j];
            }
            values[(i + 1) * d + k] = values[i * d + k] + inc;
        }
    }
    DiscretePath::from_parts_unchecked(knots.to_vec(), values, d)
}

/// Euler simulation of `n` paths; deterministic in `(c, n, seed, kind)`.
pub fn simulate_paths_with(c: &ControlProcess, n: usize, seed: u64, kind: NoiseKind) -> Vec<DiscretePath> {
    (0..n as u64).into_par_iter().map(|i| simulate_path(c, i, seed, kind)).collect()
}

/// Gaussian Euler simulation of `n` paths.
pub fn simulate_paths(c: &ControlProcess, n: usize, seed: u64) -> Vec<DiscretePath> {
    simulate_paths_with(c, n, seed, NoiseKind::Gaussian)
}

/// Cumulative driving noise `W` at every knot for one path (row-major, `d` per knot).
pub fn driving_noise(grid: &TimeGrid, d: usize, index: u64, seed: u64, kind: NoiseKind) -> Vec<f64> {
    let knots = grid.knots();
    let mut w = vec![0.0; knots.len() * d];
    let mut noise = NoiseStream::new(seed, index, kind);
    let mut zeta = vec![0.0; d];
    for i in 0..knots.len() - 1 {
        let sq = (knots[i + 1] - knots[i]).sqrt();
        noise.fill(&mut zeta);
        for k in 0..d {
            w[(i + 1) * d + k] = w[i * d + k] + sq * zeta[k];
        }
    }
    w
}

/// Path `α (t − t₀) + β W_t` driven by pre-generated noise.
pub fn path_from_noise(grid: &TimeGrid, pair: &ControlPair, w: &[f64]) -> DiscretePath {
    let d = pair.dim();
    let knots = grid.knots();
    let t0 = knots[0];
    let mut values = vec![0.0; w.len()];
    for (i, &t) in knots.iter().enumerate().skip(1) {
        for k in 0..d {
            let mut v = pair.drift[k] * (t - t0);
            for j in 0..d {
                v += pair.diffusion[(k, j)] * w[i * d + j];
            }
            values[i * d + k] = v;
        }
    }
    DiscretePath::from_parts_unchecked(knots.to_vec(), values, d)
}

/// Sizes of a control lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct Refinement {
    /// Points of the uniform drift grid on `[−L, L]` per axis (made odd, at least 3).
    pub drift_points: usize,
    /// Points of the uniform diffusion scale grid on `[0, √(2L/d)]` (at least 2).
    pub diffusion_points: usize,
}

impl Default for Refinement {
    fn default() -> Self {
        Self { drift_points: 5, diffusion_points: 5 }
    }
}

impl Refinement {
    pub const MINIMAL: Refinement = Refinement { drift_points: 3, diffusion_points: 2 };

    pub fn new(drift_points: usize, diffusion_points: usize) -> Self {
        Self { drift_points, diffusion_points }
    }

    fn drift_half(&self) -> usize {
        (self.drift_points.max(3) / 2).max(1)
    }

    fn diffusion_count(&self) -> usize {
        self.diffusion_points.max(2)
    }
}

/// Finite set of constant control pairs approximating `P_L`.
#[derive(Debug, Clone)]
pub struct ControlLattice {
    bound: f64,
    dim: usize,
    members: Vec<ControlPair>,
}

impl ControlLattice {
    /// Lattice with explicitly listed members.
    pub fn from_members(bound: f64, members: Vec<ControlPair>) -> Result<Self> {
        if !(bound > 0.0) {
            return domain("the bound L must be positive");
        }
        let Some(first) = members.first() else {
            return domain("a lattice needs at least one member");
        };
        let dim = first.dim();
        for m in &members {
            if m.dim() != dim {
                return domain("lattice members must share one dimension");
            }
            if !m.admissible(bound) {
                return domain(format!("member {} violates the bound L = {bound}", m.label()));
            }
        }
        Ok(Self { bound, dim, members })
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn members(&self) -> &[ControlPair] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Exact membership test.
    pub fn contains(&self, pair: &ControlPair) -> bool {
        self.members.iter().any(|m| m == pair)
    }

    /// Whether every member satisfies the constraints with bound `l`.
    pub fn within_bound(&self, l: f64) -> bool {
        self.members.iter().all(|m| m.admissible(l))
    }

    /// Members of `self` followed by the members of `other` not already present.
    pub fn union(&self, other: &ControlLattice) -> Result<ControlLattice> {
        if self.dim != other.dim {
            return domain("lattice dimensions differ");
        }
        let mut members = self.members.clone();
        for m in &other.members {
            if !members.contains(m) {
                members.push(m.clone());
            }
        }
        Self::from_members(self.bound.max(other.bound), members)
    }

    /// Distinct drift vectors (used by drift-only flavors).
    pub fn drifts(&self) -> Vec<DVector<f64>> {
        let mut out: Vec<DVector<f64>> = Vec::new();
        for m in &self.members {
            if !out.contains(&m.drift) {
                out.push(m.drift.clone());
            }
        }
        out
    }
}

fn drift_grid(l: f64, d: usize, refinement: Refinement) -> Vec<DVector<f64>> {
    let h = refinement.drift_half();
    let mut drifts = vec![DVector::zeros(d)];
    for k in 0..d {
        for j in 1..=h {
            let mag = l * j as f64 / h as f64;
            for sign in [-1.0, 1.0] {
                let mut v = DVector::zeros(d);
                v[k] = sign * mag;
                drifts.push(v);
            }
        }
    }
    drifts.sort_by(|a, b| {
        a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    drifts
}

/// Lattice of drifts `±(j/h)L e_k` and diffusions `c I`, `c ∈ [0, √(2L/d)]`.
pub fn build_lattice(l: f64, d: usize, refinement: Refinement) -> Result<ControlLattice> {
    if !(l > 0.0) {
        return domain("the bound L must be positive");
    }
    if d == 0 {
        return domain("dimension must be at least 1");
    }
    let m = refinement.diffusion_count();
    let top = (2.0 * l / d as f64).sqrt();
    let scales: Vec<f64> = (0..m).map(|j| if j + 1 == m { top } else { top * j as f64 / (m - 1) as f64 }).collect();
    let mut members = Vec::new();
    for a in drift_grid(l, d, refinement) {
        for &c in &scales {
            members.push(ControlPair { drift: a.clone(), diffusion: DMatrix::identity(d, d) * c });
        }
    }
    ControlLattice::from_members(l, members)
}

/// Drift-only lattice (`β = 0`).
pub fn first_order_lattice(l: f64, d: usize, refinement: Refinement) -> Result<ControlLattice> {
    if !(l > 0.0) {
        return domain("the bound L must be positive");
    }
    if d == 0 {
        return domain("dimension must be at least 1");
    }
    let members = drift_grid(l, d, refinement)
        .into_iter()
        .map(|a| ControlPair { drift: a, diffusion: DMatrix::zeros(d, d) })
        .collect();
    ControlLattice::from_members(l, members)
}

/// Lattice made of the single pair `α = β = 0`.
pub fn degenerate_lattice(l: f64, d: usize) -> Result<ControlLattice> {
    ControlLattice::from_members(l, vec![ControlPair::zero(d)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::uniform(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn deterministic_drift_path() {
        let pair = ControlPair::scalar(1, &[0.5], 0.0).unwrap();
        let c = ControlProcess::constant(grid(4), pair, 1.0).unwrap();
        let p = &simulate_paths(&c, 1, 9)[0];
        assert_eq!(p.values(), &[0.0, 0.125, 0.25, 0.375, 0.5]);
    }

    #[test]
    fn zero_control_gives_zero_path() {
        let c = ControlProcess::constant(grid(7), ControlPair::zero(2), 1.0).unwrap();
        for p in simulate_paths(&c, 3, 1) {
            assert!(p.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn brownian_terminal_mean() {
        let c = ControlProcess::constant(grid(4), ControlPair::scalar(1, &[0.0], 1.0).unwrap(), 1.0).unwrap();
        let paths = simulate_paths(&c, 100_000, 3);
        let xs: Vec<f64> = paths.iter().map(|p| p.x(1.0)).collect();
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(m.abs() < 3.0 * (v / n).sqrt(), "mean {m}");
    }

    #[test]
    fn invalid_controls_rejected() {
        let big = ControlPair::scalar(1, &[1.5], 0.0).unwrap();
        assert!(ControlProcess::constant(grid(2), big, 1.0).is_err());
        let vol = ControlPair::scalar(1, &[0.0], 1.5).unwrap();
        assert!(ControlProcess::constant(grid(2), vol, 1.0).is_err());
    }

    #[test]
    fn minimal_lattice_contains_extremes() {
        let lat = build_lattice(1.0, 1, Refinement::MINIMAL).unwrap();
        for a in [-1.0, 0.0, 1.0] {
            for b in [0.0, 2f64.sqrt()] {
                assert!(lat.contains(&ControlPair::scalar(1, &[a], b).unwrap()), "missing ({a}, {b})");
            }
        }
        assert_eq!(lat.len(), 6);
        assert!(lat.within_bound(1.0));
        assert!(build_lattice(0.0, 1, Refinement::MINIMAL).is_err());
    }

    #[test]
    fn first_order_lattice_drifts() {
        let lat = first_order_lattice(1.0, 1, Refinement::MINIMAL).unwrap();
        let drifts: Vec<f64> = lat.members().iter().map(|m| m.drift[0]).collect();
        assert_eq!(drifts, vec![-1.0, 0.0, 1.0]);
        assert!(lat.members().iter().all(|m| m.diffusion[(0, 0)] == 0.0));
        let lat5 = first_order_lattice(1.0, 1, Refinement::new(5, 1)).unwrap();
        let drifts: Vec<f64> = lat5.members().iter().map(|m| m.drift[0]).collect();
        assert_eq!(drifts, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn first_order_paths_are_lipschitz() {
        let lat = first_order_lattice(2.0, 1, Refinement::default()).unwrap();
        for m in lat.members() {
            let c = ControlProcess::constant(grid(16), m.clone(), 2.0).unwrap();
            for p in simulate_paths(&c, 2, 5) {
                assert!(p.lipschitz_constant() <= 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn multidimensional_extremes() {
        let lat = build_lattice(2.0, 3, Refinement::default()).unwrap();
        let top = (4.0f64 / 3.0).sqrt();
        assert!(lat.contains(&ControlPair::scalar(3, &[0.0, -2.0, 0.0], top).unwrap()));
        assert!(lat.contains(&ControlPair::zero(3)));
        assert!(lat.within_bound(2.0));
    }
}
