//! Discrete canonical space.
//!
//! Continuous paths are represented piecewise-linearly on a strictly
//! increasing knot sequence. A path on the shifted space `Ω^t` simply has
//! its first knot at `t`; every path takes the value `0` at its first knot.
//! Evaluation between knots interpolates linearly, evaluation after the last
//! knot returns the last value (paths are stopped at their horizon).
//!
//! Because the Euclidean norm is convex along a segment, suprema of
//! `|ω_s|` or of `|ω_s − ω'_s|` over an interval are attained at knots, so
//! the seminorm and pseudometric computed here are exact for this class.

use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{domain, Error, Result};

const TIME_EPS: f64 = 1e-12;

/// Strictly increasing discretisation of `[origin, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return domain("a time grid needs at least two knots");
        }
        if !(knots[0] >= 0.0) {
            return domain(format!("grid origin {} must be nonnegative", knots[0]));
        }
        for w in knots.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return domain(format!("knots must be strictly increasing ({} then {})", w[0], w[1]));
            }
        }
        Ok(Self { knots })
    }

    /// `steps` equal intervals on `[origin, horizon]`.
    pub fn uniform(origin: f64, horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > origin) {
            return domain(format!("invalid uniform grid on [{origin}, {horizon}] with {steps} steps"));
        }
        let dt = (horizon - origin) / steps as f64;
        let mut knots: Vec<f64> = (0..=steps).map(|i| origin + i as f64 * dt).collect();
        knots[steps] = horizon;
        Self::new(knots)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn origin(&self) -> f64 {
        self.knots[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn intervals(&self) -> usize {
        self.knots.len() - 1
    }

    /// Maximum spacing between consecutive knots.
    pub fn step(&self) -> f64 {
        self.knots.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

/// A piecewise-linear `d`-dimensional path anchored at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    knots: Vec<f64>,
    values: Vec<f64>,
    dim: usize,
}

impl DiscretePath {
    /// Builds a path from knots and row-major values (`knots.len() * dim`).
    pub fn new(knots: Vec<f64>, values: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return domain("path dimension must be at least 1");
        }
        if knots.is_empty() {
            return domain("a path needs at least one knot");
        }
        if values.len() != knots.len() * dim {
            return domain(format!(
                "expected {} values for {} knots in dimension {dim}, got {}",
                knots.len() * dim,
                knots.len(),
                values.len()
            ));
        }
        if !(knots[0] >= 0.0) {
            return domain("path origin must be nonnegative");
        }
        for w in knots.windows(2) {
            if !(w[1] > w[0]) {
                return domain(format!("path knots must be strictly increasing ({} then {})", w[0], w[1]));
            }
        }
        if values[..dim].iter().any(|&v| v != 0.0) {
            return domain("paths start at the origin: first value must be 0");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return domain("path values must be finite");
        }
        Ok(Self { knots, values, dim })
    }

    pub(crate) fn from_parts_unchecked(knots: Vec<f64>, values: Vec<f64>, dim: usize) -> Self {
        debug_assert_eq!(values.len(), knots.len() * dim);
        Self { knots, values, dim }
    }

    /// One point per grid knot.
    pub fn from_points(grid: &TimeGrid, points: &[Vec<f64>]) -> Result<Self> {
        if points.len() != grid.len() {
            return domain(format!("{} points for {} knots", points.len(), grid.len()));
        }
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if points.iter().any(|p| p.len() != dim) {
            return domain("all points must share one dimension");
        }
        let values = points.iter().flatten().copied().collect();
        Self::new(grid.knots().to_vec(), values, dim)
    }

    /// Scalar path from a grid and one value per knot.
    pub fn scalar(grid: &TimeGrid, values: &[f64]) -> Result<Self> {
        if values.len() != grid.len() {
            return domain(format!("{} values for {} knots", values.len(), grid.len()));
        }
        Self::new(grid.knots().to_vec(), values.to_vec(), 1)
    }

    pub fn zero(grid: &TimeGrid, dim: usize) -> Self {
        Self {
            knots: grid.knots().to_vec(),
            values: vec![0.0; grid.len() * dim.max(1)],
            dim: dim.max(1),
        }
    }

    /// The trivial path on `Ω^t` consisting of the single knot `t`.
    pub fn at_origin(origin: f64, dim: usize) -> Self {
        Self { knots: vec![origin], values: vec![0.0; dim], dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn origin(&self) -> f64 {
        self.knots[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last_point(&self) -> &[f64] {
        self.point(self.len() - 1)
    }

    /// Index of the last knot `<= t` (0 if `t` precedes the origin).
    pub fn knot_index_at(&self, t: f64) -> usize {
        self.knots.partition_point(|&k| k <= t).saturating_sub(1)
    }

    /// Coordinate `k` at time `t`.
    pub fn coord_at(&self, t: f64, k: usize) -> f64 {
        let i = self.knot_index_at(t);
        let d = self.dim;
        if i + 1 >= self.len() || t <= self.knots[i] {
            return self.values[i * d + k];
        }
        let (t0, t1) = (self.knots[i], self.knots[i + 1]);
        let (v0, v1) = (self.values[i * d + k], self.values[(i + 1) * d + k]);
        v0 + (t - t0) / (t1 - t0) * (v1 - v0)
    }

    /// Point at time `t` (linear interpolation, flat after the horizon).
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        (0..self.dim).map(|k| self.coord_at(t, k)).collect()
    }

    /// Scalar value at `t` (first coordinate).
    pub fn x(&self, t: f64) -> f64 {
        self.coord_at(t, 0)
    }

    /// Maximum of coordinate `k` over `[origin, t]`.
    pub fn coord_max(&self, t: f64, k: usize) -> f64 {
        let i = self.knot_index_at(t);
        let d = self.dim;
        let mut m = f64::NEG_INFINITY;
        for j in 0..=i {
            m = m.max(self.values[j * d + k]);
        }
        m.max(self.coord_at(t, k))
    }

    /// `∫_origin^t ω_s ds` for coordinate `k`, exact for piecewise-linear paths.
    pub fn coord_integral(&self, t: f64, k: usize) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        let mut j = 0;
        while j + 1 < self.len() && self.knots[j + 1] <= t {
            let dt = self.knots[j + 1] - self.knots[j];
            acc += 0.5 * dt * (self.values[j * d + k] + self.values[(j + 1) * d + k]);
            j += 1;
        }
        if t > self.knots[j] {
            let xt = self.coord_at(t, k);
            acc += 0.5 * (t - self.knots[j]) * (self.values[j * d + k] + xt);
        }
        acc
    }

    /// Summary statistics of the path at time `t`.
    pub fn summary(&self, t: f64) -> PathSummary {
        let d = self.dim;
        PathSummary {
            t,
            x: (0..d).map(|k| self.coord_at(t, k)).collect(),
            max: (0..d).map(|k| self.coord_max(t, k)).collect(),
            integral: (0..d).map(|k| self.coord_integral(t, k)).collect(),
        }
    }

    /// The path stopped at `t`: knots up to `t`, with `t` itself as final knot.
    /// Later evaluation is flat, which realises `ω_{·∧t}`.
    pub fn stopped_at(&self, t: f64) -> DiscretePath {
        let i = self.knot_index_at(t);
        let d = self.dim;
        let mut knots = self.knots[..=i].to_vec();
        let mut values = self.values[..(i + 1) * d].to_vec();
        if t > self.knots[i] {
            knots.push(t);
            values.extend(self.value_at(t));
        }
        DiscretePath { knots, values, dim: d }
    }

    /// Applies `f` to every point, keeping the knots. `f(0) = 0` is required.
    pub fn map_points(&self, mut f: impl FnMut(f64, &[f64], &mut [f64])) -> Result<DiscretePath> {
        let d = self.dim;
        let mut values = vec![0.0; self.values.len()];
        for i in 0..self.len() {
            f(self.knots[i], self.point(i), &mut values[i * d..(i + 1) * d]);
        }
        DiscretePath::new(self.knots.clone(), values, d)
    }

    /// Largest increment slope `|ω_{i+1} − ω_i| / (t_{i+1} − t_i)`.
    pub fn lipschitz_constant(&self) -> f64 {
        (1..self.len())
            .map(|i| {
                let dt = self.knots[i] - self.knots[i - 1];
                norm(&diff(self.point(i), self.point(i - 1))) / dt
            })
            .fold(0.0, f64::max)
    }

    /// Largest single increment `|ω_{i+1} − ω_i|`.
    pub fn max_increment(&self) -> f64 {
        (1..self.len())
            .map(|i| norm(&diff(self.point(i), self.point(i - 1))))
            .fold(0.0, f64::max)
    }

    /// Path with `knot` appended; the new knot must lie after the horizon.
    pub(crate) fn push_knot(&mut self, t: f64, point: &[f64]) {
        debug_assert!(t > self.horizon());
        self.knots.push(t);
        self.values.extend_from_slice(point);
    }

    /// Writes the path as CSV with header `t,x1,...,xd`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(csv_header(self.dim, false))?;
        for i in 0..self.len() {
            let mut rec = vec![fmt_f64(self.knots[i])];
            rec.extend(self.point(i).iter().map(|&v| fmt_f64(v)));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.get(0) != Some("t") || headers.len() < 2 {
            return domain("path CSV must start with header column `t`");
        }
        let dim = headers.len() - 1;
        let (mut knots, mut values) = (Vec::new(), Vec::new());
        for rec in rd.records() {
            let rec = rec?;
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Domain(format!("bad number {s:?}: {e}")));
            knots.push(parse(&rec[0])?);
            for k in 0..dim {
                values.push(parse(&rec[k + 1])?);
            }
        }
        Self::new(knots, values, dim)
    }
}

/// Summary statistics `(ω_t, ω̄_t, ∫ω)` per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSummary {
    pub t: f64,
    pub x: Vec<f64>,
    pub max: Vec<f64>,
    pub integral: Vec<f64>,
}

pub(crate) fn csv_header(dim: usize, with_id: bool) -> Vec<String> {
    let mut h = Vec::with_capacity(dim + 2);
    if with_id {
        h.push("path_id".to_string());
    }
    h.push("t".to_string());
    h.extend((1..=dim).map(|k| format!("x{k}")));
    h
}

/// Shortest representation that round-trips exactly; exponent form for
/// very small or very large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn check_time(path: &DiscretePath, t: f64, horizon: Option<f64>) -> Result<()> {
    let hi = horizon.unwrap_or_else(|| path.horizon());
    if !(t >= path.origin() - TIME_EPS && t <= hi + TIME_EPS) {
        return domain(format!("time {t} outside [{}, {hi}]", path.origin()));
    }
    Ok(())
}

/// `‖ω‖_t = sup_{s ≤ t} |ω_s|`.
pub fn seminorm(path: &DiscretePath, t: f64) -> Result<f64> {
    check_time(path, t, None)?;
    let i = path.knot_index_at(t);
    let mut m = 0.0f64;
    for j in 0..=i {
        m = m.max(norm(path.point(j)));
    }
    Ok(m.max(norm(&path.value_at(t))))
}

/// `|t − t'| + sup_s |ω_{s∧t} − ω'_{s∧t'}|`.
pub fn dist_infty(t: f64, a: &DiscretePath, t2: f64, b: &DiscretePath) -> Result<f64> {
    if a.dim() != b.dim() {
        return domain(format!("dimension mismatch: {} vs {}", a.dim(), b.dim()));
    }
    if (a.horizon() - b.horizon()).abs() > TIME_EPS || (a.origin() - b.origin()).abs() > TIME_EPS {
        return domain("paths must share origin and horizon");
    }
    check_time(a, t, None)?;
    check_time(b, t2, None)?;
    let mut times: Vec<f64> = a.knots().iter().chain(b.knots()).copied().chain([t, t2]).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut sup = 0.0f64;
    for &s in &times {
        let pa = a.value_at(s.min(t));
        let pb = b.value_at(s.min(t2));
        sup = sup.max(norm(&diff(&pa, &pb)));
    }
    Ok((t - t2).abs() + sup)
}

/// `ω ⊗_s ω'`: follows `ω` on `[t, s)` and `ω_s + ω'` on `[s, T]`.
pub fn concat(first: &DiscretePath, s: f64, second: &DiscretePath) -> Result<DiscretePath> {
    if first.dim() != second.dim() {
        return domain(format!("dimension mismatch: {} vs {}", first.dim(), second.dim()));
    }
    if s < first.origin() {
        return domain(format!("concatenation time {s} precedes origin {}", first.origin()));
    }
    if second.origin() != s {
        return domain(format!(
            "continuation starts at {} but concatenation time is {s}",
            second.origin()
        ));
    }
    let d = first.dim();
    let i = first.knot_index_at(s);
    let anchor = first.value_at(s);
    let mut knots = Vec::with_capacity(i + second.len() + 1);
    let mut values = Vec::with_capacity((i + second.len() + 1) * d);
    let keep = if first.knots()[i] < s { i + 1 } else { i };
    knots.extend_from_slice(&first.knots()[..keep]);
    values.extend_from_slice(&first.values()[..keep * d]);
    for j in 0..second.len() {
        knots.push(second.knots()[j]);
        values.extend(second.point(j).iter().zip(&anchor).map(|(v, a)| a + v));
    }
    Ok(DiscretePath { knots, values, dim: d })
}

/// Running maximum `max_{s ≤ t} ω_s` of a scalar path.
pub fn running_max(path: &DiscretePath, t: f64) -> Result<f64> {
    if path.dim() != 1 {
        return domain(format!("running maximum needs d = 1, got {}", path.dim()));
    }
    check_time(path, t, None)?;
    Ok(path.coord_max(t, 0))
}

/// A process `u(t, ω)` depending only on `ω` restricted to `[origin, t]`.
pub trait AdaptedFunctional: Send + Sync {
    fn eval(&self, t: f64, path: &DiscretePath) -> f64;
}

impl<F> AdaptedFunctional for F
where
    F: Fn(f64, &DiscretePath) -> f64 + Send + Sync,
{
    fn eval(&self, t: f64, path: &DiscretePath) -> f64 {
        self(t, path)
    }
}

impl AdaptedFunctional for Arc<dyn AdaptedFunctional> {
    fn eval(&self, t: f64, path: &DiscretePath) -> f64 {
        (**self).eval(t, path)
    }
}

/// `X^{s,ω}(·) = X(ω ⊗_s ·)`, a functional on the shifted space `Λ^s`.
#[derive(Clone)]
pub struct ShiftedFunctional {
    inner: Arc<dyn AdaptedFunctional>,
    at: f64,
    prefix: DiscretePath,
}

impl ShiftedFunctional {
    pub fn time(&self) -> f64 {
        self.at
    }

    pub fn prefix(&self) -> &DiscretePath {
        &self.prefix
    }
}

impl AdaptedFunctional for ShiftedFunctional {
    fn eval(&self, t: f64, path: &DiscretePath) -> f64 {
        match concat(&self.prefix, self.at, path) {
            Ok(full) => self.inner.eval(t, &full),
            Err(_) => f64::NAN,
        }
    }
}

/// Shifts `x` at time `s` along the prefix `path`.
pub fn shift_functional(x: Arc<dyn AdaptedFunctional>, s: f64, path: &DiscretePath) -> Result<ShiftedFunctional> {
    if s < path.origin() {
        return domain(format!("shift time {s} precedes the prefix origin {}", path.origin()));
    }
    Ok(ShiftedFunctional { inner: x, at: s, prefix: path.stopped_at(s) })
}

/// Open convex neighbourhood of the origin.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexDomain {
    /// All of `ℝ^d`.
    Whole,
    /// Open Euclidean ball.
    Ball { radius: f64 },
    /// `{x : a_k · x < b_k for all k}`.
    Polytope { normals: Vec<Vec<f64>>, offsets: Vec<f64> },
    Intersection(Vec<ConvexDomain>),
}

impl ConvexDomain {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            ConvexDomain::Whole => true,
            ConvexDomain::Ball { radius } => norm(x) < *radius,
            ConvexDomain::Polytope { normals, offsets } => normals
                .iter()
                .zip(offsets)
                .all(|(a, b)| a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() < *b),
            ConvexDomain::Intersection(parts) => parts.iter().all(|p| p.contains(x)),
        }
    }

    fn validate(&self, dim_hint: Option<usize>) -> Result<()> {
        match self {
            ConvexDomain::Whole => Ok(()),
            ConvexDomain::Ball { radius } => {
                if *radius > 0.0 {
                    Ok(())
                } else {
                    domain("ball radius must be positive")
                }
            }
            ConvexDomain::Polytope { normals, offsets } => {
                if normals.len() != offsets.len() {
                    return domain("polytope needs one offset per normal");
                }
                if let Some(d) = dim_hint {
                    if normals.iter().any(|a| a.len() != d) {
                        return domain("polytope normals must match the dimension");
                    }
                }
                if offsets.iter().any(|&b| !(b > 0.0)) {
                    return domain("the origin must lie strictly inside the polytope");
                }
                Ok(())
            }
            ConvexDomain::Intersection(parts) => parts.iter().try_for_each(|p| p.validate(dim_hint)),
        }
    }
}

/// How a hitting time was triggered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    /// The path left the domain at this knot.
    Spatial,
    /// The deterministic cap was reached.
    Cap,
}

/// A stopping time in the hitting-time class, measured from the path origin.
#[derive(Debug, Clone, PartialEq)]
pub enum HittingTimeSpec {
    /// First exit from `domain`, capped at `origin + cap`.
    Domain { domain: ConvexDomain, cap: f64 },
    /// `inf{s : |ω_s| ≥ ε} ∧ (origin + ε)`.
    Radius { eps: f64 },
}

impl HittingTimeSpec {
    pub fn domain(domain: ConvexDomain, cap: f64) -> Result<Self> {
        let spec = HittingTimeSpec::Domain { domain, cap };
        spec.validate()?;
        Ok(spec)
    }

    pub fn radius(eps: f64) -> Result<Self> {
        let spec = HittingTimeSpec::Radius { eps };
        spec.validate()?;
        Ok(spec)
    }

    /// Cap only: the whole space with a deterministic maturity.
    pub fn horizon(cap: f64) -> Result<Self> {
        Self::domain(ConvexDomain::Whole, cap)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            HittingTimeSpec::Domain { domain: d, cap } => {
                d.validate(None)?;
                if !(*cap > 0.0) {
                    return domain("hitting-time cap must be positive");
                }
                Ok(())
            }
            HittingTimeSpec::Radius { eps } => {
                if !(*eps > 0.0) {
                    return domain("radius must be positive");
                }
                Ok(())
            }
        }
    }

    pub fn cap(&self) -> f64 {
        match self {
            HittingTimeSpec::Domain { cap, .. } => *cap,
            HittingTimeSpec::Radius { eps } => *eps,
        }
    }

    /// Whether the point `x` (relative to the path origin) triggers a spatial exit.
    pub fn exits_at(&self, x: &[f64]) -> bool {
        match self {
            HittingTimeSpec::Domain { domain, .. } => !domain.contains(x),
            HittingTimeSpec::Radius { eps } => norm(x) >= *eps,
        }
    }

    /// First knot index `i ≥ 1` where the spatial exit fires or the cap is reached.
    pub fn first_exit(&self, path: &DiscretePath) -> Option<(usize, ExitKind)> {
        let deadline = path.origin() + self.cap();
        for i in 1..path.len() {
            if self.exits_at(path.point(i)) {
                return Some((i, ExitKind::Spatial));
            }
            if path.knots()[i] >= deadline - TIME_EPS {
                return Some((i, ExitKind::Cap));
            }
        }
        None
    }

    /// Evaluates the hitting time on `path`; the result lies in `(origin, horizon]`.
    pub fn hitting_time(&self, path: &DiscretePath) -> f64 {
        let deadline = path.origin() + self.cap();
        let exit = match self.first_exit(path) {
            Some((i, _)) => path.knots()[i],
            None => path.horizon(),
        };
        exit.min(deadline).min(path.horizon().max(path.origin()))
    }
}

/// Functional form of [`HittingTimeSpec::hitting_time`].
pub fn hitting_time(spec: &HittingTimeSpec, path: &DiscretePath) -> f64 {
    spec.hitting_time(path)
}

/// `(ĥ₁ ∧ ĥ₂)` as a single domain spec: intersected domains, smaller cap.
pub fn intersect_specs(a: &HittingTimeSpec, b: &HittingTimeSpec) -> HittingTimeSpec {
    let as_domain = |s: &HittingTimeSpec| match s {
        HittingTimeSpec::Domain { domain, .. } => domain.clone(),
        HittingTimeSpec::Radius { eps } => ConvexDomain::Ball { radius: *eps },
    };
    HittingTimeSpec::Domain {
        domain: ConvexDomain::Intersection(vec![as_domain(a), as_domain(b)]),
        cap: a.cap().min(b.cap()),
    }
}

/// Writes a batch of paths with a leading `path_id` column.
pub fn write_batch_csv<W: Write>(paths: &[DiscretePath], w: W) -> Result<()> {
    let dim = paths.first().map(|p| p.dim()).unwrap_or(1);
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(csv_header(dim, true))?;
    for (id, p) in paths.iter().enumerate() {
        for i in 0..p.len() {
            let mut rec = vec![id.to_string(), fmt_f64(p.knots()[i])];
            rec.extend(p.point(i).iter().map(|&v| fmt_f64(v)));
            wr.write_record(&rec)?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DiscretePath {
        DiscretePath::scalar(&TimeGrid::new(vec![0.0, 0.5, 1.0]).unwrap(), &[0.0, 1.0, -2.0]).unwrap()
    }

    #[test]
    fn seminorm_examples() {
        let w = sample();
        assert_eq!(seminorm(&w, 0.5).unwrap(), 1.0);
        assert_eq!(seminorm(&w, 1.0).unwrap(), 2.0);
        let z = DiscretePath::zero(&TimeGrid::uniform(0.0, 1.0, 4).unwrap(), 2);
        assert_eq!(seminorm(&z, 0.3).unwrap(), 0.0);
        assert!(matches!(seminorm(&w, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn dist_examples() {
        let w = sample();
        let z = DiscretePath::zero(&TimeGrid::new(vec![0.0, 0.5, 1.0]).unwrap(), 1);
        assert_eq!(dist_infty(0.7, &w, 0.7, &w).unwrap(), 0.0);
        assert_eq!(dist_infty(0.5, &w, 1.0, &z).unwrap(), 1.5);
        let other = DiscretePath::zero(&TimeGrid::new(vec![0.0, 0.5, 1.0]).unwrap(), 2);
        assert!(dist_infty(0.5, &w, 0.5, &other).is_err());
    }

    #[test]
    fn dist_ignores_changes_after_stopping_time() {
        let w = sample();
        let shifted = w.map_points(|t, p, out| out[0] = p[0] + if t > 0.5 { 3.0 } else { 0.0 }).unwrap();
        assert_eq!(dist_infty(0.5, &w, 0.5, &shifted).unwrap(), 0.0);
    }

    #[test]
    fn concat_examples() {
        let a = DiscretePath::new(vec![0.0, 0.5], vec![0.0, 1.0], 1).unwrap();
        let b = DiscretePath::new(vec![0.5, 1.0], vec![0.0, 2.0], 1).unwrap();
        let c = concat(&a, 0.5, &b).unwrap();
        assert_eq!(c.knots(), &[0.0, 0.5, 1.0]);
        assert_eq!(c.values(), &[0.0, 1.0, 3.0]);

        let zero_tail = DiscretePath::new(vec![0.5, 1.0], vec![0.0, 0.0], 1).unwrap();
        let w = sample();
        let flat = concat(&w, 0.5, &zero_tail).unwrap();
        assert_eq!(flat.value_at(1.0), vec![1.0]);

        let z0 = DiscretePath::at_origin(0.0, 1);
        assert_eq!(concat(&z0, 0.0, &w).unwrap(), w);
        assert!(concat(&a, 0.4, &b).is_err());
    }

    #[test]
    fn concat_refines_between_knots() {
        let w = sample();
        let tail = DiscretePath::new(vec![0.25, 1.0], vec![0.0, 1.0], 1).unwrap();
        let c = concat(&w, 0.25, &tail).unwrap();
        assert_eq!(c.knots(), &[0.0, 0.25, 1.0]);
        assert_eq!(c.values(), &[0.0, 0.5, 1.5]);
    }

    #[test]
    fn hitting_examples() {
        let z = DiscretePath::zero(&TimeGrid::uniform(0.0, 1.0, 10).unwrap(), 1);
        let ball = HittingTimeSpec::domain(ConvexDomain::Ball { radius: 1.0 }, 0.7).unwrap();
        assert!((ball.hitting_time(&z) - 0.7).abs() < 1e-12);

        let w = DiscretePath::scalar(&TimeGrid::new(vec![0.0, 0.5, 1.0]).unwrap(), &[0.0, 0.4, 1.2]).unwrap();
        let r = HittingTimeSpec::radius(1.0).unwrap();
        assert_eq!(r.hitting_time(&w), 1.0);
        assert_eq!(r.first_exit(&w), Some((2, ExitKind::Spatial)));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(HittingTimeSpec::radius(0.0).is_err());
        assert!(HittingTimeSpec::domain(ConvexDomain::Ball { radius: 1.0 }, 0.0).is_err());
        let bad = ConvexDomain::Polytope { normals: vec![vec![1.0]], offsets: vec![-0.5] };
        assert!(HittingTimeSpec::domain(bad, 1.0).is_err());
    }

    #[test]
    fn running_max_examples() {
        let w = sample();
        assert_eq!(running_max(&w, 1.0).unwrap(), 1.0);
        let z = DiscretePath::zero(&TimeGrid::uniform(0.0, 1.0, 3).unwrap(), 1);
        assert_eq!(running_max(&z, 1.0).unwrap(), 0.0);
        let up = DiscretePath::scalar(&TimeGrid::uniform(0.0, 1.0, 4).unwrap(), &[0.0, 0.1, 0.3, 0.6, 1.0]).unwrap();
        assert_eq!(running_max(&up, 0.6).unwrap(), up.x(0.6));
        let two = DiscretePath::zero(&TimeGrid::uniform(0.0, 1.0, 3).unwrap(), 2);
        assert!(running_max(&two, 1.0).is_err());
    }

    #[test]
    fn integral_is_trapezoid_exact() {
        let g = TimeGrid::uniform(0.0, 1.0, 2).unwrap();
        let w = DiscretePath::scalar(&g, &[0.0, 1.0, 1.0]).unwrap();
        assert!((w.coord_integral(1.0, 0) - 0.75).abs() < 1e-15);
        assert!((w.coord_integral(0.25, 0) - 0.0625).abs() < 1e-15);
        // flat after the horizon
        assert!((w.coord_integral(1.5, 0) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn shift_examples() {
        let constant: Arc<dyn AdaptedFunctional> = Arc::new(|_: f64, _: &DiscretePath| 3.5);
        let w = sample();
        let s = shift_functional(constant, 0.5, &w).unwrap();
        let tail = DiscretePath::new(vec![0.5, 1.0], vec![0.0, 0.7], 1).unwrap();
        assert_eq!(s.eval(1.0, &tail), 3.5);

        let terminal: Arc<dyn AdaptedFunctional> = Arc::new(|t: f64, p: &DiscretePath| p.x(t));
        let s = shift_functional(terminal, 0.5, &w).unwrap();
        assert_eq!(s.eval(1.0, &tail), 1.0 + 0.7);
    }

    #[test]
    fn csv_round_trip() {
        let w = DiscretePath::new(vec![0.0, 0.1, 0.3], vec![0.0, 0.0, 0.1 + 0.2, -1e-300, 7.25, 1.0 / 3.0], 2).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2\n"));
        assert_eq!(DiscretePath::read_csv(buf.as_slice()).unwrap(), w);
    }

    #[test]
    fn path_validation() {
        assert!(DiscretePath::new(vec![0.0, 1.0], vec![1.0, 2.0], 1).is_err());
        assert!(DiscretePath::new(vec![0.0, 0.0], vec![0.0, 2.0], 1).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.4]).is_err());
        let g = TimeGrid::new(vec![0.0, 0.1, 0.5]).unwrap();
        assert!((g.step() - 0.4).abs() < 1e-15);
    }
}
