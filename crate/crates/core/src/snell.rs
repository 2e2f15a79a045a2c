//! Nonlinear optimal stopping on control trees.
//!
//! A tree hangs a fixed alphabet of increments below every node; each
//! lattice control is a probability vector over that alphabet, so the
//! one-step expectation under control `m` is a weighted sum of child values
//! and the sup over the lattice is taken node by node (feedback controls).
//!
//! The default second-order kernel is a locally consistent trinomial chain:
//! per axis the increment is `−h, 0, +h` with `h = √(2LΔt + L²Δt²)`, whose
//! mean is `αΔt` and whose second moment is `max(β²Δt + (αΔt)², |αΔt|h)`.

use crate::error::{domain, Error, Result};
use crate::measures::ControlLattice;
use crate::pathspace::{AdaptedFunctional, DiscretePath, ExitKind, HittingTimeSpec};

const PROB_TOL: f64 = 1e-12;

/// Shared alphabet of child increments plus one probability vector per control.
#[derive(Debug, Clone)]
pub struct TreeKernel {
    dim: usize,
    increments: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl TreeKernel {
    pub fn new(dim: usize, increments: Vec<Vec<f64>>, probs: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        if increments.is_empty() || increments.iter().any(|v| v.len() != dim) {
            return domain("every increment must have the tree dimension");
        }
        if probs.is_empty() || probs.len() != labels.len() {
            return domain("one label per control is required");
        }
        for (m, p) in probs.iter().enumerate() {
            if p.len() != increments.len() {
                return domain(format!("control {m}: {} probabilities for {} children", p.len(), increments.len()));
            }
            let s: f64 = p.iter().sum();
            if p.iter().any(|&q| !(q >= 0.0)) || (s - 1.0).abs() > PROB_TOL {
                return domain(format!("control {m}: not a probability vector (sum {s})"));
            }
        }
        Ok(Self { dim, increments, probs, labels })
    }

    /// Trinomial kernel for a lattice with diagonal diffusions.
    pub fn second_order(lattice: &ControlLattice, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return domain("tree step must be positive");
        }
        let d = lattice.dim();
        let l = lattice.bound();
        let h = (2.0 * l * dt + l * l * dt * dt).sqrt();
        let mut axis_probs = Vec::with_capacity(lattice.len());
        for m in lattice.members() {
            let mut per_axis = Vec::with_capacity(d);
            for k in 0..d {
                for j in 0..d {
                    if j != k && m.diffusion[(k, j)] != 0.0 {
                        return domain("the trinomial kernel needs diagonal diffusions");
                    }
                }
                let mean = m.drift[k] * dt;
                let b = m.diffusion[(k, k)];
                let v = (b * b * dt + mean * mean).max(mean.abs() * h);
                let r = (v / (h * h)).min(1.0);
                let up = (0.5 * (r + mean / h)).max(0.0);
                let down = (0.5 * (r - mean / h)).max(0.0);
                per_axis.push([down, (1.0 - up - down).max(0.0), up]);
            }
            axis_probs.push(per_axis);
        }
        let count = 3usize.pow(d as u32);
        let mut increments = Vec::with_capacity(count);
        for c in 0..count {
            let mut inc = vec![0.0; d];
            let mut r = c;
            for v in inc.iter_mut() {
                *v = [-h, 0.0, h][r % 3];
                r /= 3;
            }
            increments.push(inc);
        }
        let probs = axis_probs
            .iter()
            .map(|per_axis| {
                (0..count)
                    .map(|c| {
                        let mut r = c;
                        let mut p = 1.0;
                        for axis in per_axis {
                            p *= axis[r % 3];
                            r /= 3;
                        }
                        p
                    })
                    .collect()
            })
            .collect();
        let labels = lattice.members().iter().map(|m| m.label()).collect();
        Self::new(d, increments, probs, labels)
    }

    /// Deterministic kernel: one child per distinct drift, reached with probability one.
    pub fn first_order(lattice: &ControlLattice, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return domain("tree step must be positive");
        }
        if lattice.members().iter().any(|m| m.diffusion.iter().any(|&b| b != 0.0)) {
            return domain("the first-order kernel needs a drift-only lattice");
        }
        let drifts = lattice.drifts();
        let increments: Vec<Vec<f64>> = drifts.iter().map(|a| a.iter().map(|x| x * dt).collect()).collect();
        let probs = lattice
            .members()
            .iter()
            .map(|m| {
                let j = drifts.iter().position(|a| *a == m.drift).unwrap();
                (0..drifts.len()).map(|c| if c == j { 1.0 } else { 0.0 }).collect()
            })
            .collect();
        let labels = lattice.members().iter().map(|m| m.label()).collect();
        Self::new(lattice.dim(), increments, probs, labels)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn branching(&self) -> usize {
        self.increments.len()
    }

    pub fn controls(&self) -> usize {
        self.probs.len()
    }

    pub fn increments(&self) -> &[Vec<f64>] {
        &self.increments
    }

    pub fn probs(&self, control: usize) -> &[f64] {
        &self.probs[control]
    }

    pub fn label(&self, control: usize) -> &str {
        &self.labels[control]
    }
}

/// Depth, step and size cap of a tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeSpec {
    pub depth: usize,
    pub dt: f64,
    /// Time of the root (the origin of the shifted space).
    pub origin: f64,
    pub max_nodes: usize,
}

impl TreeSpec {
    pub const DEFAULT_MAX_NODES: usize = 2_000_000;

    pub fn new(depth: usize, dt: f64) -> Self {
        Self { depth, dt, origin: 0.0, max_nodes: Self::DEFAULT_MAX_NODES }
    }

    pub fn with_origin(mut self, origin: f64) -> Self {
        self.origin = origin;
        self
    }

    pub fn time(&self, layer: usize) -> f64 {
        if layer == self.depth {
            self.origin + self.depth as f64 * self.dt
        } else {
            self.origin + layer as f64 * self.dt
        }
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.depth)
    }
}

/// Layered non-recombining tree of path prefixes.
#[derive(Debug, Clone)]
pub struct Tree {
    spec: TreeSpec,
    kernel: TreeKernel,
    /// Per layer: parent index in the previous layer.
    parent: Vec<Vec<u32>>,
    /// Per layer: first child in the next layer, `u32::MAX` for leaves.
    first_child: Vec<Vec<u32>>,
    /// Per layer: node points, `dim` values each.
    points: Vec<Vec<f64>>,
}

impl Tree {
    /// Builds the tree; nodes for which `stop(layer, point)` holds get no children.
    pub fn build(spec: TreeSpec, kernel: TreeKernel, stop: impl Fn(usize, &[f64]) -> bool) -> Result<Self> {
        if !(spec.dt > 0.0) {
            return domain("tree step must be positive");
        }
        let d = kernel.dim();
        let b = kernel.branching();
        let mut parent = vec![vec![u32::MAX]];
        let mut points = vec![vec![0.0; d]];
        let mut first_child: Vec<Vec<u32>> = Vec::new();
        let mut total = 1usize;
        for k in 0..spec.depth {
            let n = parent[k].len();
            let mut fc = vec![u32::MAX; n];
            let mut next_parent = Vec::new();
            let mut next_points = Vec::new();
            for i in 0..n {
                let p = &points[k][i * d..(i + 1) * d];
                if k > 0 && stop(k, p) {
                    continue;
                }
                total += b;
                if total > spec.max_nodes {
                    return Err(Error::Resource(format!(
                        "tree with branching {b} and depth {} exceeds {} nodes",
                        spec.depth, spec.max_nodes
                    )));
                }
                fc[i] = next_parent.len() as u32;
                for inc in kernel.increments() {
                    next_parent.push(i as u32);
                    next_points.extend(p.iter().zip(inc).map(|(x, y)| x + y));
                }
            }
            first_child.push(fc);
            parent.push(next_parent);
            points.push(next_points);
        }
        first_child.push(vec![u32::MAX; parent[spec.depth].len()]);
        Ok(Self { spec, kernel, parent, first_child, points })
    }

    pub fn spec(&self) -> &TreeSpec {
        &self.spec
    }

    pub fn kernel(&self) -> &TreeKernel {
        &self.kernel
    }

    pub fn layers(&self) -> usize {
        self.parent.len()
    }

    pub fn layer_len(&self, k: usize) -> usize {
        self.parent[k].len()
    }

    pub fn node_count(&self) -> usize {
        self.parent.iter().map(Vec::len).sum()
    }

    pub fn point(&self, k: usize, i: usize) -> &[f64] {
        let d = self.kernel.dim();
        &self.points[k][i * d..(i + 1) * d]
    }

    pub fn parent(&self, k: usize, i: usize) -> usize {
        self.parent[k][i] as usize
    }

    /// Index of the first child in layer `k + 1`, if any.
    pub fn first_child(&self, k: usize, i: usize) -> Option<usize> {
        match self.first_child[k][i] {
            u32::MAX => None,
            c => Some(c as usize),
        }
    }

    /// The path prefix ending at node `(k, i)`, with knots on the tree grid.
    pub fn path(&self, k: usize, i: usize) -> DiscretePath {
        let d = self.kernel.dim();
        let mut idx = vec![0usize; k + 1];
        let mut cur = i;
        for j in (0..=k).rev() {
            idx[j] = cur;
            if j > 0 {
                cur = self.parent(j, cur);
            }
        }
        let knots: Vec<f64> = (0..=k).map(|j| self.spec.time(j)).collect();
        let mut values = Vec::with_capacity((k + 1) * d);
        for (j, &n) in idx.iter().enumerate() {
            values.extend_from_slice(self.point(j, n));
        }
        DiscretePath::from_parts_unchecked(knots, values, d)
    }

    /// `Σ_c p_m(c) v(child c)` for control `m`.
    pub fn child_expectation(&self, k: usize, i: usize, m: usize, next: &[f64]) -> Option<f64> {
        let c0 = self.first_child(k, i)?;
        let p = self.kernel.probs(m);
        let mut s = 0.0;
        for (c, &q) in p.iter().enumerate() {
            if q != 0.0 {
                s += q * next[c0 + c];
            }
        }
        Some(s)
    }
}

fn exit_kind(h: &HittingTimeSpec, spec: &TreeSpec, k: usize, point: &[f64]) -> Option<ExitKind> {
    if k == 0 {
        return None;
    }
    if h.exits_at(point) {
        return Some(ExitKind::Spatial);
    }
    if spec.time(k) >= spec.origin + h.cap() - 1e-12 {
        return Some(ExitKind::Cap);
    }
    None
}

/// Snell envelope together with the reward and decisions on every node.
#[derive(Debug, Clone)]
pub struct StoppingTree {
    tree: Tree,
    reward: Vec<Vec<f64>>,
    envelope: Vec<Vec<f64>>,
    continuation: Vec<Vec<f64>>,
    best_control: Vec<Vec<u32>>,
    exit: Vec<Vec<Option<ExitKind>>>,
}

impl StoppingTree {
    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn y0(&self) -> f64 {
        self.envelope[0][0]
    }

    /// Frozen reward `X̂` at node `(k, i)`.
    pub fn reward(&self, k: usize, i: usize) -> f64 {
        self.reward[k][i]
    }

    pub fn envelope(&self, k: usize, i: usize) -> f64 {
        self.envelope[k][i]
    }

    /// Best one-step expectation of the envelope, `None` on leaves.
    pub fn continuation(&self, k: usize, i: usize) -> Option<f64> {
        self.tree.first_child(k, i).map(|_| self.continuation[k][i])
    }

    pub fn best_control(&self, k: usize, i: usize) -> Option<usize> {
        self.tree.first_child(k, i).map(|_| self.best_control[k][i] as usize)
    }

    pub fn exit(&self, k: usize, i: usize) -> Option<ExitKind> {
        self.exit[k][i]
    }

    /// Whether `τ*` stops at this node (`Y = X̂`).
    pub fn stops(&self, k: usize, i: usize) -> bool {
        self.envelope[k][i] == self.reward[k][i]
    }

    /// Overwrites one envelope value; used to build negative controls.
    pub fn set_envelope(&mut self, k: usize, i: usize, value: f64) {
        self.envelope[k][i] = value;
    }

    /// `E[τ*]` under the maximising feedback controls.
    pub fn tau_star_mean(&self) -> f64 {
        let spec = self.tree.spec();
        let mut mass = vec![1.0];
        let mut acc = 0.0;
        for k in 0..self.tree.layers() {
            let mut next = vec![0.0; if k + 1 < self.tree.layers() { self.tree.layer_len(k + 1) } else { 0 }];
            for (i, &w) in mass.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                match self.tree.first_child(k, i) {
                    Some(c0) if !self.stops(k, i) => {
                        let m = self.best_control[k][i] as usize;
                        for (c, &q) in self.tree.kernel().probs(m).iter().enumerate() {
                            next[c0 + c] += w * q;
                        }
                    }
                    _ => acc += w * spec.time(k),
                }
            }
            mass = next;
        }
        acc
    }
}

/// A tree pruned at a hitting time, with the exit type of every node.
#[derive(Debug, Clone)]
pub struct HittingTree {
    tree: Tree,
    exit: Vec<Vec<Option<ExitKind>>>,
}

impl HittingTree {
    pub fn build(h: &HittingTimeSpec, kernel: &TreeKernel, spec: TreeSpec) -> Result<Self> {
        h.validate()?;
        let tree = Tree::build(spec, kernel.clone(), |k, p| exit_kind(h, &spec, k, p).is_some())?;
        let exit = (0..tree.layers())
            .map(|k| (0..tree.layer_len(k)).map(|i| exit_kind(h, &spec, k, tree.point(k, i))).collect())
            .collect();
        Ok(Self { tree, exit })
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn exit(&self, k: usize, i: usize) -> Option<ExitKind> {
        self.exit[k][i]
    }

    /// `X(t_k, path(k, i))` on every node.
    pub fn evaluate(&self, x: &dyn AdaptedFunctional) -> Result<Vec<Vec<f64>>> {
        let tree = &self.tree;
        (0..tree.layers())
            .map(|k| {
                let t = tree.spec().time(k);
                (0..tree.layer_len(k))
                    .map(|i| {
                        let v = x.eval(t, &tree.path(k, i));
                        if v.is_finite() {
                            Ok(v)
                        } else {
                            Err(Error::Evaluation(format!("reward is {v} at layer {k}, node {i}")))
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Frozen reward `X̂`: spatial exits keep the value at the pre-exit knot.
    pub fn freeze(&self, raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..self.tree.layers())
            .map(|k| {
                (0..self.tree.layer_len(k))
                    .map(|i| match self.exit[k][i] {
                        Some(ExitKind::Spatial) => raw[k - 1][self.tree.parent(k, i)],
                        _ => raw[k][i],
                    })
                    .collect()
            })
            .collect()
    }

    /// Root value of `S̄^L` for raw rewards, without storing the envelope.
    pub fn upper_value(&self, raw: &[Vec<f64>]) -> f64 {
        let reward = self.freeze(raw);
        let tree = &self.tree;
        let mut next: Vec<f64> = Vec::new();
        for k in (0..tree.layers()).rev() {
            let mut y = vec![0.0; tree.layer_len(k)];
            for (i, yi) in y.iter_mut().enumerate() {
                let xh = reward[k][i];
                *yi = match tree.first_child(k, i) {
                    None => xh,
                    Some(_) => xh.max(best_one_step(tree, k, i, &next).1),
                };
            }
            next = y;
        }
        next[0]
    }

    /// Root value of `S̲^L = −S̄^L[−X]`.
    pub fn lower_value(&self, raw: &[Vec<f64>]) -> f64 {
        let neg: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        -self.upper_value(&neg)
    }

    /// Full backward induction for `S̄^L`.
    pub fn envelope(self, raw: &[Vec<f64>]) -> StoppingTree {
        let reward = self.freeze(raw);
        let HittingTree { tree, exit } = self;
        let layers = tree.layers();
        let mut envelope: Vec<Vec<f64>> = vec![Vec::new(); layers];
        let mut continuation: Vec<Vec<f64>> = vec![Vec::new(); layers];
        let mut best_control: Vec<Vec<u32>> = vec![Vec::new(); layers];
        for k in (0..layers).rev() {
            let n = tree.layer_len(k);
            let mut y = vec![0.0; n];
            let mut cont = vec![f64::NAN; n];
            let mut arg = vec![u32::MAX; n];
            for i in 0..n {
                let xh = reward[k][i];
                if tree.first_child(k, i).is_none() {
                    y[i] = xh;
                    continue;
                }
                let (m, c) = best_one_step(&tree, k, i, &envelope[k + 1]);
                cont[i] = c;
                arg[i] = m as u32;
                y[i] = if xh >= c { xh } else { c };
            }
            envelope[k] = y;
            continuation[k] = cont;
            best_control[k] = arg;
        }
        StoppingTree { tree, reward, envelope, continuation, best_control, exit }
    }
}

/// Builds `X̂` on the tree and runs the backward induction for `S̄^L`.
pub fn snell_envelope(
    x: &dyn AdaptedFunctional,
    h: &HittingTimeSpec,
    kernel: &TreeKernel,
    spec: TreeSpec,
) -> Result<StoppingTree> {
    let ht = HittingTree::build(h, kernel, spec)?;
    let raw = ht.evaluate(x)?;
    Ok(ht.envelope(&raw))
}

fn best_one_step(tree: &Tree, k: usize, i: usize, next: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for m in 0..tree.kernel().controls() {
        let v = tree.child_expectation(k, i, m, next).unwrap();
        if v > best.1 {
            best = (m, v);
        }
    }
    best
}

/// `S̲^L[X] = −S̄^L[−X]`: returns the envelope of `−X`, whose root value is `−S̲`.
pub fn lower_snell_value(
    x: &dyn AdaptedFunctional,
    h: &HittingTimeSpec,
    kernel: &TreeKernel,
    spec: TreeSpec,
) -> Result<f64> {
    let neg = |t: f64, p: &DiscretePath| -x.eval(t, p);
    Ok(-snell_envelope(&neg, h, kernel, spec)?.y0())
}

/// Kind of supermartingale defect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    BelowReward,
    BelowContinuation,
    NotMartingaleBeforeStop,
    TerminalMismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub layer: usize,
    pub node: usize,
    pub kind: ViolationKind,
}

/// Re-derives every DP relation from the stored values and reports defects.
pub fn verify_supermartingale(st: &StoppingTree) -> Vec<Violation> {
    let tree = st.tree();
    let mut out = Vec::new();
    for k in 0..tree.layers() {
        for i in 0..tree.layer_len(k) {
            let y = st.envelope(k, i);
            let xh = st.reward(k, i);
            let mut flag = |kind| out.push(Violation { layer: k, node: i, kind });
            if y < xh {
                flag(ViolationKind::BelowReward);
            }
            match tree.first_child(k, i) {
                None => {
                    if y != xh {
                        flag(ViolationKind::TerminalMismatch);
                    }
                }
                Some(_) => {
                    let (_, c) = best_one_step(tree, k, i, &st.envelope[k + 1]);
                    if y < c {
                        flag(ViolationKind::BelowContinuation);
                    } else if y != xh && y != c {
                        flag(ViolationKind::NotMartingaleBeforeStop);
                    }
                }
            }
        }
    }
    out
}

/// Largest depth accepted by [`brute_force_stopping`].
pub const BRUTE_FORCE_MAX_DEPTH: usize = 10;
const ENUMERATION_CAP: usize = 200_000;

/// Independent oracle for the optimal stopping value.
///
/// Small instances enumerate the full set of values reachable by some
/// stopping rule and feedback control; larger ones recurse over the
/// stop/continue choice, rebuilding every path and hitting time from scratch.
pub fn brute_force_stopping(
    x: &dyn AdaptedFunctional,
    h: &HittingTimeSpec,
    kernel: &TreeKernel,
    spec: TreeSpec,
) -> Result<f64> {
    if spec.depth > BRUTE_FORCE_MAX_DEPTH {
        return Err(Error::Resource(format!(
            "brute force limited to depth {BRUTE_FORCE_MAX_DEPTH}, got {}",
            spec.depth
        )));
    }
    h.validate()?;
    let root = DiscretePath::at_origin(spec.origin, kernel.dim());
    let oracle = Oracle { x, h, kernel, spec };
    if let Some(set) = oracle.value_set(&root, 0)? {
        return Ok(set.into_iter().fold(f64::NEG_INFINITY, f64::max));
    }
    oracle.value(&root, 0)
}

struct Oracle<'a> {
    x: &'a dyn AdaptedFunctional,
    h: &'a HittingTimeSpec,
    kernel: &'a TreeKernel,
    spec: TreeSpec,
}

impl Oracle<'_> {
    fn child(&self, path: &DiscretePath, k: usize, c: usize) -> DiscretePath {
        let mut p = path.clone();
        let next: Vec<f64> = path.last_point().iter().zip(&self.kernel.increments()[c]).map(|(a, b)| a + b).collect();
        p.push_knot(self.spec.time(k + 1), &next);
        p
    }

    /// Reward if the path is already stopped (exited or terminal).
    fn terminal_reward(&self, path: &DiscretePath, k: usize) -> Option<f64> {
        if let Some((i, kind)) = self.h.first_exit(path) {
            let t = path.knots()[i];
            return Some(match kind {
                ExitKind::Spatial => {
                    let s = path.knots()[i - 1];
                    self.x.eval(s, &path.stopped_at(s))
                }
                ExitKind::Cap => self.x.eval(t, &path.stopped_at(t)),
            });
        }
        (k == self.spec.depth).then(|| self.x.eval(path.horizon(), path))
    }

    fn check(v: f64) -> Result<f64> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation(format!("reward is {v}")))
        }
    }

    fn value(&self, path: &DiscretePath, k: usize) -> Result<f64> {
        if let Some(v) = self.terminal_reward(path, k) {
            return Self::check(v);
        }
        let stop = Self::check(self.x.eval(path.horizon(), path))?;
        let children: Vec<f64> = (0..self.kernel.branching())
            .map(|c| self.value(&self.child(path, k, c), k + 1))
            .collect::<Result<_>>()?;
        let mut best = stop;
        for m in 0..self.kernel.controls() {
            let mut s = 0.0;
            for (c, &q) in self.kernel.probs(m).iter().enumerate() {
                if q != 0.0 {
                    s += q * children[c];
                }
            }
            if s > best {
                best = s;
            }
        }
        Ok(best)
    }

    /// All values reachable by some rule; `None` when the set grows too large.
    fn value_set(&self, path: &DiscretePath, k: usize) -> Result<Option<Vec<f64>>> {
        if let Some(v) = self.terminal_reward(path, k) {
            return Ok(Some(vec![Self::check(v)?]));
        }
        let stop = Self::check(self.x.eval(path.horizon(), path))?;
        let mut child_sets = Vec::with_capacity(self.kernel.branching());
        let mut combos = 1usize;
        for c in 0..self.kernel.branching() {
            match self.value_set(&self.child(path, k, c), k + 1)? {
                Some(s) => {
                    combos = combos.saturating_mul(s.len());
                    child_sets.push(s);
                }
                None => return Ok(None),
            }
        }
        if combos.saturating_mul(self.kernel.controls()) > ENUMERATION_CAP {
            return Ok(None);
        }
        let mut out = vec![stop];
        for m in 0..self.kernel.controls() {
            let p = self.kernel.probs(m);
            let mut choice = vec![0usize; child_sets.len()];
            loop {
                let mut s = 0.0;
                for (c, &q) in p.iter().enumerate() {
                    if q != 0.0 {
                        s += q * child_sets[c][choice[c]];
                    }
                }
                out.push(s);
                let mut j = 0;
                while j < choice.len() {
                    choice[j] += 1;
                    if choice[j] < child_sets[j].len() {
                        break;
                    }
                    choice[j] = 0;
                    j += 1;
                }
                if j == choice.len() {
                    break;
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        Ok(Some(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{build_lattice, ControlPair, Refinement};
    use crate::pathspace::ConvexDomain;

    fn kernel(l: f64, dt: f64) -> TreeKernel {
        TreeKernel::second_order(&build_lattice(l, 1, Refinement::MINIMAL).unwrap(), dt).unwrap()
    }

    #[test]
    fn kernel_is_locally_consistent() {
        let lat = build_lattice(1.0, 1, Refinement::default()).unwrap();
        let dt = 0.1;
        let k = TreeKernel::second_order(&lat, dt).unwrap();
        for (m, pair) in lat.members().iter().enumerate() {
            let p = k.probs(m);
            let mean: f64 = p.iter().zip(k.increments()).map(|(q, v)| q * v[0]).sum();
            assert!((mean - pair.drift[0] * dt).abs() < 1e-14);
            let second: f64 = p.iter().zip(k.increments()).map(|(q, v)| q * v[0] * v[0]).sum();
            let b = pair.diffusion[(0, 0)];
            assert!(second + 1e-14 >= b * b * dt + mean * mean);
        }
    }

    #[test]
    fn decreasing_reward_stops_immediately() {
        let x = |t: f64, _: &DiscretePath| 1.0 - t;
        let h = HittingTimeSpec::horizon(1.0).unwrap();
        let st = snell_envelope(&x, &h, &kernel(1.0, 0.25), TreeSpec::new(4, 0.25)).unwrap();
        assert_eq!(st.y0(), 1.0);
        assert_eq!(st.tau_star_mean(), 0.0);
    }

    #[test]
    fn increasing_reward_waits_until_maturity() {
        let x = |t: f64, _: &DiscretePath| t;
        let h = HittingTimeSpec::horizon(1.0).unwrap();
        let st = snell_envelope(&x, &h, &kernel(1.0, 0.25), TreeSpec::new(4, 0.25)).unwrap();
        assert_eq!(st.y0(), 1.0);
        assert_eq!(st.tau_star_mean(), 1.0);
        assert!(verify_supermartingale(&st).is_empty());
    }

    #[test]
    fn absolute_value_matches_brute_force() {
        let x = |t: f64, p: &DiscretePath| p.x(t).abs();
        let h = HittingTimeSpec::horizon(1.0).unwrap();
        let k = kernel(1.0, 0.125);
        let spec = TreeSpec::new(8, 0.125);
        let st = snell_envelope(&x, &h, &k, spec).unwrap();
        let bf = brute_force_stopping(&x, &h, &k, spec).unwrap();
        assert!((st.y0() - bf).abs() <= 1e-12, "{} vs {bf}", st.y0());
        assert!(verify_supermartingale(&st).is_empty());
    }

    #[test]
    fn hand_instance_depth_two() {
        let dt = 0.5;
        let x = |t: f64, p: &DiscretePath| if t == 0.5 && p.x(t) > 0.0 { 2.0 } else { 0.0 };
        let lat = crate::measures::ControlLattice::from_members(
            1.0,
            vec![ControlPair::zero(1), ControlPair::scalar(1, &[0.0], 2f64.sqrt()).unwrap()],
        )
        .unwrap();
        let k = TreeKernel::second_order(&lat, dt).unwrap();
        let h = HittingTimeSpec::horizon(1.0).unwrap();
        let spec = TreeSpec::new(2, dt);
        let st = snell_envelope(&x, &h, &k, spec).unwrap();
        let expected = 2.0 / (2.0 + dt);
        assert!((st.y0() - expected).abs() < 1e-15);
        assert_eq!(brute_force_stopping(&x, &h, &k, spec).unwrap(), st.y0());
    }

    #[test]
    fn constant_reward() {
        let x = |_: f64, _: &DiscretePath| 0.3;
        let h = HittingTimeSpec::radius(0.5).unwrap();
        let k = kernel(1.0, 0.1);
        let spec = TreeSpec::new(5, 0.1);
        assert_eq!(brute_force_stopping(&x, &h, &k, spec).unwrap(), 0.3);
        assert_eq!(snell_envelope(&x, &h, &k, spec).unwrap().y0(), 0.3);
    }

    #[test]
    fn corrupted_node_is_flagged() {
        let x = |t: f64, p: &DiscretePath| p.x(t).abs() - t;
        let h = HittingTimeSpec::horizon(1.0).unwrap();
        let mut st = snell_envelope(&x, &h, &kernel(1.0, 0.2), TreeSpec::new(5, 0.2)).unwrap();
        let (k, i) = (2, 4);
        let y = st.envelope(k, i);
        st.set_envelope(k, i, y - 0.5);
        let v = verify_supermartingale(&st);
        assert!(v.iter().any(|v| v.layer == k && v.node == i), "{v:?}");
    }

    #[test]
    fn jump_at_exit_keeps_envelope_consistent() {
        // |ω| jumps up when the radius is crossed, X̂ keeps the pre-exit value.
        let x = |t: f64, p: &DiscretePath| p.x(t).abs();
        let h = HittingTimeSpec::domain(ConvexDomain::Ball { radius: 0.3 }, 1.0).unwrap();
        let st = snell_envelope(&x, &h, &kernel(1.0, 0.1), TreeSpec::new(10, 0.1)).unwrap();
        assert!(verify_supermartingale(&st).is_empty());
        let tree = st.tree();
        let exited = (1..tree.layers())
            .flat_map(|k| (0..tree.layer_len(k)).map(move |i| (k, i)))
            .find(|&(k, i)| st.exit(k, i) == Some(ExitKind::Spatial))
            .unwrap();
        assert!(st.reward(exited.0, exited.1) < 0.3);
    }

    #[test]
    fn depth_caps() {
        let x = |_: f64, _: &DiscretePath| 0.0;
        let h = HittingTimeSpec::horizon(1.0).unwrap();
        let k = kernel(1.0, 0.05);
        assert!(matches!(brute_force_stopping(&x, &h, &k, TreeSpec::new(11, 0.05)), Err(Error::Resource(_))));
        let mut spec = TreeSpec::new(14, 0.05);
        spec.max_nodes = 1000;
        assert!(matches!(snell_envelope(&x, &h, &k, spec), Err(Error::Resource(_))));
    }

    #[test]
    fn first_order_kernel_is_deterministic() {
        let lat = crate::measures::first_order_lattice(1.0, 1, Refinement::MINIMAL).unwrap();
        let k = TreeKernel::first_order(&lat, 0.25).unwrap();
        assert_eq!(k.branching(), 3);
        let x = |t: f64, p: &DiscretePath| p.x(t);
        let h = HittingTimeSpec::horizon(1.0).unwrap();
        let st = snell_envelope(&x, &h, &k, TreeSpec::new(4, 0.25)).unwrap();
        assert_eq!(st.y0(), 1.0);
    }
}
