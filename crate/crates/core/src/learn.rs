//! Graph learning from smooth signals with a log-degree barrier.
//!
//! Given pairwise node distances `Z`, [`learn_graph`] solves
//!
//! ```text
//! min_{W ≥ 0, W = Wᵀ, diag W = 0}  Σ_ij W_ij Z_ij − α·1ᵀlog(W1) + (β/2)‖W‖_F²
//! ```
//!
//! in the upper-triangular vector form `w` (one entry per vertex pair), where
//! the objective reads `2wᵀz − α·1ᵀlog(Sw) + β‖w‖²` and `S` maps edge weights
//! to degrees. The solver is a forward-backward-forward primal-dual iteration:
//! the linear term plus nonnegativity is handled by a projection, the log
//! barrier through the proximal map of its conjugate on the dual (degree)
//! variable, and the Frobenius term by its gradient.
//!
//! [`GraphStream`] accumulates snapshot batches, relearns after every batch and
//! records how much the Laplacian moved.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph, Graph};
use crate::signal::SignalMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    /// Log-degree barrier weight, > 0.
    pub alpha: f64,
    /// Frobenius penalty weight, ≥ 0.
    pub beta: f64,
    pub max_iters: usize,
    /// Relative iterate change that stops the solver.
    pub tol: f64,
    /// Learned weights below `prune_rel · max(W)` are dropped.
    pub prune_rel: f64,
    /// Rescale finite off-diagonal `Z` to unit mean before solving.
    pub normalize_z: bool,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            alpha: 1.0,
            beta: 1.0,
            max_iters: 5000,
            tol: 1e-6,
            prune_rel: 1e-4,
            normalize_z: true,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::param("alpha", format!("must be > 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::param("beta", format!("must be >= 0, got {}", self.beta)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("tol", format!("must be > 0, got {}", self.tol)));
        }
        if !(0.0..1.0).contains(&self.prune_rel) {
            return Err(Error::param(
                "prune_rel",
                format!("must lie in [0, 1), got {}", self.prune_rel),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be positive"));
        }
        Ok(())
    }
}

/// Running sums behind the masked pairwise distance matrix.
#[derive(Debug, Clone)]
pub struct DistanceAccumulator {
    sum_sq: DMatrix<f64>,
    common: DMatrix<u64>,
    rows: usize,
}

impl DistanceAccumulator {
    pub fn new(n: usize) -> Self {
        DistanceAccumulator {
            sum_sq: DMatrix::zeros(n, n),
            common: DMatrix::zeros(n, n),
            rows: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.sum_sq.nrows()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn add(&mut self, x: &SignalMatrix) -> Result<()> {
        let n = self.n();
        if x.n_nodes() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x.n_nodes(),
            });
        }
        let (values, observed) = (x.values(), x.observed());
        // batch totals are formed separately, so a repeated batch doubles the sums exactly
        let mut batch = DMatrix::<f64>::zeros(n, n);
        let mut present = Vec::with_capacity(n);
        for t in 0..x.n_snapshots() {
            present.clear();
            present.extend((0..n).filter(|&c| observed[(t, c)]));
            for (a, &i) in present.iter().enumerate() {
                for &j in &present[a + 1..] {
                    let d = values[(t, i)] - values[(t, j)];
                    batch[(i, j)] += d * d;
                    self.common[(i, j)] += 1;
                }
            }
        }
        self.sum_sq += batch;
        self.rows += x.n_snapshots();
        Ok(())
    }

    /// `Z_ij = T · mean_{common t}(X_ti − X_tj)²`, `+∞` where a pair never
    /// shares an observed snapshot.
    pub fn distances(&self) -> DMatrix<f64> {
        let n = self.n();
        let t = self.rows as f64;
        let mut z = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let c = self.common[(i, j)];
                let v = if c == 0 {
                    f64::INFINITY
                } else {
                    t * self.sum_sq[(i, j)] / c as f64
                };
                z[(i, j)] = v;
                z[(j, i)] = v;
            }
        }
        z
    }
}

/// Masked pairwise squared distances between node series.
///
/// For fully observed data this is `Z_ij = Σ_t (X_ti − X_tj)²`. With packet
/// loss, the mean over commonly observed snapshots is scaled back up by `T`.
/// Pairs without a common snapshot get `+∞` (no edge can be learned there).
pub fn pairwise_distances(x: &SignalMatrix) -> Result<DMatrix<f64>> {
    if x.n_nodes() < 2 {
        return Err(Error::TooSmall {
            what: "nodes",
            min: 2,
            found: x.n_nodes(),
        });
    }
    let mut acc = DistanceAccumulator::new(x.n_nodes());
    acc.add(x)?;
    Ok(acc.distances())
}

/// Output of [`learn_graph`].
#[derive(Debug, Clone)]
pub struct LearnedGraph {
    pub graph: Graph,
    pub iterations: usize,
    /// Relative primal change at the last iteration.
    pub final_change: f64,
    /// Vertices with no finite distance to any other vertex; left without edges.
    pub isolated: Vec<usize>,
}

/// Objective `Σ_ij W_ij Z_ij − α·1ᵀlog(W1) + (β/2)‖W‖_F²` over a full
/// symmetric weight matrix. Pairs with infinite `Z` must carry zero weight.
/// Returns `+∞` when a degree is not positive.
pub fn objective(w: &DMatrix<f64>, z: &DMatrix<f64>, alpha: f64, beta: f64) -> f64 {
    let n = w.nrows();
    let mut linear = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && w[(i, j)] != 0.0 {
                linear += w[(i, j)] * z[(i, j)];
            }
        }
    }
    let mut barrier = 0.0;
    for i in 0..n {
        let d = w.row(i).sum();
        if d <= 0.0 {
            return f64::INFINITY;
        }
        barrier += d.ln();
    }
    linear - alpha * barrier + 0.5 * beta * w.norm_squared()
}

/// Rescales finite off-diagonal entries to unit mean. Returns `z` unchanged if
/// that mean is zero.
pub fn normalize_distances(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            if z[(i, j)].is_finite() {
                sum += z[(i, j)];
                count += 1;
            }
        }
    }
    if count == 0 || sum <= 0.0 {
        return z.clone();
    }
    let mean = sum / count as f64;
    z.map(|v| v / mean)
}

/// Learns a graph from pairwise distances `z` (see the module docs).
///
/// Vertices whose every distance is infinite are reported in
/// [`LearnedGraph::isolated`] and kept without edges. After solving, weights
/// below `prune_rel · max(W)` are zeroed.
pub fn learn_graph(z: &DMatrix<f64>, cfg: &LearnConfig) -> Result<LearnedGraph> {
    cfg.validate()?;
    let (rows, cols) = z.shape();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    let n = rows;
    for i in 0..n {
        for j in 0..n {
            let v = z[(i, j)];
            if i != j && (v.is_nan() || v < 0.0) {
                return Err(Error::param(
                    "z",
                    format!("entry ({i}, {j}) = {v} is not a nonnegative distance"),
                ));
            }
        }
    }

    let z = if cfg.normalize_z {
        normalize_distances(z)
    } else {
        z.clone()
    };

    let (active, isolated): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| (0..n).any(|j| j != i && z[(i, j)].is_finite()));

    let mut w_full = DMatrix::zeros(n, n);
    let (iterations, final_change) = if active.len() >= 2 {
        let pairs = EdgeIndex::new(active.len());
        let zvec: Vec<f64> = pairs
            .iter()
            .map(|(a, b)| z[(active[a], active[b])])
            .collect();
        let sol = solve_log_degree(&pairs, &zvec, cfg)?;
        for (e, (a, b)) in pairs.iter().enumerate() {
            let (i, j) = (active[a], active[b]);
            w_full[(i, j)] = sol.w[e];
            w_full[(j, i)] = sol.w[e];
        }
        (sol.iterations, sol.final_change)
    } else {
        (0, 0.0)
    };

    let max_w = w_full.max();
    if max_w > 0.0 {
        let cut = cfg.prune_rel * max_w;
        w_full.apply(|v| {
            if *v < cut {
                *v = 0.0;
            }
        });
    }

    Ok(LearnedGraph {
        graph: build_graph(w_full)?,
        iterations,
        final_change,
        isolated,
    })
}

/// Upper-triangular pair enumeration `(0,1), (0,2), …, (n−2,n−1)`.
struct EdgeIndex {
    pairs: Vec<(usize, usize)>,
    n: usize,
}

impl EdgeIndex {
    fn new(n: usize) -> Self {
        let pairs = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect();
        EdgeIndex { pairs, n }
    }

    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().copied()
    }

    /// Degrees `Sw`.
    fn degrees(&self, w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|d| *d = 0.0);
        for (&(i, j), &we) in self.pairs.iter().zip(w) {
            out[i] += we;
            out[j] += we;
        }
    }

    /// `Sᵀd`.
    fn spread(&self, d: &[f64], out: &mut [f64]) {
        for (o, &(i, j)) in out.iter_mut().zip(&self.pairs) {
            *o = d[i] + d[j];
        }
    }
}

struct Solution {
    w: Vec<f64>,
    iterations: usize,
    final_change: f64,
}

fn rel_change(new: &[f64], old: &[f64]) -> f64 {
    let diff: f64 = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum();
    let base: f64 = old.iter().map(|v| v * v).sum();
    if base > 0.0 {
        (diff / base).sqrt()
    } else {
        diff.sqrt()
    }
}

fn solve_log_degree(pairs: &EdgeIndex, z: &[f64], cfg: &LearnConfig) -> Result<Solution> {
    let m = pairs.len();
    let n = pairs.n;
    let (alpha, beta) = (cfg.alpha, cfg.beta);
    // ‖S‖₂ = sqrt(2(n − 1)); 2β is the Lipschitz constant of the smooth term.
    let mu = 2.0 * beta + (2.0 * (n as f64 - 1.0)).sqrt();
    let gamma = 0.95 / mu;

    let mut w = vec![0.0; m];
    let mut d = vec![0.0; n];
    let (mut y, mut p, mut q) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let (mut yd, mut pd, mut qd) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut st_d = vec![0.0; m];
    let mut sw = vec![0.0; n];
    let mut last_change = f64::INFINITY;

    for iter in 1..=cfg.max_iters {
        pairs.spread(&d, &mut st_d);
        pairs.degrees(&w, &mut sw);
        for e in 0..m {
            y[e] = w[e] - gamma * (2.0 * beta * w[e] + st_d[e]);
            // projection of the linear term plus nonnegativity; z = ∞ pins to 0
            p[e] = (y[e] - 2.0 * gamma * z[e]).max(0.0);
        }
        for i in 0..n {
            yd[i] = d[i] + gamma * sw[i];
            // prox of the conjugate of −α·log
            pd[i] = 0.5 * (yd[i] - (yd[i] * yd[i] + 4.0 * alpha * gamma).sqrt());
        }
        pairs.spread(&pd, &mut st_d);
        pairs.degrees(&p, &mut sw);
        for e in 0..m {
            q[e] = p[e] - gamma * (2.0 * beta * p[e] + st_d[e]);
        }
        for i in 0..n {
            qd[i] = pd[i] + gamma * sw[i];
        }

        let w_new: Vec<f64> = (0..m).map(|e| w[e] - y[e] + q[e]).collect();
        let d_new: Vec<f64> = (0..n).map(|i| d[i] - yd[i] + qd[i]).collect();
        let cw = rel_change(&w_new, &w);
        let cd = rel_change(&d_new, &d);
        w = w_new;
        d = d_new;
        last_change = cw;
        if !w.iter().all(|v| v.is_finite()) {
            break;
        }
        if cw < cfg.tol && cd < cfg.tol {
            // iterates can sit a hair below zero after the correction step
            w.iter_mut().for_each(|v| *v = v.max(0.0));
            return Ok(Solution {
                w,
                iterations: iter,
                final_change: cw,
            });
        }
    }
    Err(Error::LearnNoConvergence {
        iterations: cfg.max_iters,
        last_change,
    })
}

/// One row of the Laplacian convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub snapshots_seen: usize,
    /// `‖L_t − L_{t−1}‖_F / ‖L_{t−1}‖_F`; `+∞` on the first update.
    pub rel_change: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    pub entries: Vec<TraceEntry>,
    pub converged: bool,
}

impl ConvergenceTrace {
    /// CSV with header `snapshots_seen,rel_change`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("snapshots_seen,rel_change\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{:e}", e.snapshots_seen, e.rel_change);
        }
        out
    }
}

/// Default relative Frobenius change under which the Laplacian counts as stable.
pub const DEFAULT_STABILITY_THRESHOLD: f64 = 1e-3;
/// Consecutive stable updates required before declaring convergence.
pub const STABLE_UPDATES_REQUIRED: usize = 2;

/// Streaming graph learner: accumulate snapshot batches, relearn after each.
#[derive(Debug, Clone)]
pub struct GraphStream {
    cfg: LearnConfig,
    threshold: f64,
    acc: DistanceAccumulator,
    seen_per_node: Vec<usize>,
    current: Option<LearnedGraph>,
    stable_run: usize,
    trace: ConvergenceTrace,
}

impl GraphStream {
    pub fn new(n: usize, cfg: LearnConfig, threshold: f64) -> Result<Self> {
        cfg.validate()?;
        if n < 2 {
            return Err(Error::TooSmall {
                what: "nodes",
                min: 2,
                found: n,
            });
        }
        if !(threshold > 0.0) {
            return Err(Error::param("threshold", "must be > 0"));
        }
        Ok(GraphStream {
            cfg,
            threshold,
            acc: DistanceAccumulator::new(n),
            seen_per_node: vec![0; n],
            current: None,
            stable_run: 0,
            trace: ConvergenceTrace::default(),
        })
    }

    /// Adds a batch, relearns the graph and appends a trace entry.
    pub fn update(&mut self, batch: &SignalMatrix) -> Result<TraceEntry> {
        self.acc.add(batch)?;
        for (seen, add) in self.seen_per_node.iter_mut().zip(batch.observations_per_node()) {
            *seen += add;
        }
        let z = self.acc.distances();
        let learned = learn_graph(&z, &self.cfg)?;
        let rel_change = match &self.current {
            None => f64::INFINITY,
            Some(prev) => laplacian_change(prev.graph.laplacian(), learned.graph.laplacian()),
        };
        self.current = Some(learned);
        if rel_change < self.threshold {
            self.stable_run += 1;
        } else {
            self.stable_run = 0;
        }
        self.trace.converged = self.stable_run >= STABLE_UPDATES_REQUIRED && self.all_nodes_seen();
        let entry = TraceEntry {
            snapshots_seen: self.acc.rows(),
            rel_change,
        };
        self.trace.entries.push(entry);
        Ok(entry)
    }

    pub fn all_nodes_seen(&self) -> bool {
        self.seen_per_node.iter().all(|&c| c > 0)
    }

    pub fn converged(&self) -> bool {
        self.trace.converged
    }

    pub fn trace(&self) -> &ConvergenceTrace {
        &self.trace
    }

    pub fn current(&self) -> Option<&LearnedGraph> {
        self.current.as_ref()
    }

    pub fn snapshots_seen(&self) -> usize {
        self.acc.rows()
    }
}

/// Relative Frobenius change between two Laplacians.
pub fn laplacian_change(prev: &DMatrix<f64>, next: &DMatrix<f64>) -> f64 {
    let diff = (next - prev).norm();
    let base = prev.norm();
    if base > 0.0 {
        diff / base
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}
