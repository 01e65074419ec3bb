//! Vertex importance, the norm-preservation check for sampling masks, and
//! the greedy partition of the sensors into disjoint sampling sets.
//!
//! Vertices are ranked by local cumulative coherence, the squared norm of
//! their row in the first `k` eigenvectors, where `k` is the estimated
//! bandwidth of the data. The partition walks that ranking once: it grows the
//! current set one vertex at a time until reconstructing every evaluation
//! snapshot from the set alone gives a mean RMSE of at most `ε`, closes the
//! set, and starts the next one. Every set is therefore a contiguous run of
//! the ranking.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, SpectralBasis};
use crate::reconstruct::{rmse_all, ReconstructionConfig, Smoother};
use crate::signal::SignalMatrix;

pub const DEFAULT_ENERGY_FRACTION: f64 = 0.95;

/// Score resolution used to detect ties in the importance order.
const SCORE_QUANTUM: f64 = 1e-10;
/// Relative gap under which consecutive eigenvalues count as repeated.
const EIGEN_CLUSTER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    m: Vec<bool>,
}

impl SamplingMask {
    pub fn new(m: Vec<bool>) -> Self {
        SamplingMask { m }
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self> {
        let mut m = vec![false; n];
        for &i in indices {
            if i >= n {
                return Err(Error::DimensionMismatch { expected: n, found: i });
            }
            m[i] = true;
        }
        Ok(SamplingMask { m })
    }

    pub fn full(n: usize) -> Self {
        SamplingMask { m: vec![true; n] }
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.m
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn n_sampled(&self) -> usize {
        self.m.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthEstimate {
    pub k: usize,
    /// Share of mean spectral energy carried by the first `k` components.
    pub energy_fraction: f64,
}

/// Smallest `k` whose first `k` GFT coefficients carry at least `energy_frac`
/// of the mean spectral energy across snapshots.
pub fn estimate_bandwidth(basis: &SpectralBasis, x: &SignalMatrix, energy_frac: f64) -> Result<BandwidthEstimate> {
    if !(energy_frac > 0.0 && energy_frac <= 1.0) {
        return Err(Error::param(
            "energy_frac",
            format!("must lie in (0, 1], got {energy_frac}"),
        ));
    }
    if x.n_nodes() != basis.n() {
        return Err(Error::DimensionMismatch {
            expected: basis.n(),
            found: x.n_nodes(),
        });
    }
    if !x.is_complete() {
        return Err(Error::param("x", "snapshots must be gap-free"));
    }
    let n = basis.n();
    let mut energy = vec![0.0; n];
    for t in 0..x.n_snapshots() {
        let spectrum = basis.gft_values(&x.snapshot_values(t))?;
        for (e, c) in energy.iter_mut().zip(spectrum.iter()) {
            *e += c * c;
        }
    }
    let total: f64 = energy.iter().sum();
    if total == 0.0 {
        return Ok(BandwidthEstimate {
            k: 1,
            energy_fraction: 1.0,
        });
    }
    // absorbs round-off leaking into components that should be empty
    let target = energy_frac * total - 1e-12 * total;
    let mut cum = 0.0;
    for (idx, e) in energy.iter().enumerate() {
        cum += e;
        if cum >= target {
            return Ok(BandwidthEstimate {
                k: idx + 1,
                energy_fraction: (cum / total).min(1.0),
            });
        }
    }
    Ok(BandwidthEstimate {
        k: n,
        energy_fraction: 1.0,
    })
}

/// Local cumulative coherence `Σ_{j≤k} U_ij²` per vertex.
///
/// When `k` cuts through a repeated eigenvalue the eigenvectors of that
/// eigenspace are not unique, so the cut cluster contributes
/// `(j/d)·diag(P)`, where `P` projects onto the `d`-dimensional eigenspace and
/// `j` of its vectors fall within `k`. The scores then do not depend on the
/// eigensolver's choice of basis, and they still sum to `k`.
pub fn coherence_scores(basis: &SpectralBasis, k: usize) -> Result<Vec<f64>> {
    let n = basis.n();
    if k == 0 || k > n {
        return Err(Error::param("k", format!("must lie in 1..={n}, got {k}")));
    }
    let u = basis.eigenvectors();
    let lambdas = basis.eigenvalues();
    let tol = EIGEN_CLUSTER_TOL * lambdas.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut scores = vec![0.0; n];
    let mut start = 0;
    while start < k {
        let mut end = start + 1;
        while end < n && lambdas[end] - lambdas[end - 1] <= tol {
            end += 1;
        }
        let weight = (k.min(end) - start) as f64 / (end - start) as f64;
        for (i, score) in scores.iter_mut().enumerate() {
            let diag: f64 = (start..end).map(|j| u[(i, j)] * u[(i, j)]).sum();
            *score += weight * diag;
        }
        start = end;
    }
    Ok(scores)
}

/// Vertices by descending score; scores equal to within `1e-10` tie and fall
/// back to ascending vertex index.
pub fn importance_order(scores: &[f64]) -> Vec<usize> {
    let quantized: Vec<i64> = scores
        .iter()
        .map(|s| (s / SCORE_QUANTUM).round() as i64)
        .collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| quantized[b].cmp(&quantized[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCheck {
    pub satisfied: bool,
    /// The `(N/n)‖mx‖²/‖x‖²` ratio farthest from 1; `None` if every snapshot
    /// was skipped.
    pub worst_ratio: Option<f64>,
    pub ratios: Vec<f64>,
    /// All-zero snapshots, for which the ratio is undefined.
    pub skipped: usize,
}

/// Checks `(1 − δ)‖x‖² ≤ (N/n)‖mx‖² ≤ (1 + δ)‖x‖²` on every snapshot.
pub fn verify_embedding(mask: &SamplingMask, x: &SignalMatrix, delta: f64) -> Result<EmbeddingCheck> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("delta", format!("must lie in (0, 1), got {delta}")));
    }
    if mask.len() != x.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: x.n_nodes(),
            found: mask.len(),
        });
    }
    let sampled = mask.n_sampled();
    if sampled == 0 {
        return Err(Error::EmptyMask);
    }
    if !x.is_complete() {
        return Err(Error::param("x", "snapshots must be gap-free"));
    }
    let scale = mask.len() as f64 / sampled as f64;
    let values = x.values();
    let mut ratios = Vec::with_capacity(x.n_snapshots());
    let mut skipped = 0;
    for t in 0..x.n_snapshots() {
        let (mut kept, mut total) = (0.0, 0.0);
        for (i, &m) in mask.as_slice().iter().enumerate() {
            let v = values[(t, i)] * values[(t, i)];
            total += v;
            if m {
                kept += v;
            }
        }
        if total == 0.0 {
            skipped += 1;
            continue;
        }
        ratios.push(scale * kept / total);
    }
    if skipped > 0 {
        log::warn!("verify_embedding skipped {skipped} all-zero snapshots");
    }
    let satisfied = ratios
        .iter()
        .all(|&r| (1.0 - delta..=1.0 + delta).contains(&r));
    let worst_ratio = ratios
        .iter()
        .copied()
        .max_by(|a, b| (a - 1.0).abs().total_cmp(&(b - 1.0).abs()));
    Ok(EmbeddingCheck {
        satisfied,
        worst_ratio,
        ratios,
        skipped,
    })
}

/// Disjoint sampling sets, in the order they were built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPlan {
    pub epsilon: f64,
    pub node_order: Vec<usize>,
    pub sets: Vec<Vec<usize>>,
    /// Mean RMSE achieved by each set.
    pub set_rmse: Vec<f64>,
    /// The ranking ran out while the last set was still above `epsilon`.
    pub last_set_incomplete: bool,
}

impl SamplingPlan {
    pub fn n_sets(&self) -> usize {
        self.sets.len()
    }

    pub fn max_rmse(&self) -> f64 {
        self.set_rmse.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: SamplingPlan = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    /// Checks that the sets partition `0..n` and that the per-set fields line up.
    pub fn validate(&self) -> Result<()> {
        let n = self.node_order.len();
        if self.sets.len() != self.set_rmse.len() {
            return Err(Error::DimensionMismatch {
                expected: self.sets.len(),
                found: self.set_rmse.len(),
            });
        }
        let mut seen = vec![false; n];
        for set in &self.sets {
            if set.is_empty() {
                return Err(Error::param("sets", "empty sampling set"));
            }
            for &v in set {
                if v >= n || seen[v] {
                    return Err(Error::param(
                        "sets",
                        format!("vertex {v} is out of range or assigned twice"),
                    ));
                }
                seen[v] = true;
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::param("sets", "sets do not cover every vertex"));
        }
        let mut order_seen = vec![false; n];
        for &v in &self.node_order {
            if v >= n || order_seen[v] {
                return Err(Error::param("node_order", "not a permutation"));
            }
            order_seen[v] = true;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub recon: ReconstructionConfig,
    /// Spectral energy share used to pick the bandwidth for the ranking.
    pub energy_frac: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            recon: ReconstructionConfig::default(),
            energy_frac: DEFAULT_ENERGY_FRACTION,
        }
    }
}

/// Bandwidth and importance ranking for `x`.
pub fn rank_vertices(basis: &SpectralBasis, x: &SignalMatrix, energy_frac: f64) -> Result<(BandwidthEstimate, Vec<usize>)> {
    let bw = estimate_bandwidth(basis, x, energy_frac)?;
    let scores = coherence_scores(basis, bw.k)?;
    Ok((bw, importance_order(&scores)))
}

/// Greedy partition of the vertices into sampling sets with mean RMSE ≤ ε on
/// the snapshots of `x`.
pub fn partition(
    graph: &Graph,
    basis: &SpectralBasis,
    x: &SignalMatrix,
    epsilon: f64,
    cfg: &PartitionConfig,
) -> Result<SamplingPlan> {
    check_epsilon(epsilon)?;
    let (_, order) = rank_vertices(basis, x, cfg.energy_frac)?;
    let smoother = Smoother::new(graph, cfg.recon)?;
    partition_ordered(&smoother, &order, x, epsilon)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(Error::param("epsilon", format!("must be > 0, got {epsilon}")));
    }
    Ok(())
}

/// Mean over snapshots of the all-vertex RMSE when only `set` is observed.
pub fn set_rmse(smoother: &Smoother, set: &[usize], x: &SignalMatrix) -> Result<f64> {
    let mut mask = vec![false; smoother.n()];
    for &v in set {
        mask[v] = true;
    }
    let solver = smoother.for_mask(&mask)?;
    let mut total = 0.0;
    for t in 0..x.n_snapshots() {
        let truth = x.snapshot_values(t);
        total += rmse_all(&solver.solve(&truth)?, &truth);
    }
    Ok(total / x.n_snapshots() as f64)
}

/// The greedy loop over a fixed ranking.
pub fn partition_ordered(
    smoother: &Smoother,
    order: &[usize],
    x: &SignalMatrix,
    epsilon: f64,
) -> Result<SamplingPlan> {
    check_epsilon(epsilon)?;
    let n = smoother.n();
    if x.n_nodes() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x.n_nodes(),
        });
    }
    if !x.is_complete() {
        return Err(Error::param("x", "evaluation snapshots must be gap-free"));
    }
    let mut check = vec![false; n];
    if order.len() != n || order.iter().any(|&v| v >= n || std::mem::replace(&mut check[v], true)) {
        return Err(Error::param("order", "must be a permutation of the vertices"));
    }

    let mut plan = SamplingPlan {
        epsilon,
        node_order: order.to_vec(),
        sets: Vec::new(),
        set_rmse: Vec::new(),
        last_set_incomplete: false,
    };
    let mut current: Vec<usize> = Vec::new();
    let mut current_rmse = f64::INFINITY;
    for &v in order {
        current.push(v);
        current_rmse = match set_rmse(smoother, &current, x) {
            Ok(r) => r,
            Err(source) => {
                return Err(Error::Partition {
                    partial: Box::new(plan),
                    source: Box::new(source),
                })
            }
        };
        if current_rmse <= epsilon {
            plan.sets.push(std::mem::take(&mut current));
            plan.set_rmse.push(current_rmse);
        }
    }
    if !current.is_empty() {
        plan.sets.push(current);
        plan.set_rmse.push(current_rmse);
        plan.last_set_incomplete = true;
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub n_sets: usize,
    pub max_rmse: f64,
    pub last_set_incomplete: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub plans: Vec<SamplingPlan>,
}

impl SweepTable {
    /// CSV with header `epsilon,n_sets,max_rmse`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,n_sets,max_rmse\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.epsilon, r.n_sets, r.max_rmse);
        }
        out
    }
}

/// Runs [`partition`] for every `ε` in an ascending list, reusing one ranking.
pub fn set_count_sweep(
    graph: &Graph,
    basis: &SpectralBasis,
    x: &SignalMatrix,
    epsilons: &[f64],
    cfg: &PartitionConfig,
) -> Result<SweepTable> {
    if epsilons.is_empty() {
        return Err(Error::Empty("epsilon list"));
    }
    if epsilons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("epsilons", "must be strictly ascending"));
    }
    let (_, order) = rank_vertices(basis, x, cfg.energy_frac)?;
    let smoother = Smoother::new(graph, cfg.recon)?;
    let mut rows = Vec::with_capacity(epsilons.len());
    let mut plans = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let plan = partition_ordered(&smoother, &order, x, eps)?;
        rows.push(SweepRow {
            epsilon: eps,
            n_sets: plan.n_sets(),
            max_rmse: plan.max_rmse(),
            last_set_incomplete: plan.last_set_incomplete,
        });
        plans.push(plan);
    }
    Ok(SweepTable { rows, plans })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::spectral_decompose;
    use nalgebra::DMatrix;

    fn complete(n: usize) -> Graph {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j, 1.0)))
            .collect();
        Graph::from_edges(n, &edges).unwrap()
    }

    fn path(n: usize) -> Graph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
        Graph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn coherence_on_complete_graph_is_uniform() {
        let b = spectral_decompose(&complete(5)).unwrap();
        for k in 1..=5 {
            let s = coherence_scores(&b, k).unwrap();
            assert_close!(s.iter().sum::<f64>(), k as f64, 1e-9);
            for v in s {
                assert_close!(v, k as f64 / 5.0, 1e-9);
            }
        }
        assert!(coherence_scores(&b, 0).is_err());
        assert!(coherence_scores(&b, 6).is_err());
    }

    #[test]
    fn coherence_on_path_matches_hand_eigenvectors() {
        // path 0-1-2: u1 = (1,1,1)/√3, u2 = (1,0,−1)/√2
        let b = spectral_decompose(&path(3)).unwrap();
        let s = coherence_scores(&b, 2).unwrap();
        let want = [1.0 / 3.0 + 0.5, 1.0 / 3.0, 1.0 / 3.0 + 0.5];
        for (got, want) in s.iter().zip(want) {
            assert_close!(*got, want, 1e-9);
        }
    }

    #[test]
    fn importance_order_breaks_ties_by_index() {
        assert_eq!(importance_order(&[0.2, 0.5, 0.2, 0.5 + 1e-14]), vec![1, 3, 0, 2]);
        assert_eq!(importance_order(&[0.1, 0.3, 0.2]), vec![1, 2, 0]);
    }

    #[test]
    fn bandwidth_of_first_eigenvector_is_one() {
        let b = spectral_decompose(&path(6)).unwrap();
        let u1: Vec<f64> = b.eigenvectors().column(0).iter().copied().collect();
        let x = SignalMatrix::from_rows(&[u1.clone(), u1.iter().map(|v| 3.0 * v).collect()]).unwrap();
        for frac in [0.5, 0.95, 1.0] {
            assert_eq!(estimate_bandwidth(&b, &x, frac).unwrap().k, 1);
        }
        assert!(estimate_bandwidth(&b, &x, 0.0).is_err());
        assert!(estimate_bandwidth(&b, &x, 1.5).is_err());
    }

    #[test]
    fn full_energy_needs_every_component() {
        let b = spectral_decompose(&path(5)).unwrap();
        let x = SignalMatrix::from_rows(&[
            vec![0.3, -1.1, 2.0, 0.7, -0.4],
            vec![1.3, 0.2, -0.9, 0.5, 2.2],
        ])
        .unwrap();
        assert_eq!(estimate_bandwidth(&b, &x, 1.0).unwrap().k, 5);
    }

    #[test]
    fn embedding_full_mask_and_worst_case() {
        let x = SignalMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 5.0]]).unwrap();
        let full = verify_embedding(&SamplingMask::full(3), &x, 0.1).unwrap();
        assert!(full.satisfied);
        assert_eq!(full.ratios, vec![1.0, 1.0]);
        assert_eq!(full.worst_ratio, Some(1.0));

        let single = SamplingMask::from_indices(3, &[0]).unwrap();
        let y = SignalMatrix::from_rows(&[vec![0.0, 0.0, 4.0]]).unwrap();
        let check = verify_embedding(&single, &y, 0.5).unwrap();
        assert!(!check.satisfied);
        assert_eq!(check.worst_ratio, Some(0.0));
    }

    #[test]
    fn embedding_skips_zero_snapshots() {
        let x = SignalMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let check = verify_embedding(&SamplingMask::from_indices(2, &[1]).unwrap(), &x, 0.5).unwrap();
        assert_eq!(check.skipped, 1);
        assert_eq!(check.ratios, vec![1.0]);
        assert!(verify_embedding(&SamplingMask::full(2), &x, 1.0).is_err());
        assert!(verify_embedding(&SamplingMask::new(vec![false, false]), &x, 0.5).is_err());
    }

    fn fixture() -> (Graph, SpectralBasis, SignalMatrix) {
        let g = path(6);
        let b = spectral_decompose(&g).unwrap();
        let x = SignalMatrix::fully_observed(DMatrix::from_fn(4, 6, |t, i| {
            (i as f64 * 0.4 + t as f64).sin() + 0.1 * i as f64
        }))
        .unwrap();
        (g, b, x)
    }

    #[test]
    fn large_epsilon_gives_singletons() {
        let (g, b, x) = fixture();
        let plan = partition(&g, &b, &x, 1e6, &PartitionConfig::default()).unwrap();
        assert_eq!(plan.n_sets(), 6);
        assert!(plan.sets.iter().all(|s| s.len() == 1));
        assert!(!plan.last_set_incomplete);
        plan.validate().unwrap();
    }

    #[test]
    fn tiny_epsilon_gives_one_full_set() {
        let (g, b, x) = fixture();
        let plan = partition(&g, &b, &x, 1e-300, &PartitionConfig::default()).unwrap();
        assert_eq!(plan.n_sets(), 1);
        assert_eq!(plan.sets[0].len(), 6);
        assert_eq!(plan.set_rmse, vec![0.0]);
        assert!(!plan.last_set_incomplete);
    }

    #[test]
    fn nonpositive_epsilon_is_rejected() {
        let (g, b, x) = fixture();
        for eps in [0.0, -1e-12, f64::NAN] {
            assert!(partition(&g, &b, &x, eps, &PartitionConfig::default()).is_err());
        }
    }

    #[test]
    fn plan_json_schema() {
        let plan = SamplingPlan {
            epsilon: 0.3,
            node_order: vec![1, 0, 2],
            sets: vec![vec![1], vec![0, 2]],
            set_rmse: vec![0.25, 0.0],
            last_set_incomplete: false,
        };
        let v: serde_json::Value = serde_json::from_str(&plan.to_json().unwrap()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            vec!["epsilon", "last_set_incomplete", "node_order", "set_rmse", "sets"]
        );
        assert_eq!(SamplingPlan::from_json(&plan.to_json().unwrap()).unwrap(), plan);

        let overlapping = r#"{"epsilon":0.3,"node_order":[0,1],"sets":[[0],[0,1]],"set_rmse":[0.1,0.0],"last_set_incomplete":false}"#;
        assert!(SamplingPlan::from_json(overlapping).is_err());
    }

    #[test]
    fn sweep_requires_ascending_epsilons() {
        let (g, b, x) = fixture();
        let cfg = PartitionConfig::default();
        assert!(set_count_sweep(&g, &b, &x, &[0.5, 0.1], &cfg).is_err());
        assert!(set_count_sweep(&g, &b, &x, &[], &cfg).is_err());
        let table = set_count_sweep(&g, &b, &x, &[0.1, 0.5, 10.0], &cfg).unwrap();
        assert_eq!(table.rows.len(), 3);
        assert!(table.to_csv().starts_with("epsilon,n_sets,max_rmse\n0.1,"));
    }
}
