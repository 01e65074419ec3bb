//! Signal reconstruction from a vertex subset.
//!
//! The estimate minimizes `½‖x̂_M − x_M‖² + η·½‖x̂ − Ŵx̂‖²`, a convex quadratic
//! whose normal equations are
//!
//! ```text
//! (MᵀM + η (I − Ŵ)ᵀ(I − Ŵ)) x̂ = Mᵀ x_M
//! ```
//!
//! The system matrix depends only on the graph, the mask and `η`, so
//! [`Smoother`] precomputes `(I − Ŵ)ᵀ(I − Ŵ)` once per graph and
//! [`MaskedSolver`] factors the system once per mask; each snapshot is then a
//! pair of triangular solves.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, ShiftMode};
use crate::signal::{GraphSignal, SignalMatrix};

/// Condition estimate above which the normal-equation matrix counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    /// Smoothness weight.
    pub eta: f64,
    pub shift: ShiftMode,
    /// Overwrite observed vertices with their measurements after solving.
    pub clamp_sampled: bool,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            eta: 1.0,
            shift: ShiftMode::Normalized,
            clamp_sampled: true,
        }
    }
}

impl ReconstructionConfig {
    pub fn with_eta(self, eta: f64) -> Self {
        ReconstructionConfig { eta, ..self }
    }

    /// `eta = 0` is let through so that the solver can report the resulting
    /// singular system.
    fn check(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::param("eta", format!("must be > 0, got {}", self.eta)));
        }
        Ok(())
    }
}

/// `(I − Ŵ)ᵀ(I − Ŵ)` for one graph and shift mode.
#[derive(Debug, Clone)]
pub struct Smoother {
    gram: DMatrix<f64>,
    cfg: ReconstructionConfig,
}

impl Smoother {
    pub fn new(graph: &Graph, cfg: ReconstructionConfig) -> Result<Self> {
        cfg.check()?;
        let n = graph.n();
        let operator = DMatrix::identity(n, n) - graph.shift(cfg.shift)?;
        Ok(Smoother {
            gram: operator.tr_mul(&operator),
            cfg,
        })
    }

    pub fn n(&self) -> usize {
        self.gram.nrows()
    }

    pub fn config(&self) -> &ReconstructionConfig {
        &self.cfg
    }

    /// Factors the normal equations for the vertices where `mask` is set.
    pub fn for_mask(&self, mask: &[bool]) -> Result<MaskedSolver> {
        let n = self.n();
        if mask.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: mask.len(),
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptyMask);
        }
        let mut system = &self.gram * self.cfg.eta;
        for (i, &m) in mask.iter().enumerate() {
            if m {
                system[(i, i)] += 1.0;
            }
        }
        let condition = condition_estimate(&system)?;
        if !(condition <= MAX_CONDITION) {
            return Err(Error::SingularSystem { condition });
        }
        let factor = Cholesky::new(system).ok_or(Error::SingularSystem {
            condition: f64::INFINITY,
        })?;
        Ok(MaskedSolver {
            factor,
            mask: mask.to_vec(),
            clamp: self.cfg.clamp_sampled,
        })
    }

    /// Gradient of the reconstruction objective at `estimate` given
    /// measurements on `mask`.
    pub fn gradient(&self, estimate: &DVector<f64>, values: &DVector<f64>, mask: &[bool]) -> DVector<f64> {
        let mut g = &self.gram * estimate * self.cfg.eta;
        for (i, &m) in mask.iter().enumerate() {
            if m {
                g[i] += estimate[i] - values[i];
            }
        }
        g
    }
}

fn condition_estimate(system: &DMatrix<f64>) -> Result<f64> {
    let n = system.nrows();
    let eig = SymmetricEigen::try_new(system.clone(), f64::EPSILON, 10_000)
        .ok_or(Error::EigenNoConvergence { n })?;
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    Ok(if min > 0.0 { max / min } else { f64::INFINITY })
}

/// A factored reconstruction system for one observation mask.
#[derive(Debug, Clone)]
pub struct MaskedSolver {
    factor: Cholesky<f64, Dyn>,
    mask: Vec<bool>,
    clamp: bool,
}

impl MaskedSolver {
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Reconstructs from `values`, reading only the masked entries.
    pub fn solve(&self, values: &DVector<f64>) -> Result<DVector<f64>> {
        if values.len() != self.mask.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mask.len(),
                found: values.len(),
            });
        }
        let rhs = DVector::from_fn(values.len(), |i, _| if self.mask[i] { values[i] } else { 0.0 });
        let mut x = self.factor.solve(&rhs);
        if self.clamp {
            for (i, &m) in self.mask.iter().enumerate() {
                if m {
                    x[i] = values[i];
                }
            }
        }
        Ok(x)
    }
}

/// Reconstructs the full signal from the observed entries of `x`.
pub fn reconstruct(graph: &Graph, x: &GraphSignal, cfg: &ReconstructionConfig) -> Result<GraphSignal> {
    if x.len() != graph.n() {
        return Err(Error::DimensionMismatch {
            expected: graph.n(),
            found: x.len(),
        });
    }
    let solver = Smoother::new(graph, *cfg)?.for_mask(x.mask())?;
    Ok(GraphSignal::full(solver.solve(x.values())?))
}

/// Root mean square error of `estimate` against `truth` over `eval_set`.
pub fn rmse(estimate: &GraphSignal, truth: &GraphSignal, eval_set: &[usize]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: estimate.len(),
        });
    }
    if let Some(&i) = eval_set.iter().find(|&&i| i >= truth.len() || !truth.mask()[i]) {
        return Err(Error::param(
            "eval_set",
            format!("vertex {i} is out of range or unobserved in the truth"),
        ));
    }
    rmse_values(estimate.values(), truth.values(), eval_set)
}

pub fn rmse_values(estimate: &DVector<f64>, truth: &DVector<f64>, eval_set: &[usize]) -> Result<f64> {
    if eval_set.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let sum: f64 = eval_set
        .iter()
        .map(|&i| {
            let d = estimate[i] - truth[i];
            d * d
        })
        .sum();
    Ok((sum / eval_set.len() as f64).sqrt())
}

/// RMSE over every vertex.
pub fn rmse_all(estimate: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    let n = truth.len();
    ((estimate - truth).norm_squared() / n as f64).sqrt()
}

/// Candidate smoothness weights and the validation split used to pick one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EtaGrid {
    pub candidates: Vec<f64>,
    /// Trailing fraction of snapshots held out for validation.
    pub validation_fraction: f64,
}

impl Default for EtaGrid {
    fn default() -> Self {
        EtaGrid::log_spaced(1e-3, 1e3, 13).expect("static grid")
    }
}

impl EtaGrid {
    pub fn log_spaced(min: f64, max: f64, points: usize) -> Result<Self> {
        if !(min > 0.0 && max >= min && points >= 1) {
            return Err(Error::param(
                "eta_grid",
                format!("need 0 < min <= max and points >= 1, got {min}..{max} x {points}"),
            ));
        }
        let (lo, hi) = (min.log10(), max.log10());
        let candidates = (0..points)
            .map(|k| {
                if points == 1 {
                    min
                } else {
                    10f64.powf(lo + (hi - lo) * k as f64 / (points - 1) as f64)
                }
            })
            .collect();
        Ok(EtaGrid {
            candidates,
            validation_fraction: 0.2,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::Empty("eta grid"));
        }
        if self.candidates.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::param("eta_grid", "candidates must be positive"));
        }
        if self.candidates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("eta_grid", "candidates must be strictly ascending"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::param("validation_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaChoice {
    pub eta: f64,
    /// Mean validation RMSE per candidate; `None` where the system was singular.
    pub scores: Vec<Option<f64>>,
}

/// Picks the grid candidate with the lowest mean RMSE over the trailing
/// validation snapshots, observing only `mask` and scoring the hidden vertices
/// (all vertices if nothing is hidden).
///
/// Scores closer than `1e-9 · (best + rms(validation values))` count as ties,
/// and ties go to the smaller `η`.
pub fn tune_eta(
    graph: &Graph,
    snapshots: &SignalMatrix,
    mask: &[bool],
    grid: &EtaGrid,
    base: &ReconstructionConfig,
) -> Result<EtaChoice> {
    grid.validate()?;
    let t = snapshots.n_snapshots();
    if t < 2 {
        return Err(Error::TooSmall {
            what: "snapshots",
            min: 2,
            found: t,
        });
    }
    if snapshots.n_nodes() != graph.n() {
        return Err(Error::DimensionMismatch {
            expected: graph.n(),
            found: snapshots.n_nodes(),
        });
    }
    let held_out = ((t as f64 * grid.validation_fraction).ceil() as usize).clamp(1, t - 1);
    let validation = snapshots.rows(t - held_out..t)?;
    if !validation.is_complete() {
        return Err(Error::param("snapshots", "validation rows must be complete"));
    }
    let hidden: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i]).collect();
    let eval: Vec<usize> = if hidden.is_empty() {
        (0..mask.len()).collect()
    } else {
        hidden
    };

    let scores: Vec<Option<f64>> = grid
        .candidates
        .iter()
        .map(|&eta| score_eta(graph, &validation, mask, &eval, base.with_eta(eta)))
        .collect::<Result<_>>()?;

    let scale = (validation.values().norm_squared() / validation.values().len() as f64).sqrt();
    let mut best: Option<(usize, f64)> = None;
    for (idx, score) in scores.iter().enumerate() {
        let Some(s) = *score else { continue };
        match best {
            Some((_, b)) if s >= b - 1e-9 * (b + scale) => {}
            _ => best = Some((idx, s)),
        }
    }
    let (idx, _) = best.ok_or(Error::AllCandidatesSingular)?;
    Ok(EtaChoice {
        eta: grid.candidates[idx],
        scores,
    })
}

fn score_eta(
    graph: &Graph,
    validation: &SignalMatrix,
    mask: &[bool],
    eval: &[usize],
    cfg: ReconstructionConfig,
) -> Result<Option<f64>> {
    let solver = match Smoother::new(graph, cfg)?.for_mask(mask) {
        Ok(s) => s,
        Err(Error::SingularSystem { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut total = 0.0;
    for r in 0..validation.n_snapshots() {
        let truth = validation.snapshot_values(r);
        let est = solver.solve(&truth)?;
        total += rmse_values(&est, &truth, eval)?;
    }
    Ok(Some(total / validation.n_snapshots() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: usize) -> Graph {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j, 1.0)))
            .collect();
        Graph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn fully_observed_clamped_is_identity() {
        let g = Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 2.0)]).unwrap();
        let x = GraphSignal::from_slice(&[1.5, -2.0, 7.25]);
        let out = reconstruct(&g, &x, &ReconstructionConfig::default()).unwrap();
        assert_eq!(out.values(), x.values());
    }

    /// Plain gradient descent on the two-variable objective.
    fn descend_two_node(eta: f64) -> [f64; 2] {
        // Ŵ = [[0,1],[1,0]] for a single unit edge under normalization
        let obj_grad = |x: [f64; 2]| {
            let r = [x[0] - x[1], x[1] - x[0]];
            // ∇ of ½(x0−1)² + η·½‖(I−Ŵ)x‖², (I−Ŵ) symmetric
            [x[0] - 1.0 + eta * (r[0] - r[1]), eta * (r[1] - r[0])]
        };
        let lipschitz = 1.0 + 4.0 * eta;
        let step = 1.0 / lipschitz;
        let mut x = [0.0, 0.0];
        for _ in 0..2_000_000 {
            let g = obj_grad(x);
            if g[0].hypot(g[1]) < 1e-14 {
                break;
            }
            x = [x[0] - step * g[0], x[1] - step * g[1]];
        }
        x
    }

    #[test]
    fn two_node_matches_gradient_descent() {
        let g = Graph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        for eta in [0.1, 1.0, 10.0] {
            let cfg = ReconstructionConfig {
                eta,
                shift: ShiftMode::Normalized,
                clamp_sampled: false,
            };
            let x = GraphSignal::partial(DVector::from_vec(vec![1.0, f64::NAN]), vec![true, false])
                .unwrap();
            let got = reconstruct(&g, &x, &cfg).unwrap();
            let want = descend_two_node(eta);
            assert_close!(got.values()[0], want[0], 1e-8);
            assert_close!(got.values()[1], want[1], 1e-8);
        }
    }

    #[test]
    fn singular_and_empty_masks() {
        let g = Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let x = GraphSignal::partial(DVector::from_vec(vec![1.0, 0.0, 0.0]), vec![true, false, false])
            .unwrap();
        let cfg = ReconstructionConfig::default().with_eta(0.0);
        assert!(matches!(
            reconstruct(&g, &x, &cfg),
            Err(Error::SingularSystem { .. })
        ));
        let none = GraphSignal::partial(DVector::zeros(3), vec![false; 3]).unwrap();
        assert!(matches!(
            reconstruct(&g, &none, &ReconstructionConfig::default()),
            Err(Error::EmptyMask)
        ));
        let neg = ReconstructionConfig::default().with_eta(-1.0);
        assert!(reconstruct(&g, &x, &neg).is_err());
    }

    #[test]
    fn rmse_examples() {
        let truth = GraphSignal::from_slice(&[1.0, 2.0, 3.0, 4.0]);
        let all = [0, 1, 2, 3];
        assert_eq!(rmse(&truth, &truth, &all).unwrap(), 0.0);
        let shifted = GraphSignal::from_slice(&[0.5, 1.5, 2.5, 3.5]);
        assert_close!(rmse(&shifted, &truth, &all).unwrap(), 0.5, 1e-15);
        assert!(matches!(rmse(&truth, &truth, &[]), Err(Error::EmptyEvalSet)));

        let a = GraphSignal::from_slice(&[0.3, -1.2, 2.2, 0.0, 5.5, -0.7]);
        let b = GraphSignal::from_slice(&[0.1, -1.0, 2.9, 0.4, 5.0, -0.2]);
        let idx: Vec<usize> = (0..6).collect();
        // (0.04 + 0.04 + 0.49 + 0.16 + 0.25 + 0.25) / 6 = 1.23 / 6
        assert_close!(rmse(&a, &b, &idx).unwrap(), (1.23f64 / 6.0).sqrt(), 1e-12);
        assert_close!(rmse(&a, &b, &[2]).unwrap(), 0.7, 1e-12);
    }

    #[test]
    fn rmse_requires_observed_truth() {
        let truth =
            GraphSignal::partial(DVector::from_vec(vec![1.0, f64::NAN]), vec![true, false]).unwrap();
        let est = GraphSignal::from_slice(&[1.0, 2.0]);
        assert!(rmse(&est, &truth, &[1]).is_err());
        assert_eq!(rmse(&est, &truth, &[0]).unwrap(), 0.0);
    }

    #[test]
    fn default_grid_is_thirteen_log_points() {
        let g = EtaGrid::default();
        assert_eq!(g.candidates.len(), 13);
        assert_close!(g.candidates[0], 1e-3, 1e-18);
        assert_close!(g.candidates[6], 1.0, 1e-15);
        assert_close!(g.candidates[12], 1e3, 1e-9);
    }

    #[test]
    fn constant_signals_tie_to_smallest_eta() {
        let g = complete(6);
        let rows: Vec<Vec<f64>> = (0..10).map(|t| vec![t as f64 - 3.0; 6]).collect();
        let x = SignalMatrix::from_rows(&rows).unwrap();
        let mask = vec![true, false, true, false, false, false];
        let grid = EtaGrid::default();
        let choice = tune_eta(&g, &x, &mask, &grid, &ReconstructionConfig::default()).unwrap();
        assert_eq!(choice.eta, grid.candidates[0]);
        for s in choice.scores.iter().flatten() {
            assert!(*s < 1e-10);
        }
    }

    #[test]
    fn tune_eta_errors() {
        let g = complete(3);
        let x = SignalMatrix::from_rows(&[vec![1.0, 1.0, 1.0]]).unwrap();
        let mask = vec![true, false, false];
        let base = ReconstructionConfig::default();
        assert!(tune_eta(&g, &x, &mask, &EtaGrid::default(), &base).is_err());
        let x = SignalMatrix::from_rows(&[vec![1.0, 1.0, 1.0], vec![2.0, 2.0, 2.0]]).unwrap();
        let empty = EtaGrid {
            candidates: vec![],
            validation_fraction: 0.2,
        };
        assert!(matches!(
            tune_eta(&g, &x, &mask, &empty, &base),
            Err(Error::Empty(_))
        ));
    }
}
