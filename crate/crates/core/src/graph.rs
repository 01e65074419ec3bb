//! Undirected weighted graphs, their combinatorial Laplacian, spectral basis
//! and the graph Fourier transform.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{GraphSignal, SignalMatrix};

/// Slack below zero tolerated for weights before they are rejected.
const NEGATIVE_WEIGHT_TOL: f64 = 1e-12;
const EIGEN_EPS: f64 = f64::EPSILON;
const EIGEN_MAX_ITERS: usize = 10_000;
/// Eigenvector entries below this magnitude are skipped when fixing signs.
const SIGN_TOL: f64 = 1e-9;
/// Largest vertex count accepted from a serialized graph.
pub const MAX_FILE_VERTICES: usize = 10_000;

/// An undirected graph with symmetric nonnegative weights `W`, weighted
/// degrees `D_ii = Σ_j W_ij` and Laplacian `L = D − W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    weights: DMatrix<f64>,
    degrees: DVector<f64>,
    laplacian: DMatrix<f64>,
}

/// Adjacency shift used by total variation and reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftMode {
    /// `W` as is.
    Raw,
    /// `W / ρ(W)`.
    #[default]
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TvForm {
    /// `‖x − Ŵx‖₁`
    L1,
    /// `½‖x − Ŵx‖₂²`
    Quadratic,
}

/// Builds a graph from a square weight matrix.
///
/// The input is symmetrized as `(W + Wᵀ)/2` and its diagonal is zeroed.
/// Entries in `[−1e-12, 0)` are treated as zero; anything more negative is
/// rejected.
pub fn build_graph(weights: DMatrix<f64>) -> Result<Graph> {
    let (rows, cols) = weights.shape();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    for r in 0..rows {
        for c in 0..cols {
            let v = weights[(r, c)];
            if !v.is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
            if v < -NEGATIVE_WEIGHT_TOL {
                return Err(Error::NegativeWeight {
                    row: r,
                    col: c,
                    value: v,
                });
            }
        }
    }
    let n = rows;
    let w = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (0.5 * (weights[(i, j)] + weights[(j, i)])).max(0.0)
        }
    });
    let degrees = DVector::from_fn(n, |i, _| w.row(i).sum());
    let laplacian = DMatrix::from_diagonal(&degrees) - &w;
    Ok(Graph {
        weights: w,
        degrees,
        laplacian,
    })
}

impl Graph {
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self> {
        build_graph(weights)
    }

    /// Graph on `n` vertices with the given `(i, j, w)` edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut w = DMatrix::zeros(n, n);
        for &(i, j, weight) in edges {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidEdge { i, j, weight, n });
            }
            w[(i, j)] = weight;
            w[(j, i)] = weight;
        }
        build_graph(w)
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn degrees(&self) -> &DVector<f64> {
        &self.degrees
    }

    pub fn degree_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.degrees)
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// Edges with positive weight as `(i, j, w)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = self.weights[(i, j)];
                if w > 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    /// Largest eigenvalue magnitude of `W`.
    pub fn spectral_radius(&self) -> Result<f64> {
        if self.n() == 0 {
            return Ok(0.0);
        }
        let eig = symmetric_eigen(self.weights.clone())?;
        Ok(eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
    }

    /// The shift operator `Ŵ` for `mode`.
    pub fn shift(&self, mode: ShiftMode) -> Result<DMatrix<f64>> {
        match mode {
            ShiftMode::Raw => Ok(self.weights.clone()),
            ShiftMode::Normalized => {
                let rho = self.spectral_radius()?;
                if rho <= 0.0 {
                    return Err(Error::ZeroSpectralRadius);
                }
                Ok(&self.weights / rho)
            }
        }
    }

    /// Number of connected components over positive-weight edges.
    pub fn component_count(&self) -> usize {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut count = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for u in 0..n {
                    if !seen[u] && self.weights[(v, u)] > 0.0 {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
        }
        count
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            n: self.n(),
            edges: self.edges(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        file.into_graph()
    }
}

/// On-disk graph: `{"n": int, "edges": [[i, j, w], ...]}`, 0-based, `i < j`,
/// `w > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl GraphFile {
    pub fn into_graph(self) -> Result<Graph> {
        let n = self.n;
        if n > MAX_FILE_VERTICES {
            return Err(Error::param("n", format!("{n} exceeds {MAX_FILE_VERTICES} vertices")));
        }
        let mut seen = HashSet::with_capacity(self.edges.len());
        for &(i, j, weight) in &self.edges {
            if i >= j || j >= n || !weight.is_finite() || weight <= 0.0 {
                return Err(Error::InvalidEdge { i, j, weight, n });
            }
            if !seen.insert((i, j)) {
                return Err(Error::DuplicateEdge { i, j });
            }
        }
        Graph::from_edges(n, &self.edges)
    }
}

/// Orthonormal eigenvectors (columns) of `L` and their eigenvalues in
/// ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    eigenvectors: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

fn symmetric_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let n = m.nrows();
    SymmetricEigen::try_new(m, EIGEN_EPS, EIGEN_MAX_ITERS).ok_or(Error::EigenNoConvergence { n })
}

/// Eigendecomposition `L = U diag(λ) Uᵀ`.
///
/// Eigenvalues come back ascending and clamped at zero (a PSD Laplacian only
/// produces round-off negatives). Each eigenvector is oriented so that its
/// first entry with magnitude above `1e-9` is positive.
pub fn spectral_decompose(graph: &Graph) -> Result<SpectralBasis> {
    let n = graph.n();
    if n == 0 {
        return Ok(SpectralBasis {
            eigenvectors: DMatrix::zeros(0, 0),
            eigenvalues: DVector::zeros(0),
        });
    }
    let eig = symmetric_eigen(graph.laplacian().clone())?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let scale = eig
        .eigenvalues
        .iter()
        .fold(1.0f64, |acc, v| acc.max(v.abs()));
    let mut eigenvalues = DVector::zeros(n);
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[src];
        if lambda < -1e-8 * scale {
            return Err(Error::NotPositiveSemidefinite { eigenvalue: lambda });
        }
        eigenvalues[dst] = lambda.max(0.0);
        let mut col = eig.eigenvectors.column(src).into_owned();
        if let Some(first) = col.iter().find(|v| v.abs() > SIGN_TOL) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        eigenvectors.set_column(dst, &col);
    }
    Ok(SpectralBasis {
        eigenvectors,
        eigenvalues,
    })
}

impl SpectralBasis {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `U`, one eigenvector per column.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Graph Fourier transform `Uᵀx` of a fully observed signal.
    pub fn gft(&self, x: &GraphSignal) -> Result<DVector<f64>> {
        if !x.is_fully_observed() {
            return Err(Error::NotFullyObserved);
        }
        self.gft_values(x.values())
    }

    pub fn gft_values(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: x.len(),
            });
        }
        Ok(self.eigenvectors.tr_mul(x))
    }

    /// Inverse transform `U·spectrum`.
    pub fn igft(&self, spectrum: &DVector<f64>) -> Result<GraphSignal> {
        if spectrum.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: spectrum.len(),
            });
        }
        Ok(GraphSignal::full(&self.eigenvectors * spectrum))
    }

    /// `U diag(λ) Uᵀ`.
    pub fn reconstruct_laplacian(&self) -> DMatrix<f64> {
        &self.eigenvectors * DMatrix::from_diagonal(&self.eigenvalues) * self.eigenvectors.transpose()
    }
}

/// Total variation of a fully observed signal under the chosen shift.
pub fn total_variation(graph: &Graph, x: &GraphSignal, form: TvForm, shift: ShiftMode) -> Result<f64> {
    if x.len() != graph.n() {
        return Err(Error::DimensionMismatch {
            expected: graph.n(),
            found: x.len(),
        });
    }
    if !x.is_fully_observed() {
        return Err(Error::NotFullyObserved);
    }
    let w = graph.shift(shift)?;
    let residual = x.values() - &w * x.values();
    Ok(match form {
        TvForm::L1 => residual.iter().map(|v| v.abs()).sum(),
        TvForm::Quadratic => 0.5 * residual.norm_squared(),
    })
}

/// `tr(X L Xᵀ)` for a `T×N` snapshot matrix, i.e. `Σ_t x_tᵀ L x_t`, which
/// equals `½ Σ_{i,j} W_ij ‖x_i − x_j‖²` over node series.
pub fn smoothness(graph: &Graph, x: &SignalMatrix) -> Result<f64> {
    if x.n_nodes() != graph.n() {
        return Err(Error::DimensionMismatch {
            expected: graph.n(),
            found: x.n_nodes(),
        });
    }
    if !x.is_fully_observed() {
        return Err(Error::NotFullyObserved);
    }
    let xl = x.values() * graph.laplacian();
    Ok(xl.component_mul(x.values()).sum())
}
