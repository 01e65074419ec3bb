//! Graph signals and snapshot matrices.
//!
//! A [`GraphSignal`] is one value per vertex plus an observation mask. A
//! [`SignalMatrix`] stacks `T` snapshots as rows over `N` nodes, so column `i`
//! is the time series of node `i`. Missing cells carry `NaN` and
//! `observed = false`; filled cells carry a value but stay unobserved.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSignal {
    values: DVector<f64>,
    mask: Vec<bool>,
}

impl GraphSignal {
    /// A signal observed on every vertex.
    pub fn full(values: DVector<f64>) -> Self {
        let mask = vec![true; values.len()];
        GraphSignal { values, mask }
    }

    /// A signal observed only where `mask` is set. Unobserved values are
    /// ignored by every consumer and may be `NaN`.
    pub fn partial(values: DVector<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != mask.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                found: mask.len(),
            });
        }
        for (i, (&v, &m)) in values.iter().zip(&mask).enumerate() {
            if m && !v.is_finite() {
                return Err(Error::ObservedNonFinite { row: 0, col: i });
            }
        }
        Ok(GraphSignal { values, mask })
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Self::full(DVector::from_column_slice(values))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_fully_observed(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    /// Same values, observed only on `mask`.
    pub fn with_mask(&self, mask: Vec<bool>) -> Result<Self> {
        Self::partial(self.values.clone(), mask)
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    values: DMatrix<f64>,
    observed: DMatrix<bool>,
}

impl SignalMatrix {
    /// Builds a matrix with an explicit receipt mask. Every observed cell must
    /// be finite; unobserved cells may hold `NaN` or a filled value.
    pub fn new(values: DMatrix<f64>, observed: DMatrix<bool>) -> Result<Self> {
        if values.shape() != observed.shape() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                found: observed.len(),
            });
        }
        if values.nrows() < 1 {
            return Err(Error::TooSmall {
                what: "snapshots",
                min: 1,
                found: values.nrows(),
            });
        }
        if values.ncols() < 2 {
            return Err(Error::TooSmall {
                what: "nodes",
                min: 2,
                found: values.ncols(),
            });
        }
        for r in 0..values.nrows() {
            for c in 0..values.ncols() {
                if observed[(r, c)] && !values[(r, c)].is_finite() {
                    return Err(Error::ObservedNonFinite { row: r, col: c });
                }
            }
        }
        Ok(SignalMatrix { values, observed })
    }

    /// Every cell observed; all values must be finite.
    pub fn fully_observed(values: DMatrix<f64>) -> Result<Self> {
        let observed = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(values, observed)
    }

    /// Cells are observed exactly where they are finite.
    pub fn from_finite(values: DMatrix<f64>) -> Result<Self> {
        let observed = values.map(f64::is_finite);
        Self::new(values, observed)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let t = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: bad.len(),
            });
        }
        Self::from_finite(DMatrix::from_fn(t, n, |r, c| rows[r][c]))
    }

    pub fn n_snapshots(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn observed(&self) -> &DMatrix<bool> {
        &self.observed
    }

    pub fn is_fully_observed(&self) -> bool {
        self.observed.iter().all(|&m| m)
    }

    /// True when every cell holds a finite value, observed or filled.
    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&m| m).count()
    }

    pub fn mask_density(&self) -> f64 {
        self.observed_count() as f64 / self.observed.len() as f64
    }

    /// Snapshot `t` as a graph signal carrying the receipt mask.
    pub fn snapshot(&self, t: usize) -> GraphSignal {
        GraphSignal {
            values: self.values.row(t).transpose(),
            mask: self.observed.row(t).iter().copied().collect(),
        }
    }

    /// Snapshot `t` treated as ground truth on every vertex.
    pub fn snapshot_values(&self, t: usize) -> DVector<f64> {
        self.values.row(t).transpose()
    }

    /// Rows `range`, preserving masks.
    pub fn rows(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.n_snapshots() {
            return Err(Error::param(
                "rows",
                format!("{range:?} outside 0..{}", self.n_snapshots()),
            ));
        }
        let len = range.end - range.start;
        Self::new(
            self.values.rows(range.start, len).into_owned(),
            self.observed.rows(range.start, len).into_owned(),
        )
    }

    /// Rows whose every cell holds a finite value. Returns `None` if no row
    /// qualifies.
    pub fn complete_rows(&self) -> Option<Self> {
        let keep: Vec<usize> = (0..self.n_snapshots())
            .filter(|&r| self.values.row(r).iter().all(|v| v.is_finite()))
            .collect();
        if keep.is_empty() {
            return None;
        }
        let n = self.n_nodes();
        let values = DMatrix::from_fn(keep.len(), n, |r, c| self.values[(keep[r], c)]);
        let observed = DMatrix::from_fn(keep.len(), n, |r, c| self.observed[(keep[r], c)]);
        Some(SignalMatrix { values, observed })
    }

    /// Keeps only the listed node columns, in the given order.
    pub fn select_nodes(&self, nodes: &[usize]) -> Result<Self> {
        if let Some(&bad) = nodes.iter().find(|&&c| c >= self.n_nodes()) {
            return Err(Error::DimensionMismatch {
                expected: self.n_nodes(),
                found: bad,
            });
        }
        let t = self.n_snapshots();
        Self::new(
            DMatrix::from_fn(t, nodes.len(), |r, c| self.values[(r, nodes[c])]),
            DMatrix::from_fn(t, nodes.len(), |r, c| self.observed[(r, nodes[c])]),
        )
    }

    /// Appends the rows of `other` below `self`.
    pub fn append(&mut self, other: &SignalMatrix) -> Result<()> {
        if other.n_nodes() != self.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: self.n_nodes(),
                found: other.n_nodes(),
            });
        }
        let (t0, t1, n) = (self.n_snapshots(), other.n_snapshots(), self.n_nodes());
        let values = DMatrix::from_fn(t0 + t1, n, |r, c| {
            if r < t0 {
                self.values[(r, c)]
            } else {
                other.values[(r - t0, c)]
            }
        });
        let observed = DMatrix::from_fn(t0 + t1, n, |r, c| {
            if r < t0 {
                self.observed[(r, c)]
            } else {
                other.observed[(r - t0, c)]
            }
        });
        self.values = values;
        self.observed = observed;
        Ok(())
    }

    /// Number of observed cells per node column.
    pub fn observations_per_node(&self) -> Vec<usize> {
        (0..self.n_nodes())
            .map(|c| self.observed.column(c).iter().filter(|&&m| m).count())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observed_cells_must_be_finite() {
        let values = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        let observed = DMatrix::from_element(1, 2, true);
        assert!(matches!(
            SignalMatrix::new(values.clone(), observed),
            Err(Error::ObservedNonFinite { row: 0, col: 1 })
        ));
        let m = SignalMatrix::from_finite(values).unwrap();
        assert_eq!(m.observed_count(), 1);
        assert!(!m.is_complete());
    }

    #[test]
    fn needs_two_nodes_and_one_row() {
        assert!(SignalMatrix::fully_observed(DMatrix::zeros(3, 1)).is_err());
        assert!(SignalMatrix::fully_observed(DMatrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn complete_rows_and_append() {
        let mut m =
            SignalMatrix::from_rows(&[vec![1.0, 2.0], vec![f64::NAN, 3.0], vec![4.0, 5.0]])
                .unwrap();
        let c = m.complete_rows().unwrap();
        assert_eq!(c.n_snapshots(), 2);
        assert_eq!(c.values()[(1, 0)], 4.0);
        m.append(&c).unwrap();
        assert_eq!(m.n_snapshots(), 5);
        assert_eq!(m.observations_per_node(), vec![4, 5]);
    }

    #[test]
    fn partial_signal_length_checked() {
        assert!(GraphSignal::partial(DVector::zeros(3), vec![true; 2]).is_err());
        let s = GraphSignal::partial(
            DVector::from_vec(vec![1.0, f64::NAN, 2.0]),
            vec![true, false, true],
        )
        .unwrap();
        assert_eq!(s.observed_indices(), vec![0, 2]);
    }
}
