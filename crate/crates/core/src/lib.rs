//! Lifetime-preserving sampling for wireless sensor networks via graph
//! signal processing.
//!
//! The pipeline learns a graph over the sensors from their measurements
//! ([`learn`]), reconstructs full snapshots from a subset of sensors
//! ([`reconstruct`]), and greedily splits the sensors into disjoint sampling
//! sets that each keep the reconstruction error under a threshold
//! ([`sampling`]). Activating the sets round-robin divides each sensor's duty
//! cycle by the number of sets ([`lifetime`]).

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
    }};
}

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod learn;
pub mod lifetime;
pub mod reconstruct;
pub mod sampling;
pub mod signal;

pub use error::{Error, Result};
pub use graph::{build_graph, spectral_decompose, Graph, ShiftMode, SpectralBasis, TvForm};
pub use signal::{GraphSignal, SignalMatrix};
