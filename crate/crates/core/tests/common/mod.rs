#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use wsn_gsp::{Graph, SignalMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Erdős–Rényi graph with uniform(0.1, 2) weights, plus a path so it is connected.
pub fn random_connected_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if j == i + 1 || rng.random_bool(p) {
                let v = rng.random_range(0.1..2.0);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    Graph::from_weights(w).unwrap()
}

/// Erdős–Rényi graph that may be disconnected or empty.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(p) {
                let v = rng.random_range(0.01..5.0);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    Graph::from_weights(w).unwrap()
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| normal(rng))
}

pub fn random_signals(rng: &mut ChaCha8Rng, t: usize, n: usize) -> SignalMatrix {
    SignalMatrix::fully_observed(DMatrix::from_fn(t, n, |_, _| normal(rng))).unwrap()
}

/// Vertices `0..sizes[0]` form cluster 0, the next `sizes[1]` cluster 1, and so on.
pub fn cluster_of(sizes: &[usize]) -> Vec<usize> {
    sizes.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c, s)).collect()
}

/// Each snapshot draws one N(0,1) level per cluster and copies it to every
/// member, then adds N(0, (noise_rel·rms)²) per vertex.
pub fn cluster_constant_signals(rng: &mut ChaCha8Rng, sizes: &[usize], t: usize, noise_rel: f64) -> SignalMatrix {
    let members = cluster_of(sizes);
    let n = members.len();
    let mut x = DMatrix::zeros(t, n);
    for r in 0..t {
        let levels: Vec<f64> = sizes.iter().map(|_| normal(rng)).collect();
        for v in 0..n {
            x[(r, v)] = levels[members[v]];
        }
    }
    if noise_rel > 0.0 {
        let rms = (x.norm_squared() / x.len() as f64).sqrt();
        for v in x.iter_mut() {
            *v += noise_rel * rms * normal(rng);
        }
    }
    SignalMatrix::fully_observed(x).unwrap()
}

/// Probability that a random within-cluster weight exceeds a random
/// cross-cluster weight (ties count one half).
pub fn edge_separation_auc(w: &DMatrix<f64>, members: &[usize]) -> f64 {
    let n = members.len();
    let (mut within, mut cross) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in (i + 1)..n {
            if members[i] == members[j] {
                within.push(w[(i, j)]);
            } else {
                cross.push(w[(i, j)]);
            }
        }
    }
    let mut score = 0.0;
    for &a in &within {
        for &b in &cross {
            score += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    score / (within.len() * cross.len()) as f64
}

/// ½ Σ_ij W_ij ‖x_i − x_j‖² with x_i the i-th column of `x`.
pub fn pairwise_smoothness(w: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut d = 0.0;
            for t in 0..x.nrows() {
                d += (x[(t, i)] - x[(t, j)]).powi(2);
            }
            s += 0.5 * w[(i, j)] * d;
        }
    }
    s
}

/// Largest |eigenvalue| of a symmetric matrix by power iteration on W².
pub fn spectral_radius_power(w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    let w2 = w * w;
    let mut v = DVector::from_fn(n, |i, _| 1.0 + i as f64 * 0.01);
    let mut lambda = 0.0;
    for _ in 0..20_000 {
        let next = &w2 * &v;
        let norm = next.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = next / norm;
        let l = (next.transpose() * &w2 * &next)[(0, 0)];
        v = next;
        if (l - lambda).abs() <= 1e-15 * l.abs().max(1.0) {
            lambda = l;
            break;
        }
        lambda = l;
    }
    lambda.max(0.0).sqrt()
}

/// Independent minimizer of ½‖M(x − y)‖² + (η/2)‖(I − S)x‖² by gradient
/// descent with a fixed 1/L step, run until the gradient norm is below `tol`.
pub fn gradient_descent_reconstruction(
    shift: &DMatrix<f64>,
    y: &DVector<f64>,
    mask: &[bool],
    eta: f64,
    tol: f64,
) -> DVector<f64> {
    let n = y.len();
    let a = DMatrix::<f64>::identity(n, n) - shift;
    let g = a.transpose() * &a;
    let lipschitz = 1.0 + eta * g.norm(); // Frobenius norm bounds the spectral norm
    let step = 1.0 / lipschitz;
    let grad = |x: &DVector<f64>| -> DVector<f64> {
        let mut r = eta * (&g * x);
        for i in 0..n {
            if mask[i] {
                r[i] += x[i] - y[i];
            }
        }
        r
    };
    let mut x = DVector::from_fn(n, |i, _| if mask[i] { y[i] } else { 0.0 });
    // Nesterov momentum with adaptive restart.
    let mut prev = x.clone();
    let mut momentum_t = 1.0f64;
    for _ in 0..20_000_000 {
        let next_t = (1.0 + (1.0 + 4.0 * momentum_t * momentum_t).sqrt()) / 2.0;
        let look = &x + (&x - &prev) * ((momentum_t - 1.0) / next_t);
        let gl = grad(&look);
        let cand = &look - gl * step;
        prev = x;
        x = cand;
        momentum_t = next_t;
        if (&x - &prev).dot(&(&look - &x)) > 0.0 {
            momentum_t = 1.0;
        }
        if grad(&x).norm() < tol {
            break;
        }
    }
    x
}
