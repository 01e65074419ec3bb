mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use wsn_gsp::dataset::{random_geometric_graph, synth_smooth};
use wsn_gsp::reconstruct::{ReconstructionConfig, Smoother};
use wsn_gsp::sampling::{
    coherence_scores, estimate_bandwidth, partition, partition_ordered, set_count_sweep, verify_embedding,
    PartitionConfig, SamplingMask, SamplingPlan,
};
use wsn_gsp::{spectral_decompose, Graph, SignalMatrix};

fn fixture(seed: u64, n: usize, t: usize) -> (Graph, SignalMatrix) {
    let g = random_geometric_graph(n, 0.5, seed).unwrap();
    let x = synth_smooth(&g, 2.min(n), 0.05, t, seed ^ 0xabc).unwrap();
    (g, x)
}

/// Clamped reconstruction by a dense solve of the normal equations, built
/// from the weights directly.
fn oracle_rmse(g: &Graph, set: &[usize], y: &DVector<f64>, eta: f64) -> f64 {
    let n = g.n();
    let shift = g.weights() / common::spectral_radius_power(g.weights());
    let a = DMatrix::<f64>::identity(n, n) - shift;
    let mut lhs = eta * a.transpose() * &a;
    let mut rhs = DVector::zeros(n);
    for &v in set {
        lhs[(v, v)] += 1.0;
        rhs[v] = y[v];
    }
    let mut x = lhs.lu().solve(&rhs).expect("nonsingular");
    for &v in set {
        x[v] = y[v];
    }
    ((&x - y).norm_squared() / n as f64).sqrt()
}

/// Algorithm 1 by exhaustive search: from each start, the shortest prefix of
/// the remaining order whose RMSE is within ε closes a set.
fn brute_force_sets(g: &Graph, order: &[usize], y: &DVector<f64>, eta: f64, eps: f64) -> (Vec<Vec<usize>>, bool) {
    let mut sets = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let closing = (start + 1..=order.len()).find(|&end| oracle_rmse(g, &order[start..end], y, eta) <= eps);
        match closing {
            Some(end) => {
                sets.push(order[start..end].to_vec());
                start = end;
            }
            None => {
                sets.push(order[start..].to_vec());
                return (sets, true);
            }
        }
    }
    (sets, false)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn plans_partition_vertices_and_respect_epsilon(seed in any::<u64>(), n in 3usize..12, eps in 0.01..1.0f64) {
        let (g, x) = fixture(seed, n, 6);
        let basis = spectral_decompose(&g).unwrap();
        let plan = partition(&g, &basis, &x, eps, &PartitionConfig::default()).unwrap();
        prop_assert!(plan.validate().is_ok());
        let mut seen = vec![0; n];
        plan.sets.iter().flatten().for_each(|&v| seen[v] += 1);
        prop_assert!(seen.iter().all(|&c| c == 1));
        let closed = if plan.last_set_incomplete { plan.n_sets() - 1 } else { plan.n_sets() };
        prop_assert!(plan.set_rmse[..closed].iter().all(|&r| r <= eps));
        prop_assert_eq!(plan.last_set_incomplete, *plan.set_rmse.last().unwrap() > eps);
        let again = partition(&g, &basis, &x, eps, &PartitionConfig::default()).unwrap();
        prop_assert_eq!(plan.to_json().unwrap(), again.to_json().unwrap());
        prop_assert_eq!(SamplingPlan::from_json(&plan.to_json().unwrap()).unwrap(), plan);
    }

    #[test]
    fn small_instances_match_exhaustive_prefix_search(seed in any::<u64>(), n in 2usize..=8, eps in 0.005..0.5f64) {
        let (g, x) = fixture(seed, n, 1);
        let mut rng = common::rng(seed);
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let eta = 1.0;
        let smoother = Smoother::new(&g, ReconstructionConfig::default().with_eta(eta)).unwrap();
        let plan = partition_ordered(&smoother, &order, &x, eps).unwrap();
        let y = x.snapshot_values(0);
        let (sets, incomplete) = brute_force_sets(&g, &order, &y, eta, eps);
        for (r, set) in plan.set_rmse.iter().zip(&plan.sets) {
            prop_assert!((r - oracle_rmse(&g, set, &y, eta)).abs() < 1e-9);
        }
        prop_assert_eq!(plan.sets, sets);
        prop_assert_eq!(plan.last_set_incomplete, incomplete);
    }

    #[test]
    fn coherence_sums_to_k(seed in any::<u64>(), n in 2usize..15) {
        let mut rng = common::rng(seed);
        let g = common::random_graph(&mut rng, n, 0.4);
        let basis = spectral_decompose(&g).unwrap();
        for k in 1..=n {
            let s = coherence_scores(&basis, k).unwrap();
            prop_assert!((s.iter().sum::<f64>() - k as f64).abs() < 1e-9);
            prop_assert!(s.iter().all(|&v| v >= -1e-15 && v <= 1.0 + 1e-12));
        }
        prop_assert!(coherence_scores(&basis, n).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn embedding_verdicts_match_direct_computation(seed in any::<u64>(), delta in 0.05..0.95f64) {
        let mut rng = common::rng(seed);
        let n = rng.random_range(2..15);
        let x = common::random_signals(&mut rng, 5, n);
        let mut m: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        m[0] = true;
        let mask = SamplingMask::new(m.clone());
        let check = verify_embedding(&mask, &x, delta).unwrap();
        let sampled = m.iter().filter(|&&b| b).count() as f64;
        let keep = DVector::from_fn(n, |i, _| if m[i] { 1.0 } else { 0.0 });
        let mut all = true;
        for t in 0..5 {
            let row = x.snapshot_values(t);
            let ratio = (n as f64 / sampled) * row.component_mul(&keep).norm_squared() / row.norm_squared();
            prop_assert!((ratio - check.ratios[t]).abs() < 1e-12);
            all &= (1.0 - delta) <= ratio && ratio <= (1.0 + delta);
        }
        prop_assert_eq!(check.satisfied, all);
    }
}

#[test]
fn vertex_transitive_graphs_score_uniformly() {
    // cycle C_8 and the complete graph K_6: every vertex looks the same
    let cycle: Vec<_> = (0..8).map(|i| (i.min((i + 1) % 8), i.max((i + 1) % 8), 1.0)).collect();
    let complete: Vec<_> = (0..6).flat_map(|i| ((i + 1)..6).map(move |j| (i, j, 2.0))).collect();
    for g in [Graph::from_edges(8, &cycle).unwrap(), Graph::from_edges(6, &complete).unwrap()] {
        let basis = spectral_decompose(&g).unwrap();
        let n = g.n();
        for k in 1..=n {
            for s in coherence_scores(&basis, k).unwrap() {
                assert!((s - k as f64 / n as f64).abs() < 1e-9, "k={k} score {s}");
            }
        }
    }
}

#[test]
fn bandlimited_fixture_has_bandwidth_three() {
    let g = random_geometric_graph(20, 0.4, 5).unwrap();
    let basis = spectral_decompose(&g).unwrap();
    let x = synth_smooth(&g, 3, 0.0, 50, 6).unwrap();
    let rms = (x.values().norm_squared() / x.values().len() as f64).sqrt();
    let mut rng = common::rng(7);
    let noisy = x.values().map(|v| v + 0.01 * rms * common::normal(&mut rng));
    let noisy = SignalMatrix::fully_observed(noisy).unwrap();
    assert_eq!(estimate_bandwidth(&basis, &noisy, 0.95).unwrap().k, 3);
    let full_band = common::random_signals(&mut rng, 30, 20);
    assert_eq!(estimate_bandwidth(&basis, &full_band, 1.0).unwrap().k, 20);
}

#[test]
fn sweeps_are_monotone_on_fixtures() {
    let epsilons = [0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0];
    for seed in 0..10 {
        let (g, x) = fixture(seed, 12, 20);
        let basis = spectral_decompose(&g).unwrap();
        let table = set_count_sweep(&g, &basis, &x, &epsilons, &PartitionConfig::default()).unwrap();
        let counts: Vec<usize> = table.rows.iter().map(|r| r.n_sets).collect();
        assert!(counts.windows(2).all(|w| w[0] <= w[1]), "seed {seed}: {counts:?}");
        for (row, plan) in table.rows.iter().zip(&table.plans) {
            if !row.last_set_incomplete {
                assert!(row.max_rmse <= row.epsilon);
            }
            assert_eq!(plan.n_sets(), row.n_sets);
        }
    }
}
