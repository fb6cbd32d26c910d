use otfuse_core::fusion::{align_neurons, fuse_naive, fuse_ot, FusionConfig};
use otfuse_core::matrix::Matrix;
use otfuse_core::model::{functional_distance, load_model, save_model, LabeledDataset};
use otfuse_core::ot::{
    cost_matrix, coupling_to_permutation, emd, solve_exact, solve_sinkhorn_log, CostMatrix,
    DiscreteDistribution, GroundMetric, Permutation, SinkhornParams,
};
use otfuse_core::rng::seeded;
use otfuse_core::train::rebalance_undersample;
use otfuse_core::{HiddenActivation, Mlp, OutputActivation, ProbeSet};
use proptest::prelude::*;
use rand::Rng;

fn perm_cost(cost: &Matrix, mapping: &[usize]) -> f64 {
    mapping.iter().enumerate().map(|(j, &i)| cost[(i, j)]).sum()
}

fn net(sizes: &[usize], seed: u64) -> Mlp {
    let m = Mlp::glorot_seeded(
        sizes,
        HiddenActivation::Tanh,
        OutputActivation::Softmax,
        seed,
    )
    .unwrap();
    let mut rng = seeded(seed.wrapping_mul(31).wrapping_add(7));
    let p: Vec<f64> = m
        .params()
        .iter()
        .map(|p| p + rng.gen_range(-0.1..0.1))
        .collect();
    m.with_params(&p).unwrap()
}

fn arch() -> impl Strategy<Value = Vec<usize>> {
    (1usize..6, prop::collection::vec(2usize..9, 1..4), 1usize..4).prop_map(|(i, h, o)| {
        std::iter::once(i)
            .chain(h)
            .chain(std::iter::once(o))
            .collect()
    })
}

fn random_perms(m: &Mlp, seed: u64) -> (Mlp, Vec<Permutation>) {
    let mut rng = seeded(seed);
    let mut out = m.clone();
    let mut perms = Vec::new();
    for layer in 1..=m.hidden_layer_count() {
        let p = Permutation::random(m.layer_sizes()[layer], &mut rng);
        out = out.apply_hidden_permutation(layer, &p).unwrap();
        perms.push(p);
    }
    (out, perms)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_coupling_beats_random_permutations(n in 2usize..8, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let entries = Matrix::from_fn(n, n, |_, _| rng.gen_range(0.0..10.0));
        let cost = CostMatrix::from_entries(entries.clone()).unwrap();
        let mu = DiscreteDistribution::uniform(n);
        let coupling = solve_exact(&cost, &mu, &mu).unwrap();
        prop_assert!(coupling.marginal_residual() <= 1e-10);
        let perm = coupling_to_permutation(&coupling).unwrap();
        let best = perm_cost(&entries, perm.mapping());
        for _ in 0..20 {
            let other = Permutation::random(n, &mut rng);
            prop_assert!(best <= perm_cost(&entries, other.mapping()) + 1e-9);
        }
    }

    #[test]
    fn general_marginals_are_feasible(m in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let mut masses = |k: usize| {
            let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            DiscreteDistribution::new(raw.into_iter().map(|x| x / s).collect()).unwrap()
        };
        let (a, b) = (masses(m), masses(n));
        let cost = CostMatrix::from_entries(Matrix::from_fn(m, n, |i, j| ((i * 7 + j * 3) % 5) as f64)).unwrap();
        let coupling = solve_exact(&cost, &a, &b).unwrap();
        prop_assert!(coupling.marginal_residual() <= 1e-10);
        prop_assert!(coupling.plan().as_slice().iter().all(|&p| p >= -1e-15));
    }

    #[test]
    fn entropic_cost_never_below_exact(n in 2usize..7, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let cost = CostMatrix::from_entries(Matrix::from_fn(n, n, |_, _| rng.gen_range(0.0..1.0))).unwrap();
        let mu = DiscreteDistribution::uniform(n);
        let exact = emd(&solve_exact(&cost, &mu, &mu).unwrap(), &cost).unwrap();
        let params = SinkhornParams { epsilon: 0.05, ..Default::default() };
        let sol = solve_sinkhorn_log(&cost, &mu, &mu, params).unwrap();
        prop_assert!(sol.coupling.marginal_residual() <= params.tol);
        prop_assert!(emd(&sol.coupling, &cost).unwrap() >= exact - 1e-9);
    }

    #[test]
    fn permutation_group_laws(n in 1usize..20, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let p = Permutation::random(n, &mut rng);
        let q = Permutation::random(n, &mut rng);
        prop_assert!(p.then(&p.inverse()).unwrap().is_identity());
        let items: Vec<usize> = (0..n).collect();
        prop_assert_eq!(q.apply(&p.apply(&items)), p.then(&q).unwrap().apply(&items));
    }

    #[test]
    fn cost_matrix_self_distance_is_zero(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..6)) {
        for metric in [GroundMetric::Euclidean, GroundMetric::SquaredEuclidean, GroundMetric::Cosine] {
            let c = cost_matrix(&rows, &rows, metric).unwrap();
            for i in 0..rows.len() {
                prop_assert!(c.entries()[(i, i)].abs() <= 1e-12);
                for j in 0..rows.len() {
                    prop_assert!(c.entries()[(i, j)] >= -1e-12);
                }
            }
        }
    }

    #[test]
    fn hidden_permutations_preserve_function(sizes in arch(), seed in any::<u64>()) {
        let m = net(&sizes, seed);
        let (permuted, _) = random_perms(&m, seed ^ 1);
        let probes = ProbeSet::standard(sizes[0], seed);
        prop_assert!(functional_distance(&m, &permuted, &probes).unwrap() <= 1e-12);
    }

    #[test]
    fn alignment_recovers_and_preserves(sizes in arch(), seed in any::<u64>()) {
        let m = net(&sizes, seed);
        let (permuted, perms) = random_perms(&m, seed ^ 2);
        let result = align_neurons(&m, &permuted, &FusionConfig::default()).unwrap();
        let probes = ProbeSet::standard(sizes[0], seed);
        prop_assert!(functional_distance(&permuted, &result.aligned_source, &probes).unwrap() <= 1e-12);
        for (found, applied) in result.permutations.iter().zip(&perms) {
            prop_assert_eq!(found, &applied.inverse());
        }
        prop_assert!(result.layer_emds.iter().all(|&e| e >= 0.0));
        let fused = fuse_ot(&m, &permuted, &FusionConfig::default()).unwrap();
        prop_assert!(functional_distance(&fused, &m, &probes).unwrap() <= 1e-9);
    }

    #[test]
    fn independent_models_align_without_changing_function(sizes in arch(), seed in any::<u64>()) {
        let a = net(&sizes, seed);
        let b = net(&sizes, seed.wrapping_add(1));
        let result = align_neurons(&a, &b, &FusionConfig::default()).unwrap();
        let probes = ProbeSet::standard(sizes[0], seed);
        prop_assert!(functional_distance(&b, &result.aligned_source, &probes).unwrap() <= 1e-12);
    }

    #[test]
    fn self_fusion_is_identity(sizes in arch(), seed in any::<u64>(), w in 0.0f64..=1.0) {
        let m = net(&sizes, seed);
        let cfg = FusionConfig { average_weight: w, ..Default::default() };
        prop_assert_eq!(fuse_ot(&m, &m, &cfg).unwrap(), m.clone());
        prop_assert_eq!(fuse_naive(&m, &m, w).unwrap(), m);
    }

    #[test]
    fn emds_invariant_under_shared_permutation(seed in any::<u64>()) {
        let a = net(&[3, 6, 2], seed);
        let b = net(&[3, 6, 2], seed.wrapping_add(9));
        let p = Permutation::random(6, &mut seeded(seed));
        let cfg = FusionConfig::default();
        let before = align_neurons(&a, &b, &cfg).unwrap().layer_emds;
        let after = align_neurons(
            &a.apply_hidden_permutation(1, &p).unwrap(),
            &b.apply_hidden_permutation(1, &p).unwrap(),
            &cfg,
        )
        .unwrap()
        .layer_emds;
        prop_assert!((before[0] - after[0]).abs() <= 1e-12);
    }

    #[test]
    fn serialization_round_trip(sizes in arch(), seed in any::<u64>()) {
        let m = net(&sizes, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&m, &path).unwrap();
        prop_assert_eq!(load_model(&path).unwrap(), m);
    }

    #[test]
    fn rebalance_keeps_minority_and_subsets(minority in 1usize..40, majority in 1usize..120, ratio in 1.0f64..4.0, seed in any::<u64>()) {
        let n = minority + majority;
        let inputs: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= minority)).collect();
        let data = LabeledDataset::new(inputs, labels, 2).unwrap();
        let out = rebalance_undersample(&data, ratio, seed).unwrap();
        let counts = data.class_counts();
        let (small, large) = if counts[0] <= counts[1] { (0, 1) } else { (1, 0) };
        let got = out.class_counts();
        prop_assert_eq!(got[small], counts[small]);
        let expected = ((ratio * counts[small] as f64).round() as usize).min(counts[large]);
        prop_assert_eq!(got[large], expected);
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..out.len() {
            let id = out.input(i)[0] as usize;
            prop_assert!(seen.insert(id));
            prop_assert_eq!(data.label(id), out.label(i));
        }
    }
}
