use std::f64::consts::PI;

use kuramoto_gnn::coupling::{compute_attention, row_stochastic_check, AttentionParams, CouplingMatrix, LogitScale};
use kuramoto_gnn::dynamics::{
    rhs_grand_linear, rhs_identical, rhs_kuramoto, rhs_kuramoto_local_order, Dynamics, DynamicsSpec,
};
use kuramoto_gnn::graph::{generate_synthetic, load_bundle, make_split, save_bundle, SyntheticKind};
use kuramoto_gnn::integrate::{integrate_fixed, SolverConfig};
use kuramoto_gnn::model::{forward, softmax_rows, toy_unroll, CouplingMode, ModelConfig, ModelParams};
use kuramoto_gnn::syncdiag::{order_parameter, pairwise_distance_stats};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random row-stochastic coupling on a random support with self loops.
fn random_coupling(n: usize, density: f64, rng: &mut ChaCha8Rng) -> CouplingMatrix {
    let rows = (0..n)
        .map(|i| {
            let mut row: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j == i || rng.random::<f64>() < density)
                .collect::<Vec<_>>()
                .into_iter()
                .map(|j| (j, rng.random_range(0.1..1.0)))
                .collect();
            let s: f64 = row.iter().map(|e| e.1).sum();
            row.iter_mut().for_each(|e| e.1 /= s);
            row
        })
        .collect();
    CouplingMatrix::from_rows(rows).unwrap()
}

fn random_state(n: usize, d: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || rng.random_range(-scale..scale))
}

fn permute_coupling(a: &CouplingMatrix, perm: &[usize]) -> CouplingMatrix {
    // new node perm[i] is old node i
    let n = a.n();
    let mut rows = vec![Vec::new(); n];
    for i in 0..n {
        let (cols, vals) = a.row(i);
        rows[perm[i]] = cols.iter().zip(vals).map(|(&j, &v)| (perm[j], v)).collect();
    }
    CouplingMatrix::from_rows(rows).unwrap()
}

fn permute_rows(x: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    let mut out = x.clone();
    for (i, &p) in perm.iter().enumerate() {
        out.row_mut(p).assign(&x.row(i));
    }
    out
}

fn kuramoto(k: f64, omega: Array2<f64>, a: CouplingMatrix) -> DynamicsSpec {
    DynamicsSpec::new(Dynamics::Kuramoto { k, omega }, a).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kuramoto_field_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..9, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_coupling(n, 0.5, &mut rng);
        let x = random_state(n, d, 3.0, &mut rng);
        let omega = random_state(n, d, 1.0, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let f = rhs_kuramoto(&x, &kuramoto(1.3, omega.clone(), a.clone())).unwrap();
        let pa = permute_coupling(&a, &perm);
        let fp = rhs_kuramoto(&permute_rows(&x, &perm), &kuramoto(1.3, permute_rows(&omega, &perm), pa)).unwrap();
        prop_assert!(max_abs_diff(&permute_rows(&f, &perm), &fp) < 1e-12);
    }

    #[test]
    fn coupling_terms_ignore_a_common_shift(seed in any::<u64>(), n in 2usize..9, d in 1usize..4, c in -10.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_coupling(n, 0.5, &mut rng);
        let x = random_state(n, d, 3.0, &mut rng);
        let shifted = &x + c;
        let ident = DynamicsSpec::new(Dynamics::KuramotoIdentical { k: 0.7 }, a.clone()).unwrap();
        prop_assert!(max_abs_diff(&rhs_identical(&x, &ident).unwrap(), &rhs_identical(&shifted, &ident).unwrap()) < 1e-11);
        let lin = DynamicsSpec::new(Dynamics::GrandLinear, a).unwrap();
        prop_assert!(max_abs_diff(&rhs_grand_linear(&x, &lin).unwrap(), &rhs_grand_linear(&shifted, &lin).unwrap()) < 1e-11);
    }

    #[test]
    fn local_order_form_matches_pairwise_form(seed in any::<u64>(), n in 1usize..12, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = kuramoto(rng.random_range(0.1..4.0), random_state(n, d, 1.0, &mut rng), random_coupling(n, 0.4, &mut rng));
        let x = random_state(n, d, 6.0, &mut rng);
        let a = rhs_kuramoto(&x, &spec).unwrap();
        let b = rhs_kuramoto_local_order(&x, &spec).unwrap();
        prop_assert!(max_abs_diff(&a, &b) <= 1e-10);
    }

    #[test]
    fn order_parameter_invariances(phases in prop::collection::vec(-10.0f64..10.0, 1..20), rot in -PI..PI) {
        let n = phases.len();
        let x = Array2::from_shape_vec((n, 1), phases.clone()).unwrap();
        let (r, phi) = order_parameter(&x, 0).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&r));

        let mut reversed = phases.clone();
        reversed.reverse();
        let (r2, _) = order_parameter(&Array2::from_shape_vec((n, 1), reversed).unwrap(), 0).unwrap();
        prop_assert!((r - r2).abs() < 1e-12);

        let (r3, phi3) = order_parameter(&(&x + rot), 0).unwrap();
        prop_assert!((r - r3).abs() < 1e-12);
        if r > 1e-6 {
            let dphi = (phi3 - phi - rot).rem_euclid(2.0 * PI);
            prop_assert!(dphi.min(2.0 * PI - dphi) < 1e-8);
        }
    }

    #[test]
    fn pairwise_distances_ignore_rotation_and_translation(seed in any::<u64>(), n in 2usize..10, theta in -PI..PI, shift in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_state(n, 2, 3.0, &mut rng);
        let (c, s) = (theta.cos(), theta.sin());
        let rot = ndarray::array![[c, -s], [s, c]];
        let y = x.dot(&rot) + shift;
        let (m1, a1) = pairwise_distance_stats(&x).unwrap();
        let (m2, a2) = pairwise_distance_stats(&y).unwrap();
        prop_assert!((m1 - m2).abs() < 1e-10 && (a1 - a2).abs() < 1e-10);
    }

    #[test]
    fn attention_rows_are_stochastic(seed in any::<u64>(), n in 2usize..12, heads in 1usize..4, d_k in 1usize..5) {
        let g = generate_synthetic(SyntheticKind::ErdosRenyi(0.3), n, 3, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = AttentionParams::init(heads, d_k, 3, LogitScale::Dk, &mut rng);
        let x0 = random_state(n, 3, 4.0, &mut rng);
        let a = compute_attention(&x0, &params, &g).unwrap();
        prop_assert!(row_stochastic_check(&a, 1e-12));
        prop_assert!(a.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), n in 1usize..8, c in 1usize..6, scale in 0.1f64..800.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = softmax_rows(&random_state(n, c, scale, &mut rng));
        for row in p.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn split_masks_are_disjoint_with_exact_class_counts(seed in any::<u64>(), n in 4usize..40, per_class in 1usize..4, val in 0usize..10) {
        let g = generate_synthetic(SyntheticKind::Ring, n, 2, seed).unwrap();
        let s = make_split(&g, per_class, val, seed).unwrap();
        for i in 0..n {
            let k = s.train_mask[i] as u8 + s.val_mask[i] as u8 + s.test_mask[i] as u8;
            prop_assert_eq!(k, 1);
        }
        for class in 0..g.num_classes() {
            let members = g.labels().iter().filter(|&&l| l == class).count();
            let train = s.train_indices().iter().filter(|&&i| g.labels()[i] == class).count();
            prop_assert_eq!(train, per_class.min(members));
        }
        prop_assert_eq!(s.val_indices().len(), val.min(n - s.train_indices().len()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn bundle_roundtrip(seed in any::<u64>(), n in 2usize..30, f in 1usize..5) {
        let g = generate_synthetic(SyntheticKind::ErdosRenyi(0.2), n, f, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&g, dir.path()).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        prop_assert_eq!(back.num_nodes(), g.num_nodes());
        prop_assert_eq!(back.labels(), g.labels());
        prop_assert_eq!(back.features(), g.features());
        prop_assert_eq!(back.edges().collect::<Vec<_>>(), g.edges().collect::<Vec<_>>());
    }

    #[test]
    fn model_unroll_matches_fixed_step_integration(seed in any::<u64>(), n in 3usize..10, uniform in any::<bool>()) {
        let g = generate_synthetic(SyntheticKind::ErdosRenyi(0.4), n, 3, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = ModelConfig {
            t_end: 1.05,
            hidden: 3,
            heads: 2,
            d_k: 2,
            k: 1.7,
            coupling: if uniform { CouplingMode::Uniform } else { CouplingMode::Attention },
            ..ModelConfig::default()
        };
        let p = ModelParams::init(config, 3, 2, &mut rng).unwrap();
        let tape = forward(&g, &p, None).unwrap();
        let x0 = tape.initial_state().clone();
        let spec = kuramoto(1.7, x0.clone(), tape.coupling().clone());
        let traj = integrate_fixed(&x0, |x: &Array2<f64>| spec.rhs(x), &SolverConfig::euler(0.1, 1.05), false).unwrap();
        prop_assert_eq!(tape.num_steps(), 11);
        prop_assert!(max_abs_diff(tape.final_state(), traj.final_state()) < 1e-12);
    }
}

#[test]
fn toy_recursion_is_the_scalar_model_on_a_complete_graph() {
    let n = 6;
    let g = generate_synthetic(SyntheticKind::Complete, n, 4, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let config = ModelConfig {
        hidden: 1,
        coupling: CouplingMode::Uniform,
        t_end: 0.5,
        dt: 0.01,
        ..ModelConfig::default()
    };
    let mut p = ModelParams::init(config, 4, 2, &mut rng).unwrap();
    p.enc_b.fill(0.0);
    let w: Array1<f64> = p.enc_w.row(0).to_owned();
    let x0 = g.features().dot(&w);

    let toy = toy_unroll(x0.as_slice().unwrap(), 0.01, 50);
    let tape = forward(&g, &p, None).unwrap();
    for (i, want) in toy[50].iter().enumerate().take(n) {
        assert!((tape.final_state()[[i, 0]] - want).abs() < 1e-12);
    }
}
