use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

use kfim::dynamics::{overlap, recall, step};
use kfim::infogeo::{
    effective_dimension, fim_empirical_oracle, fisher_matrix, natural_gradient,
    report_for_gradient, spectrum, FisherMatrix, DEFAULT_REL_CUTOFF,
};
use kfim::kernel::{corrupt, generate_patterns, gram, kernel_eval, GramMatrix, KernelConfig};
use kfim::klr::{loss, loss_gradient, predict_probs, train_neuron, NeuronTargets, TrainConfig};
use kfim::sweep::{run_cell, GridConfig};

/// A random network-like instance: Gram matrix, one alpha column, targets.
#[derive(Debug, Clone)]
struct Instance {
    k: GramMatrix,
    alpha: DVector<f64>,
    targets: NeuronTargets,
    lambda: f64,
}

fn instance(max_p: usize) -> impl Strategy<Value = Instance> {
    (
        1..=max_p,
        4usize..=32,
        any::<u64>(),
        -3.0f64..0.0,
        0.0f64..1.0,
    )
        .prop_flat_map(|(p, n, seed, log_gamma, lambda)| {
            (
                prop::collection::vec(-2.0f64..2.0, p),
                prop::collection::vec(0u8..=1, p),
            )
                .prop_map(move |(alpha, bits)| {
                    let patterns = generate_patterns(p, n, seed).unwrap();
                    let cfg = KernelConfig::rbf(10f64.powf(log_gamma)).unwrap();
                    Instance {
                        k: gram(&patterns, &cfg).unwrap(),
                        alpha: DVector::from_vec(alpha),
                        targets: NeuronTargets::from_bits(&bits).unwrap(),
                        lambda,
                    }
                })
        })
}

fn bipolar(n: usize) -> impl Strategy<Value = Vec<i8>> {
    prop::collection::vec(prop_oneof![Just(-1i8), Just(1i8)], n)
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_is_symmetric_unit_diagonal_psd(p in 1usize..=16, n in 1usize..=40, seed: u64, lg in -4.0f64..1.0) {
        let patterns = generate_patterns(p, n, seed).unwrap();
        let k = gram(&patterns, &KernelConfig::rbf(10f64.powf(lg)).unwrap()).unwrap();
        let m = k.values();
        for a in 0..p {
            prop_assert_eq!(m[(a, a)], 1.0);
            for b in 0..p {
                prop_assert_eq!(m[(a, b)], m[(b, a)]);
            }
        }
        let eig = SymmetricEigen::new(m.clone()).eigenvalues;
        let top = eig.max();
        prop_assert!(eig.min() >= -1e-10 * top);
    }

    #[test]
    fn kernel_strictly_decreases_in_gamma(x in bipolar(12), y in bipolar(12), g in 1e-3f64..1.0, factor in 1.01f64..10.0) {
        prop_assume!(x != y);
        let near = kernel_eval(&x, &y, &KernelConfig::rbf(g).unwrap()).unwrap();
        let far = kernel_eval(&x, &y, &KernelConfig::rbf(g * factor).unwrap()).unwrap();
        prop_assert!(far < near);
        prop_assert!(near > 0.0 && near < 1.0);
    }

    #[test]
    fn corruption_is_self_inverse(x in bipolar(37), f in 0.0f64..=1.0, seed: u64) {
        let once = corrupt(&x, f, seed).unwrap();
        let flips = x.iter().zip(&once).filter(|(a, b)| a != b).count();
        prop_assert_eq!(flips, (f * 37.0).round() as usize);
        prop_assert_eq!(corrupt(&once, f, seed).unwrap(), x);
    }

    #[test]
    fn patterns_are_bipolar_and_reproducible(p in 1usize..=8, n in 1usize..=130, seed: u64) {
        let a = generate_patterns(p, n, seed).unwrap();
        prop_assert_eq!(&a, &generate_patterns(p, n, seed).unwrap());
        prop_assert!(a.iter().flatten().all(|&v| v == 1 || v == -1));
    }

    #[test]
    fn overlap_of_self_and_negation(x in bipolar(25)) {
        let neg: Vec<i8> = x.iter().map(|v| -v).collect();
        prop_assert_eq!(overlap(&x, &x).unwrap(), 1.0);
        prop_assert_eq!(overlap(&x, &neg).unwrap(), -1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradient_matches_central_differences(inst in instance(16)) {
        let grad = loss_gradient(&inst.alpha, &inst.k, &inst.targets, inst.lambda).unwrap();
        let fd = DVector::from_iterator(inst.alpha.len(), (0..inst.alpha.len()).map(|i| {
            let h = 1e-5 * inst.alpha[i].abs().max(1.0);
            let mut up = inst.alpha.clone();
            let mut down = inst.alpha.clone();
            up[i] += h;
            down[i] -= h;
            let lu = loss(&up, &inst.k, &inst.targets, inst.lambda).unwrap();
            let ld = loss(&down, &inst.k, &inst.targets, inst.lambda).unwrap();
            (lu - ld) / (2.0 * h)
        }));
        prop_assert!(rel_err(&fd, &grad) < 1e-5, "rel err {}", rel_err(&fd, &grad));
    }

    #[test]
    fn loss_is_invariant_under_label_and_sign_flip(inst in instance(12)) {
        let flipped_bits: Vec<u8> = inst.targets.values().iter().map(|&t| if t > 0.5 { 0 } else { 1 }).collect();
        let flipped = NeuronTargets::from_bits(&flipped_bits).unwrap();
        let a = loss(&inst.alpha, &inst.k, &inst.targets, inst.lambda).unwrap();
        let b = loss(&(-&inst.alpha), &inst.k, &flipped, inst.lambda).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn natural_gradient_metric_identity(inst in instance(12)) {
        let g = fisher_matrix(&inst.alpha, &inst.k).unwrap();
        let spec = spectrum(&g).unwrap();
        let grad = loss_gradient(&inst.alpha, &inst.k, &inst.targets, inst.lambda).unwrap();
        let (nat, kept) = natural_gradient(&grad, &spec, DEFAULT_REL_CUTOFF).unwrap();
        let mut projected = DVector::zeros(grad.len());
        for k in 0..kept {
            let v = spec.eigenvectors.column(k);
            projected.axpy(v.dot(&grad), &v, 1.0);
        }
        let reconstructed = &g.values * &nat;
        prop_assert!(rel_err(&reconstructed, &projected) < 1e-8);
    }

    #[test]
    fn scaling_the_metric(inst in instance(10), c in 1e-3f64..1e3) {
        let g = fisher_matrix(&inst.alpha, &inst.k).unwrap();
        let scaled = FisherMatrix::from_matrix(&g.values * c).unwrap();
        let (s1, s2) = (spectrum(&g).unwrap(), spectrum(&scaled).unwrap());
        prop_assert!((s1.d_eff - s2.d_eff).abs() <= 1e-9 * s1.d_eff);
        let grad = loss_gradient(&inst.alpha, &inst.k, &inst.targets, inst.lambda).unwrap();
        let r1 = report_for_gradient(&grad, &s1, DEFAULT_REL_CUTOFF).unwrap();
        let r2 = report_for_gradient(&grad, &s2, DEFAULT_REL_CUTOFF).unwrap();
        prop_assume!(r1.retained_modes == r2.retained_modes);
        prop_assert!((r2.riemann_norm_sq * c - r1.riemann_norm_sq).abs() <= 1e-7 * r1.riemann_norm_sq);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fisher_matches_enumeration_oracle(inst in instance(12)) {
        let fast = fisher_matrix(&inst.alpha, &inst.k).unwrap();
        let slow = fim_empirical_oracle(&inst.alpha, &inst.k).unwrap();
        prop_assert!((&fast.values - &slow.values).amax() <= 1e-12);
    }

    #[test]
    fn stable_rank_bounds(eigs in prop::collection::vec(prop_oneof![Just(0.0), 1e-12f64..1e3], 1..20)) {
        let positive = eigs.iter().filter(|&&l| l > 0.0).count();
        prop_assume!(positive > 0);
        let d = effective_dimension(&eigs).unwrap();
        prop_assert!(d >= 1.0 - 1e-12 && d <= positive as f64 + 1e-9, "d={d} positive={positive}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn rank1_residual_in_the_rank1_limit(
        v in prop::collection::vec(-1.0f64..1.0, 2..10),
        g in prop::collection::vec(-1.0f64..1.0, 2..10),
        eps in 1e-12f64..1e-7,
        top in 1e-3f64..1e3,
    ) {
        let p = v.len().min(g.len());
        let v = DVector::from_column_slice(&v[..p]);
        prop_assume!(v.norm() > 1e-3);
        let v = v.normalize();
        let grad = DVector::from_column_slice(&g[..p]);
        prop_assume!(grad.norm() > 1e-6);
        let m = &v * v.transpose() * top + DMatrix::identity(p, p) * (eps * top);
        let spec = spectrum(&FisherMatrix::from_matrix(m).unwrap()).unwrap();
        prop_assert!(spec.ratio_2_1 < 1e-6);
        let report = report_for_gradient(&grad, &spec, DEFAULT_REL_CUTOFF).unwrap();
        let v1 = spec.eigenvectors.column(0);
        let orthogonal = (&grad - v1 * v1.dot(&grad)).norm() / grad.norm();
        prop_assert!((report.rank1_residual - orthogonal).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn convex_loss_reaches_same_minimum(p in 2usize..=8, seed: u64, lg in -2.0f64..0.0) {
        let patterns = generate_patterns(p, 24, seed).unwrap();
        let k = gram(&patterns, &KernelConfig::rbf(10f64.powf(lg)).unwrap()).unwrap();
        let targets = NeuronTargets::for_neuron(&patterns, 0);
        let lambda = 0.05;
        let cfg = |lr| TrainConfig { lambda, learning_rate: lr, max_epochs: 200_000, grad_tol: 1e-10 };
        let (a, ea) = train_neuron(&k, &targets, &cfg(0.02), 0).unwrap();
        let (b, eb) = train_neuron(&k, &targets, &cfg(0.05), 0).unwrap();
        prop_assume!(ea < 200_000 && eb < 200_000);
        let la = loss(&a, &k, &targets, lambda).unwrap();
        let lb = loss(&b, &k, &targets, lambda).unwrap();
        prop_assert!((la - lb).abs() <= 1e-6 * la.abs().max(lb.abs()));
    }

    #[test]
    fn exact_cue_is_a_fixed_point_when_training_separates(seed: u64) {
        let patterns = generate_patterns(6, 32, seed).unwrap();
        let kcfg = KernelConfig::rbf(0.02).unwrap();
        let cfg = TrainConfig { learning_rate: 0.02, max_epochs: 3000, ..TrainConfig::default() };
        let weights = kfim::klr::train(&patterns, &kcfg, &cfg).unwrap();
        let k = gram(&patterns, &kcfg).unwrap();
        let separated = (0..32).all(|i| {
            let p = predict_probs(&weights.column(i), &k).unwrap();
            let t = NeuronTargets::for_neuron(&patterns, i);
            p.iter().zip(t.values().iter()).all(|(p, t)| (p - t).abs() < 0.5)
        });
        prop_assume!(separated);
        for mu in 0..6 {
            let (_, changed) = step(patterns.pattern(mu), &patterns, &weights, &kcfg).unwrap();
            prop_assert_eq!(changed, 0);
            let a = recall(patterns.pattern(mu), mu, &patterns, &weights, &kcfg, 10, 0.95).unwrap();
            let b = recall(patterns.pattern(mu), mu, &patterns, &weights, &kcfg, 10, 0.95).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn cell_means_stay_in_range(load in prop_oneof![Just(0.125), Just(0.25), Just(0.5)], lg in -3.0f64..1.0, seed: u64) {
        let mut cfg = GridConfig::new(vec![10f64.powf(lg)], vec![load], 16);
        cfg.trials_per_cell = 2;
        cfg.train = TrainConfig { learning_rate: 0.02, max_epochs: 500, ..TrainConfig::default() };
        let cell = run_cell(cfg.gamma_values[0], load, &cfg, seed).unwrap();
        prop_assert_eq!(cell.divergence_count, 0);
        prop_assert!(cell.d_eff_mean >= 1.0 - 1e-12 && cell.d_eff_mean <= cell.num_patterns as f64 + 1e-9);
        prop_assert!(cell.lambda_max_mean >= 0.0);
    }
}
