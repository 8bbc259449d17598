use cca_subspace::estimator::{sample_cca, sample_covariances, sample_gaussian};
use cca_subspace::linalg::{self, Matrix};
use cca_subspace::losses::principal_angles;
use cca_subspace::model::{apply_transform, build_joint, population_cca, random_pd, random_spec};
use cca_subspace::seeds;
use cca_subspace::theory::{gaussian_kl, hadamard_bound_check, upper_rate, NormKind, RateParams};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(r: usize, c: usize, seed: u64) -> Matrix {
    let mut rng = seeds::rng(seed);
    Matrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng))
}

fn lambdas_from(raw: &[f64], m: usize) -> Vec<f64> {
    let mut l: Vec<f64> = raw.iter().take(m).cloned().collect();
    l.sort_by(|a, b| b.total_cmp(a));
    l
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn angles_are_symmetric_and_bounded(p in 2usize..9, kk in 1usize..8, seed in any::<u64>()) {
        let k = kk.min(p - 1).max(1);
        let u1 = gaussian(p, k, seeds::derive(seed, &[0]));
        let u2 = gaussian(p, k, seeds::derive(seed, &[1]));
        let sx = random_pd(p, seeds::derive(seed, &[2]));
        let a = principal_angles(&u1, &u2, &sx).unwrap();
        let b = principal_angles(&u2, &u1, &sx).unwrap();
        prop_assert!((a.l1 - b.l1).abs() < 1e-12);
        prop_assert!((a.l2 - b.l2).abs() < 1e-12);
        prop_assert!(a.angles.iter().all(|t| (0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(t)));
        prop_assert!(a.l1 <= a.l2 + 1e-12 && a.l2 <= k as f64 * a.l1 + 1e-12);
        prop_assert!(a.op_dist <= 1.0 + 1e-12);
        prop_assert!(a.fro_sq() <= 2.0 * k as f64 + 1e-12);
    }

    #[test]
    fn angles_ignore_column_mixing(p in 2usize..9, kk in 1usize..8, seed in any::<u64>()) {
        let k = kk.min(p - 1).max(1);
        let u1 = gaussian(p, k, seeds::derive(seed, &[0]));
        let u2 = gaussian(p, k, seeds::derive(seed, &[1]));
        let t = gaussian(k, k, seeds::derive(seed, &[2])) + Matrix::identity(k, k) * 3.0;
        let sx = random_pd(p, seeds::derive(seed, &[3]));
        let a = principal_angles(&u1, &u2, &sx).unwrap();
        let b = principal_angles(&(&u1 * &t), &u2, &sx).unwrap();
        prop_assert!((a.l2 - b.l2).abs() < 1e-9);
        let same = principal_angles(&u1, &(&u1 * &t), &sx).unwrap();
        prop_assert!(same.l2 < 1e-12);
    }

    #[test]
    fn correlations_are_linear_invariants(
        p1 in 2usize..6,
        p2 in 2usize..6,
        raw in proptest::collection::vec(0.0f64..0.99, 5),
        seed in any::<u64>(),
    ) {
        let lambdas = lambdas_from(&raw, p1.min(p2));
        let spec = random_spec(p1, p2, lambdas.clone(), None, seed).unwrap();
        let cov = build_joint(&spec).unwrap();
        let t1 = gaussian(p1, p1, seeds::derive(seed, &[7])) + Matrix::identity(p1, p1) * 4.0;
        let t2 = gaussian(p2, p2, seeds::derive(seed, &[8])) + Matrix::identity(p2, p2) * 4.0;
        let moved = population_cca(&apply_transform(&cov, &t1, &t2).unwrap()).unwrap();
        for (a, b) in moved.lambdas.iter().zip(&lambdas) {
            prop_assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn sample_correlations_in_unit_interval(p1 in 1usize..5, p2 in 1usize..5, seed in any::<u64>()) {
        let m = p1.min(p2);
        let spec = random_spec(p1, p2, vec![0.5; m], None, seed).unwrap();
        let data = sample_gaussian(&build_joint(&spec).unwrap(), 4 * (p1 + p2), seeds::derive(seed, &[9])).unwrap();
        let est = sample_cca(&sample_covariances(&data, false).unwrap(), m).unwrap();
        prop_assert!(est.lambdas.iter().all(|l| (0.0..=1.0 + 1e-12).contains(l)));
        prop_assert!(est.lambdas.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn kl_is_nonnegative(p in 1usize..6, seed in any::<u64>()) {
        let a = random_pd(p, seeds::derive(seed, &[0]));
        let b = random_pd(p, seeds::derive(seed, &[1]));
        let kl = cca_subspace::theory::gaussian_kl_full(&a, &b, 3).unwrap();
        prop_assert!(kl >= -1e-12);
        prop_assert!(cca_subspace::theory::gaussian_kl_full(&a, &a, 3).unwrap().abs() < 1e-10);
    }

    #[test]
    fn principal_rate_is_inverse_in_n(n in 1usize..100_000, lk in 0.2f64..1.0, gap in 0.01f64..0.2) {
        let lk1 = (lk - gap).max(0.0);
        let p = RateParams::new(8, 9, n, 3, lk, lk1).unwrap();
        let a = upper_rate(&p, NormKind::Operator).unwrap().principal;
        let b = upper_rate(&p.with_n(2 * n), NormKind::Operator).unwrap().principal;
        prop_assert!((a - 2.0 * b).abs() <= 1e-12 * a.max(1e-300));
    }

    #[test]
    fn hadamard_bounds_hold(m in 1usize..12, n in 1usize..12, seed in any::<u64>()) {
        let mut rng = seeds::rng(seed);
        let mut draw = |len| -> Vec<f64> { (0..len).map(|_| 0.1 + rand::Rng::random_range(&mut rng, 0.0..5.0)).collect() };
        let alpha = draw(m);
        let beta = draw(n);
        for r in hadamard_bound_check(&alpha, &beta, 5, seed, [1.0; 3]).unwrap() {
            prop_assert_eq!(r.violations, 0);
        }
    }

    #[test]
    fn seed_derivation_is_pure(master in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        prop_assert_eq!(seeds::derive(master, &[a, b]), seeds::derive(master, &[a, b]));
    }
}

#[test]
fn gaussian_kl_of_joint_models_matches_full() {
    let spec = random_spec(3, 4, vec![0.7, 0.4, 0.1], None, 5).unwrap();
    let other = random_spec(3, 4, vec![0.6, 0.3, 0.2], None, 6).unwrap();
    let (a, b) = (build_joint(&spec).unwrap(), build_joint(&other).unwrap());
    let direct = cca_subspace::theory::gaussian_kl_full(&a.full(), &b.full(), 2).unwrap();
    assert_eq!(gaussian_kl(&a, &b, 2).unwrap(), direct);
    assert!(linalg::cholesky(&a.full()).is_ok());
}
