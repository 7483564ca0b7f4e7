mod common;

use common::*;
use nalgebra::DMatrix;
use num_complex::Complex64;
use pcrit::filter::{information_step, ml_covariance, riccati_step, ErasureTrace};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ml_covariance_matches_riccati(seed in any::<u64>(), len in 1usize..=50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = random_system(&mut rng, 3);
        let gammas = random_gammas(&mut rng, len);
        let path = riccati_path(&sys, &gammas);
        let ml = ml_covariance(&gammas, &sys).unwrap();
        let err = rel_frobenius(&ml, path.last().unwrap());
        prop_assert!(err < 1e-7, "relative error {err}");
    }

    #[test]
    fn information_form_matches_riccati(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = random_system(&mut rng, 4);
        let p = random_spd(&mut rng, sys.state_dim());
        for gamma in [false, true] {
            let a = riccati_step(&p, gamma, &sys).unwrap();
            let b = information_step(&p, gamma, &sys).unwrap();
            prop_assert!(rel_frobenius(&a, &b) < 1e-9);
        }
    }

    #[test]
    fn riccati_is_monotone(seed in any::<u64>(), gamma in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = random_system(&mut rng, 3);
        let small = random_spd(&mut rng, sys.state_dim());
        let large = &small + random_spd(&mut rng, sys.state_dim());
        let diff = riccati_step(&large, gamma, &sys).unwrap() - riccati_step(&small, gamma, &sys).unwrap();
        prop_assert!(min_eigenvalue(&diff) >= -1e-9 * diff.norm().max(1.0));
    }

    #[test]
    fn noise_scaling_scales_the_covariance(seed in any::<u64>(), alpha in prop::sample::select(vec![0.1, 10.0, 3.7])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = random_system(&mut rng, 3);
        let scaled = unit.with_noise(unit.q() * alpha, unit.r() * alpha, unit.sigma0() * alpha).unwrap();
        let gammas = random_gammas(&mut rng, 60);
        // Roundoff grows with the conditioning of the trajectory so far.
        let mut worst_cond = 1.0f64;
        for (p1, pa) in riccati_path(&unit, &gammas).iter().zip(riccati_path(&scaled, &gammas)) {
            worst_cond = worst_cond.max(condition(p1));
            let err = rel_frobenius(&pa, &(p1 * alpha));
            prop_assert!(err <= 1e-13 * worst_cond, "relative error {err} at condition {worst_cond}");
        }
    }
}

#[test]
fn noise_scaling_is_exact_on_calibration_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for (sys, p) in [(scalar(2.0), 0.5), (observed_pair(), 0.5), (degenerate_pair(), 0.5), (degenerate_pair(), 0.9)] {
        let gammas: Vec<bool> = (0..100).map(|_| rng.random_bool(p)).collect();
        let n = sys.state_dim();
        let m = sys.output_dim();
        for alpha in [0.1, 10.0] {
            let scaled = sys
                .with_noise(
                    DMatrix::identity(n, n) * alpha,
                    DMatrix::identity(m, m) * alpha,
                    DMatrix::identity(n, n) * alpha,
                )
                .unwrap();
            for (p1, pa) in riccati_path(&sys, &gammas).iter().zip(riccati_path(&scaled, &gammas)) {
                let err = rel_frobenius(&pa, &(p1 * alpha));
                assert!(err <= 1e-12, "relative error {err}");
            }
        }
    }
}

#[test]
fn doubled_observation_is_a_lower_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..40 {
        let (original, comparison) = random_diagonal_pair(&mut rng);
        let gammas = random_gammas(&mut rng, 100);
        for (p, pt) in riccati_path(&original, &gammas).iter().zip(riccati_path(&comparison, &gammas)) {
            assert!(min_eigenvalue(&(p - &pt)) >= -1e-9 * p.norm().max(1.0));
        }
    }
}

#[test]
fn f_matrix_spectrum_is_bracketed() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let n = rng.random_range(1..=3);
        let lambdas: Vec<Complex64> = (0..n)
            .map(|_| Complex64::from_polar(rng.random_range(1.2..3.0), rng.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        let big = lambdas.iter().map(|l| l.norm()).fold(0.0, f64::max);
        let small = lambdas.iter().map(|l| l.norm()).fold(f64::INFINITY, f64::min);
        let k = rng.random_range(0..=20);
        let f = f_matrix(&lambdas, k);
        let ffh = &f * f.adjoint();
        let eig = ffh.map(|z| z.re).symmetric_eigenvalues();
        let lo = (big + 1.0).powi(-2) - 1e-10;
        let hi = (small - 1.0).powi(-2) + 1e-10;
        assert!(eig.iter().all(|&e| e >= lo && e <= hi), "{eig} outside [{lo}, {hi}]");
    }
}

#[test]
fn arrival_gaps_are_geometric() {
    let p = 0.3;
    let trace = ErasureTrace::generate(p, 2024, 400_000).unwrap();
    let arrivals: Vec<usize> = trace.gammas.iter().enumerate().filter(|(_, &g)| g).map(|(i, _)| i).collect();
    let gaps: Vec<usize> = arrivals.windows(2).map(|w| w[1] - w[0]).take(100_000).collect();
    assert_eq!(gaps.len(), 100_000);

    // Bins 1..=15 and a tail bin for gaps > 15.
    let bins = 15;
    let mut observed = vec![0.0; bins + 1];
    for &g in &gaps {
        observed[(g - 1).min(bins)] += 1.0;
    }
    let total = gaps.len() as f64;
    let mut expected: Vec<f64> = (1..=bins).map(|k| total * (1.0 - p).powi(k as i32 - 1) * p).collect();
    expected.push(total * (1.0 - p).powi(bins as i32));
    let stat: f64 = observed.iter().zip(&expected).map(|(o, e)| (o - e) * (o - e) / e).sum();
    let critical = ChiSquared::new(bins as f64).unwrap().inverse_cdf(0.99);
    assert!(stat < critical, "chi-squared {stat} >= {critical}");
}
