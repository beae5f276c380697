use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use beamseries::diophantine::check_mass;
use beamseries::io::{read_coeffs_csv, write_coeffs_csv};
use beamseries::kernel::{kernel_v, parity_odd, triple_sine_exact, triple_sine_quadrature};
use beamseries::sampling::random_nu;
use beamseries::series::{compute_coeffs, CountertermTable};
use beamseries::spectrum::{
    chi_h, in_lambda, lambda_modes, propagator, scaled_propagator, scales_of, LineKind,
};
use beamseries::{Detuning, Mode, ModelParams, NuTable};

fn wide_params() -> ModelParams {
    ModelParams { eps0: 0.6, nu_bound: 0.25, detuning: Detuning::Plus, ..Default::default() }
}

/// Zero counterterms on the near-resonant modes up to order `kmax`.
fn zero_counterterms(p: &ModelParams, kmax: usize, nmax: u32, mmax: u32) -> CountertermTable {
    let mut ct = CountertermTable::new();
    for mode in lambda_modes(p, nmax, mmax) {
        for r in 2..=kmax {
            ct.insert(r, mode, vec![0.0]);
        }
    }
    ct
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn partition_of_unity(log_x in -25.0f64..3.0, hmax in 30i32..=40, gamma_exp in 6i32..=10) {
        let gamma = 2f64.powi(-gamma_exp);
        let x = log_x.exp();
        prop_assume!(x > gamma * 2f64.powi(-hmax));
        let sum: f64 = (-1..=hmax).map(|h| chi_h(x, h, gamma)).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn at_most_two_consecutive_scales(log_x in -25.0f64..3.0) {
        let gamma = 1.0 / 64.0;
        let x = log_x.exp();
        let s = scales_of(x, gamma, 40);
        prop_assert!(s.len() <= 2);
        if s.len() == 2 {
            prop_assert_eq!(s[1], s[0] + 1);
        }
        for h in -1..=40 {
            prop_assert_eq!(chi_h(x, h, gamma) != 0.0, s.contains(&h));
        }
    }

    #[test]
    fn kernel_symmetry_and_parity(m in 1u32..60, m1 in 1u32..60, m2 in 1u32..60) {
        prop_assert_eq!(kernel_v(m, m1, m2), kernel_v(m, m2, m1));
        if !parity_odd(m, m1, m2) {
            prop_assert_eq!(kernel_v(m, m1, m2), 0.0);
        }
        // The sine triple is symmetric in all three indices.
        prop_assert!((triple_sine_exact(m, m1, m2) - triple_sine_exact(m1, m, m2)).abs() < 1e-15);
    }

    #[test]
    fn quadrature_oracle(m in 1u32..40, m1 in 1u32..40, m2 in 1u32..40) {
        prop_assert!((triple_sine_quadrature(m, m1, m2) - triple_sine_exact(m, m1, m2)).abs() < 1e-10);
    }

    #[test]
    fn shifts_are_odd(n in 1i32..20, m in 1u32..20, v in -0.1f64..0.1) {
        let mut nu = NuTable::zero();
        nu.set_pair(n, m, v);
        prop_assert_eq!(nu.get(Mode::new(-n, m)), -nu.get(Mode::new(n, m)));
        prop_assert_eq!(nu.shift(Mode::new(-n, m)), nu.shift(Mode::new(n, m)));
    }

    #[test]
    fn mass_conditions_nest_in_gamma(mu in 0.0f64..0.125) {
        if check_mass(mu, 2.0 / 128.0, 4.0, 40, 0) {
            prop_assert!(check_mass(mu, 1.0 / 128.0, 4.0, 40, 0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn small_divisors_only_on_the_near_resonant_set(u in 0.0f64..1.0, seed in 0u64..1000) {
        let p = wide_params();
        let eps = (u * p.eps0).max(1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nu = random_nu(&p, 20, 12, 1.0, &mut rng);
        for n in -20..=20 {
            for m in 2..=12 {
                let mode = Mode::new(n, m);
                for h in 0..=6 {
                    if scaled_propagator(mode, h, &p, eps, &nu, LineKind::A).unwrap() != 0.0 {
                        prop_assert!(in_lambda(mode, &p), "({}, {}) at scale {}", n, m, h);
                    }
                }
            }
        }
    }

    #[test]
    fn scale_pieces_sum_to_the_propagator(u in 0.0f64..1.0, n in -8i32..=8, m in 2u32..12) {
        let p = wide_params();
        let eps = (u * p.eps0).max(1e-6);
        let nu = NuTable::zero();
        let mode = Mode::new(n, m);
        let total: f64 = (-1..=p.hmax)
            .map(|h| scaled_propagator(mode, h, &p, eps, &nu, LineKind::A).unwrap())
            .sum();
        let g = propagator(mode, &p, eps, &nu).unwrap();
        prop_assert!((total - g).abs() <= 1e-12 * g.abs());
    }

    #[test]
    fn coefficient_invariants(u in 0.0f64..1.0, seed in 0u64..1000, q in 0.2f64..2.0) {
        let p = wide_params();
        let eps = (u * p.eps0).max(1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nu = random_nu(&p, 5, 9, 1.0, &mut rng);
        let ct = zero_counterterms(&p, 4, 5, 9);
        let t = compute_coeffs(&p, eps, &nu, &ct, 4, 9, q).unwrap();
        t.check_invariants().unwrap();
        for (k, mode, v) in t.rows() {
            if mode.n.unsigned_abs() as usize > k + 1 || mode.m % 2 == 0 {
                prop_assert_eq!(v, 0.0);
            }
            prop_assert!((v - t.get(k, mode.mirrored())).abs() <= 1e-12 * v.abs().max(1e-300));
        }
    }

    #[test]
    fn coefficient_csv_round_trip(u in 0.0f64..1.0, q in 0.2f64..2.0) {
        let p = wide_params();
        let eps = (u * p.eps0).max(1e-6);
        let ct = zero_counterterms(&p, 3, 4, 9);
        let t = compute_coeffs(&p, eps, &NuTable::zero(), &ct, 3, 9, q).unwrap();
        let mut buf = Vec::new();
        write_coeffs_csv(&t, &mut buf).unwrap();
        let back = read_coeffs_csv(buf.as_slice(), 3, 9, q).unwrap();
        for (k, mode, v) in t.rows() {
            prop_assert_eq!(back.get(k, mode), v);
        }
    }
}
