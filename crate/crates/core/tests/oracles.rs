//! Independent evaluations of low-order quantities, compared with the library
//! and frozen.

use approx::assert_relative_eq;

use beamseries::kernel::{kernel_v, KernelTable};
use beamseries::series::{compute_coeffs, CountertermTable};
use beamseries::spectrum::step_up;
use beamseries::trees::{counterterm, CountertermOptions, CountertermScale, Evaluator};
use beamseries::{Detuning, Frame, Mode, ModelParams, NuTable};

const MMAX: u32 = 9;

fn wide_params() -> ModelParams {
    ModelParams { eps0: 0.6, detuning: Detuning::Plus, ..Default::default() }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// First-order coefficients from the field `v0 = 2 q cos(Omega t) sin x`,
/// projecting `a v0^2 + b v0_t^2` in physical space (trapezoid rule in time,
/// Gauss-Legendre in space) and dividing by `omega_m^2 - Omega^2 n^2`.
fn first_order_by_quadrature(p: &ModelParams, eps: f64, q: f64, n: i32, m: u32) -> f64 {
    let omega = p.frequency(eps);
    let nodes = gauss_legendre(40);
    let nt = 64;
    let mut acc = 0.0;
    for j in 0..nt {
        let s = 2.0 * std::f64::consts::PI * j as f64 / nt as f64;
        for &(xi, w) in &nodes {
            let x = 0.5 * std::f64::consts::PI * (xi + 1.0);
            let v = 2.0 * q * s.cos() * x.sin();
            let vt = -2.0 * q * omega * s.sin() * x.sin();
            let f = p.a * v * v + p.b * vt * vt;
            acc += f * (f64::from(n) * s).cos() * (f64::from(m) * x).sin() * w;
        }
    }
    // (1 / nt) sum over time, (2 / pi) (pi / 2) sum over space.
    let projected = acc / nt as f64;
    let omega_m2 = f64::from(m).powi(4) + p.mu;
    projected / (omega_m2 - omega * omega * f64::from(n * n))
}

#[test]
fn first_order_matches_physical_space_projection() {
    let p = wide_params();
    let nu = NuTable::zero();
    let q = 0.9;
    let eps = 0.3;
    let table = compute_coeffs(&p, eps, &nu, &CountertermTable::new(), 1, MMAX, q).unwrap();
    for n in [-2, 0, 2] {
        for m in 1..=MMAX {
            let oracle = first_order_by_quadrature(&p, eps, q, n, m);
            assert!((table.get(1, Mode::new(n, m)) - oracle).abs() < 1e-13, "({n}, {m})");
        }
    }
    // Frozen from the quadrature evaluation.
    assert_relative_eq!(table.get(1, Mode::new(0, 1)), FROZEN_U1_0_1, max_relative = 1e-12);
    assert_relative_eq!(table.get(1, Mode::new(2, 3)), FROZEN_U1_2_3, max_relative = 1e-12);
}

const FROZEN_U1_0_1: f64 = 2.387224679524459;
const FROZEN_U1_2_3: f64 = -0.00016830866648986874;

/// Order-2 counterterm at `(2, 1)` expanded by hand over the two tree shapes:
/// the special line two levels below the root (path line `(2 + s, m1)`), and
/// the special line directly under the root next to a `(0, m1)` subtree.
/// Every divisor is far from zero at the chosen point, so all lines sit on scale -1.
fn counterterm_by_hand(p: &ModelParams, eps: f64) -> f64 {
    let omega = p.frequency(eps);
    let bar = (1.0 + p.mu).sqrt();
    let node = |b: bool, m: u32, m1: u32, m2: u32| {
        let v = kernel_v(m, m1, m2);
        if b {
            -p.b * omega * omega * v
        } else {
            p.a * v
        }
    };
    let line = |b: bool, n: i32| if b { f64::from(n) } else { 1.0 };
    let mut sum = 0.0;
    for t2 in [false, true] {
        for t1 in [false, true] {
            for m1 in 1..=MMAX {
                let omega_m1 = f64::from(m1).powi(4) + p.mu;
                // Path shape: two planar orders at each node.
                for s in [1, -1] {
                    // The amplitude modes never propagate.
                    if (2 + s, m1) == (1, 1) {
                        continue;
                    }
                    let shifted = omega * f64::from(s) + bar;
                    let x = shifted.abs() - omega_m1.sqrt();
                    assert!(step_up(x, p.gamma) == 1.0);
                    let g = 1.0 / (omega_m1 - shifted * shifted);
                    sum += 4.0
                        * node(t2, 1, m1, 1)
                        * node(t1, m1, 1, 1)
                        * line(t2, 2 + s)
                        * g
                        * line(t2, -s)
                        * line(t1, 2)
                        * line(t1, s);
                }
                // Special line under the root, neutral subtree beside it.
                let g0 = 1.0 / omega_m1;
                sum += 4.0 * node(t2, 1, 1, m1) * node(t1, m1, 1, 1) * line(t2, 2) * line(t2, 0) * g0 * line(t1, 1) * line(t1, -1);
            }
        }
    }
    // l = -(m^3 / n) times the sum, with m = 1, n = 2.
    -sum / 2.0
}

#[test]
fn order_two_counterterm_matches_hand_expansion() {
    let p = wide_params();
    let nu = NuTable::zero();
    let eps = 0.3;
    let kernel = KernelTable::new(MMAX);
    let ct = CountertermTable::new();
    let ev = Evaluator {
        frame: Frame::new(&p, eps, &nu),
        kernel: &kernel,
        q: 1.0,
        counterterms: &ct,
        counterterm_scale: CountertermScale::Exiting,
    };
    let lib = counterterm(2, Mode::new(2, 1), -1, &ev, CountertermOptions::new(MMAX)).unwrap();
    let hand = counterterm_by_hand(&p, eps);
    assert_relative_eq!(lib, hand, max_relative = 1e-12);
    assert_relative_eq!(lib, FROZEN_L2_2_1, max_relative = 1e-12);
}

const FROZEN_L2_2_1: f64 = -3.447891206679441;
