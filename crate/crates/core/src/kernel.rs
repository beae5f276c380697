//! The spatial interaction kernel `v_{m,m1,m2}`.
//!
//! The kernel is the Galerkin projection coefficient of `sin(m1 x) sin(m2 x)` onto
//! `sin(m x)`: `v = (2/pi) int_0^pi sin(m x) sin(m1 x) sin(m2 x) dx`. It vanishes
//! unless `m + m1 + m2` is odd.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Agreement required between the quadrature and the exact evaluation.
pub const ORACLE_TOLERANCE: f64 = 1e-10;

/// Normalization turning the sine-triple integral into the projection coefficient.
pub const C_NORM: f64 = 2.0 / std::f64::consts::PI;

pub fn parity_odd(m: u32, m1: u32, m2: u32) -> bool {
    (m + m1 + m2) % 2 == 1
}

/// Exact value of `int_0^pi sin(m x) sin(m1 x) sin(m2 x) dx` from the expansion of the
/// product into four sines, each integrating to `2/k` for odd `k`.
pub fn triple_sine_exact(m: u32, m1: u32, m2: u32) -> f64 {
    if !parity_odd(m, m1, m2) {
        return 0.0;
    }
    let (m, m1, m2) = (f64::from(m), f64::from(m1), f64::from(m2));
    0.5 * (1.0 / (m + m1 - m2) + 1.0 / (m - m1 + m2) - 1.0 / (m + m1 + m2) - 1.0 / (m - m1 - m2))
}

/// Numerical quadrature of the sine-triple integral (double-exponential rule on
/// panels shorter than the shortest half-period).
pub fn triple_sine_quadrature(m: u32, m1: u32, m2: u32) -> f64 {
    let panels = (m + m1 + m2).max(1) as usize;
    let width = std::f64::consts::PI / panels as f64;
    let (fm, fm1, fm2) = (f64::from(m), f64::from(m1), f64::from(m2));
    let f = |x: f64| (fm * x).sin() * (fm1 * x).sin() * (fm2 * x).sin();
    (0..panels)
        .map(|i| {
            let lo = width * i as f64;
            quadrature::integrate(f, lo, lo + width, 1e-15).integral
        })
        .sum()
}

/// Sine-triple integral, evaluated both ways and cross-checked.
pub fn triple_sine_integral(m: u32, m1: u32, m2: u32) -> Result<f64> {
    if !parity_odd(m, m1, m2) {
        return Ok(0.0);
    }
    let exact = triple_sine_exact(m, m1, m2);
    let quad = triple_sine_quadrature(m, m1, m2);
    if (quad - exact).abs() > ORACLE_TOLERANCE * exact.abs().max(1.0) {
        return Err(Error::KernelDisagreement { m, m1, m2, quadrature: quad, exact });
    }
    Ok(exact)
}

/// Kernel `v_{m,m1,m2}`; exactly zero on even-parity triples.
pub fn kernel_v(m: u32, m1: u32, m2: u32) -> f64 {
    C_NORM * triple_sine_exact(m, m1, m2)
}

/// The rational form `4 m m1 m2 / (pi (m^2 - (m1-m2)^2)(m^2 - (m1+m2)^2))`; equal to
/// `-kernel_v / 2` on odd-parity triples.
pub fn printed_closed_form(m: u32, m1: u32, m2: u32) -> f64 {
    let (m, m1, m2) = (f64::from(m), f64::from(m1), f64::from(m2));
    4.0 * m * m1 * m2
        / (std::f64::consts::PI * (m * m - (m1 - m2) * (m1 - m2)) * (m * m - (m1 + m2) * (m1 + m2)))
}

/// Coefficient `a - b Omega^2 n1 n2` of the quadratic nonlinearity in Fourier space.
pub fn nonlinearity_coefficient(a: f64, b: f64, omega: f64, n1: i32, n2: i32) -> f64 {
    a - b * omega * omega * f64::from(n1) * f64::from(n2)
}

/// Dense cache of `kernel_v` for indices up to `mmax`.
#[derive(Debug, Clone)]
pub struct KernelTable {
    mmax: u32,
    stride: usize,
    data: Vec<f64>,
}

impl KernelTable {
    pub fn new(mmax: u32) -> Self {
        let stride = mmax as usize + 1;
        let mut data = vec![0.0; stride * stride * stride];
        for m in 1..=mmax {
            for m1 in 1..=mmax {
                for m2 in 1..=mmax {
                    data[(m as usize * stride + m1 as usize) * stride + m2 as usize] =
                        kernel_v(m, m1, m2);
                }
            }
        }
        KernelTable { mmax, stride, data }
    }

    pub fn mmax(&self) -> u32 {
        self.mmax
    }

    /// The table multiplied by `factor` (used to inject faults in self-checks).
    pub fn scaled(&self, factor: f64) -> KernelTable {
        KernelTable { data: self.data.iter().map(|v| v * factor).collect(), ..self.clone() }
    }

    #[inline]
    pub fn get(&self, m: u32, m1: u32, m2: u32) -> f64 {
        debug_assert!(m <= self.mmax && m1 <= self.mmax && m2 <= self.mmax);
        self.data[(m as usize * self.stride + m1 as usize) * self.stride + m2 as usize]
    }
}

/// `S(m) = sum_{m1, m2 <= mmax, parity odd} |v_{m,m1,m2}| / (m1^3 m2^3)`.
pub fn kernel_sum_probe(m: u32, mmax: u32) -> f64 {
    kernel_sum_probe_restricted(m, mmax, mmax)
}

/// `S(m)` with the first index restricted to `m1 <= m1max`.
pub fn kernel_sum_probe_restricted(m: u32, mmax: u32, m1max: u32) -> f64 {
    let rows: Vec<f64> = (1..=m1max.min(mmax))
        .into_par_iter()
        .map(|m1| {
            let w1 = f64::from(m1).powi(3);
            let mut row = 0.0;
            let start = if (m + m1).is_multiple_of(2) { 1 } else { 2 };
            let mut m2 = start;
            while m2 <= mmax {
                row += kernel_v(m, m1, m2).abs() / f64::from(m2).powi(3);
                m2 += 2;
            }
            row / w1
        })
        .collect();
    rows.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn integral_examples() {
        assert_relative_eq!(triple_sine_integral(1, 1, 1).unwrap(), 4.0 / 3.0, max_relative = 1e-14);
        assert_eq!(triple_sine_integral(2, 1, 1).unwrap(), 0.0);
        assert_relative_eq!(triple_sine_integral(3, 1, 1).unwrap(), -4.0 / 15.0, max_relative = 1e-14);
    }

    #[test]
    fn kernel_examples() {
        assert_eq!(kernel_v(2, 1, 1), 0.0);
        assert_relative_eq!(kernel_v(1, 1, 1), 8.0 / (3.0 * std::f64::consts::PI), max_relative = 1e-15);
        assert_eq!(kernel_v(5, 2, 4), kernel_v(5, 4, 2));
    }

    #[test]
    fn printed_form_differs_by_fixed_factor() {
        for m in 1..12 {
            for m1 in 1..12 {
                for m2 in 1..12 {
                    if parity_odd(m, m1, m2) {
                        assert_relative_eq!(
                            kernel_v(m, m1, m2),
                            -2.0 * printed_closed_form(m, m1, m2),
                            max_relative = 1e-13
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn nonlinearity_examples() {
        assert_eq!(nonlinearity_coefficient(0.7, 0.0, 1.3, 1, 1), 0.7);
        let w: f64 = 1.05;
        assert_relative_eq!(nonlinearity_coefficient(1.0, 0.5, w, 1, -1), 1.0 + 0.5 * w * w);
        assert_relative_eq!(nonlinearity_coefficient(1.0, 0.5, w, 1, 1), 1.0 - 0.5 * w * w);
    }

    #[test]
    fn table_matches_direct() {
        let t = KernelTable::new(9);
        assert_eq!(t.get(3, 1, 1), kernel_v(3, 1, 1));
        assert_eq!(t.get(9, 8, 3), 0.0);
    }
}
