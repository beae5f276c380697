//! Frequencies, divisors, propagators and the dyadic partition of unity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::params::ModelParams;

/// Temporal Fourier index `n` and spatial sine index `m >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mode {
    pub n: i32,
    pub m: u32,
}

impl Mode {
    pub const fn new(n: i32, m: u32) -> Self {
        Mode { n, m }
    }

    /// The two modes `(+-1, 1)` carrying the free amplitude.
    pub fn is_amplitude(self) -> bool {
        self.m == 1 && self.n.abs() == 1
    }

    pub fn mirrored(self) -> Self {
        Mode { n: -self.n, m: self.m }
    }
}

/// Whether a propagator sits on a line entering an `a` node or a `b` node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LineKind {
    A,
    B,
}

/// `omega_m = sqrt(m^4 + mu)`.
pub fn omega(m: u32, mu: f64) -> f64 {
    omega_sq(m, mu).sqrt()
}

pub(crate) fn omega_sq(m: u32, mu: f64) -> f64 {
    let m2 = f64::from(m) * f64::from(m);
    m2 * m2 + mu
}

/// `Omega = omega_1 + eps` (the `+` detuning branch).
pub fn big_omega(mu: f64, eps: f64) -> f64 {
    omega(1, mu) + eps
}

/// Frequency shifts `nu_{n,m}` supported on the near-resonant set.
///
/// Values are stored odd in `n`, so that the shift `n nu_{n,m}` entering every
/// divisor is even in `n` and the coefficient tables stay real.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NuTable {
    values: BTreeMap<Mode, f64>,
}

impl NuTable {
    pub fn zero() -> Self {
        NuTable::default()
    }

    pub fn get(&self, mode: Mode) -> f64 {
        self.values.get(&mode).copied().unwrap_or(0.0)
    }

    /// Sets `nu_{n,m}` for `n > 0` together with its mirror `nu_{-n,m} = -nu_{n,m}`.
    pub fn set_pair(&mut self, n: i32, m: u32, value: f64) {
        assert!(n > 0, "set_pair expects n > 0");
        if value == 0.0 {
            self.values.remove(&Mode::new(n, m));
            self.values.remove(&Mode::new(-n, m));
        } else {
            self.values.insert(Mode::new(n, m), value);
            self.values.insert(Mode::new(-n, m), -value);
        }
    }

    /// The shift `n nu_{n,m}`.
    pub fn shift(&self, mode: Mode) -> f64 {
        f64::from(mode.n) * self.get(mode)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Mode, f64)> + '_ {
        self.values.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.values().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Largest absolute difference over the union of supports.
    pub fn distance(&self, other: &NuTable) -> f64 {
        let mut d: f64 = 0.0;
        for (k, v) in &self.values {
            d = d.max((v - other.get(*k)).abs());
        }
        for (k, v) in &other.values {
            d = d.max((v - self.get(*k)).abs());
        }
        d
    }

    /// Checks support in the near-resonant set, the size bound and the mirror symmetry.
    pub fn check(&self, params: &ModelParams) -> Result<()> {
        let bound = params.nu_bound * params.eps0;
        for (mode, v) in &self.values {
            if !in_lambda(*mode, params) || mode.n == 0 || mode.is_amplitude() {
                return Err(Error::InconsistentInputs(format!(
                    "nu is nonzero outside the near-resonant set at ({}, {})",
                    mode.n, mode.m
                )));
            }
            if v.abs() >= bound {
                return Err(Error::InconsistentInputs(format!(
                    "|nu({}, {})| = {} exceeds c eps0 = {}",
                    mode.n, mode.m, v.abs(), bound
                )));
            }
            if self.get(mode.mirrored()) != -v {
                return Err(Error::InconsistentInputs(format!(
                    "nu is not odd in n at ({}, {})",
                    mode.n, mode.m
                )));
            }
        }
        Ok(())
    }
}

/// `|omega_1 |n| - m^2| <= 1 + eps0 |n|`.
pub fn in_lambda(mode: Mode, params: &ModelParams) -> bool {
    let n = f64::from(mode.n.abs());
    let m2 = f64::from(mode.m) * f64::from(mode.m);
    (params.omega1() * n - m2).abs() <= 1.0 + params.eps0 * n
}

/// Near-resonant modes with `0 < n <= nmax`, `m <= mmax`, excluding `(1, 1)`.
pub fn lambda_modes(params: &ModelParams, nmax: u32, mmax: u32) -> Vec<Mode> {
    let mut out = Vec::new();
    for n in 1..=nmax as i32 {
        for m in 1..=mmax {
            let mode = Mode::new(n, m);
            if !mode.is_amplitude() && in_lambda(mode, params) {
                out.push(mode);
            }
        }
    }
    out
}

/// Evaluation point `(eps, nu)` together with the model parameters.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    pub params: &'a ModelParams,
    pub eps: f64,
    pub omega: f64,
    pub nu: &'a NuTable,
}

impl<'a> Frame<'a> {
    pub fn new(params: &'a ModelParams, eps: f64, nu: &'a NuTable) -> Self {
        Frame { params, eps, omega: params.frequency(eps), nu }
    }

    /// `omega_m^2 + n nu_{n,m}`.
    pub fn radicand(&self, mode: Mode) -> Result<f64> {
        let r = omega_sq(mode.m, self.params.mu) + self.nu.shift(mode);
        if r > 0.0 {
            Ok(r)
        } else {
            Err(Error::DegenerateRadicand { n: mode.n, m: mode.m })
        }
    }

    /// `sign(n) sqrt(omega_m^2 + n nu_{n,m})`, the localization point of a resonance.
    pub fn omega_bar(&self, mode: Mode) -> Result<f64> {
        let s = if mode.n < 0 { -1.0 } else { 1.0 };
        Ok(s * self.radicand(mode)?.sqrt())
    }

    /// `x_{n,m} = |Omega n| - sqrt(omega_m^2 + n nu_{n,m})`.
    pub fn x(&self, mode: Mode) -> Result<f64> {
        if self.params.extended_precision {
            return self.x_extended(mode);
        }
        let r = self.radicand(mode)?;
        Ok((self.omega * f64::from(mode.n)).abs() - r.sqrt())
    }

    /// Divisor with `Omega n` replaced by `Omega n0 + shift`, used on resonance paths.
    pub fn x_shifted(&self, mode: Mode, n0: i32, shift: f64) -> Result<f64> {
        let r = self.radicand(mode)?;
        Ok((self.omega * f64::from(n0) + shift).abs() - r.sqrt())
    }

    fn x_extended(&self, mode: Mode) -> Result<f64> {
        let r = self.radicand(mode)?;
        let w1 = TwoFloat::from(1.0 + self.params.mu).sqrt();
        let omega = w1 + TwoFloat::from(self.params.detuning.sign() * self.eps);
        let lhs = omega * TwoFloat::from(f64::from(mode.n.abs()));
        let m2 = f64::from(mode.m) * f64::from(mode.m);
        let rad = TwoFloat::from(m2 * m2) + TwoFloat::from(self.params.mu)
            + TwoFloat::from(self.nu.shift(mode));
        debug_assert!(rad.hi() > 0.0 && (rad.hi() - r).abs() <= 1e-12 * r);
        Ok(f64::from(lhs - rad.sqrt()))
    }

    /// `-Omega^2 n^2 + omega_m^2 + n nu_{n,m}`.
    pub fn denominator(&self, mode: Mode) -> Result<f64> {
        let on = self.omega * f64::from(mode.n);
        Ok(self.radicand(mode)? - on * on)
    }

    /// Denominator with `Omega n` replaced by `Omega n0 + shift`.
    pub fn denominator_shifted(&self, mode: Mode, n0: i32, shift: f64) -> Result<f64> {
        let on = self.omega * f64::from(n0) + shift;
        Ok(self.radicand(mode)? - on * on)
    }

    /// Unscaled propagator `g_{n,m}`; exactly 1 on the amplitude modes.
    pub fn g(&self, mode: Mode) -> Result<f64> {
        if mode.is_amplitude() {
            return Ok(1.0);
        }
        let d = self.denominator(mode)?;
        if d == 0.0 {
            return Err(Error::ResonantDivisor { n: mode.n, m: mode.m });
        }
        Ok(1.0 / d)
    }
}

/// Divisor `x_{n,m}(eps, nu)`.
pub fn x_divisor(mode: Mode, params: &ModelParams, eps: f64, nu: &NuTable) -> Result<f64> {
    Frame::new(params, eps, nu).x(mode)
}

/// Propagator `g_{n,m}(eps, nu)`.
pub fn propagator(mode: Mode, params: &ModelParams, eps: f64, nu: &NuTable) -> Result<f64> {
    Frame::new(params, eps, nu).g(mode)
}

fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        1.0 / (1.0 + (1.0 / t - 1.0 / (1.0 - t)).exp())
    }
}

/// Base cutoff: non-increasing in `|x|`, equal to 1 for `|x| <= gamma` and 0 for `|x| >= 2 gamma`.
pub fn chi(x: f64, gamma: f64) -> f64 {
    1.0 - smooth_step((x.abs() - gamma) / gamma)
}

/// Complementary step `1 - chi`: 0 for `|x| <= gamma`, 1 for `|x| >= 2 gamma`.
pub fn step_up(x: f64, gamma: f64) -> f64 {
    smooth_step((x.abs() - gamma) / gamma)
}

/// Partition element `chi_h`: `chi_{-1} = 1 - chi`, `chi_h(x) = chi(2^h x) - chi(2^{h+1} x)`.
pub fn chi_h(x: f64, h: i32, gamma: f64) -> f64 {
    assert!(h >= -1, "scale labels start at -1");
    if h == -1 {
        step_up(x, gamma)
    } else {
        let s = 2f64.powi(h);
        chi(s * x, gamma) - chi(2.0 * s * x, gamma)
    }
}

/// Scales `h` in `[-1, hmax]` with `chi_h(x) != 0` (at most two, consecutive).
pub fn scales_of(x: f64, gamma: f64, hmax: i32) -> Vec<i32> {
    let ax = x.abs();
    let mut out = Vec::with_capacity(2);
    if ax > gamma {
        out.push(-1);
    }
    if ax < 2.0 * gamma && ax > 0.0 {
        let center = (gamma / ax).log2().floor() as i32;
        for h in (center - 1).max(0)..=(center + 1) {
            if h <= hmax && chi_h(x, h, gamma) != 0.0 {
                out.push(h);
            }
        }
    }
    out
}

/// Scales of a divisor, failing when it falls below the smallest admissible scale.
pub fn scales_checked(mode: Mode, x: f64, params: &ModelParams) -> Result<Vec<i32>> {
    let s = scales_of(x, params.gamma, params.hmax);
    let covered: f64 = s.iter().map(|&h| chi_h(x, h, params.gamma)).sum();
    if s.is_empty() || (covered - 1.0).abs() > 1e-9 {
        return Err(Error::ScaleOverflow { n: mode.n, m: mode.m });
    }
    Ok(s)
}

/// Scaled propagator `chi_h(x) g` (a-line) or `n chi_h(x) g` (b-line).
///
/// On the amplitude modes the value is 1 for an a-line and `n` for a b-line.
pub fn scaled_propagator(
    mode: Mode,
    h: i32,
    params: &ModelParams,
    eps: f64,
    nu: &NuTable,
    kind: LineKind,
) -> Result<f64> {
    let frame = Frame::new(params, eps, nu);
    let factor = match kind {
        LineKind::A => 1.0,
        LineKind::B => f64::from(mode.n),
    };
    if mode.is_amplitude() {
        return Ok(factor);
    }
    let x = frame.x(mode)?;
    let c = chi_h(x, h, params.gamma);
    if c == 0.0 {
        return Ok(0.0);
    }
    Ok(factor * c * frame.g(mode)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(mu: f64, eps0: f64) -> ModelParams {
        ModelParams { mu, eps0, detuning: crate::Detuning::Plus, ..Default::default() }
    }

    #[test]
    fn omega_values() {
        assert_eq!(omega(2, 0.0), 4.0);
        assert_relative_eq!(omega(1, 0.125), 1.125f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(omega(3, 0.05), 81.05f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(big_omega(0.125, 0.001), 1.125f64.sqrt() + 0.001, max_relative = 1e-15);
        assert_relative_eq!(big_omega(0.0, 0.01), 1.01, max_relative = 1e-15);
    }

    #[test]
    fn divisor_examples() {
        let nu = NuTable::zero();
        let p0 = params(0.0, 0.01);
        assert_eq!(x_divisor(Mode::new(4, 2), &p0, 0.0, &nu).unwrap(), 0.0);
        assert_eq!(x_divisor(Mode::new(1, 2), &p0, 0.0, &nu).unwrap(), -3.0);
        let p = params(0.1, 0.05);
        let w = 1.1f64.sqrt() + 0.01;
        assert_relative_eq!(
            x_divisor(Mode::new(2, 1), &p, 0.01, &nu).unwrap(),
            2.0 * w - 1.1f64.sqrt(),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            propagator(Mode::new(2, 1), &p, 0.01, &nu).unwrap(),
            1.0 / (-4.0 * w * w + 1.1),
            max_relative = 1e-13
        );
    }

    #[test]
    fn propagator_examples() {
        let nu = NuTable::zero();
        let p = params(0.0, 0.01);
        assert_eq!(propagator(Mode::new(1, 1), &p, 0.003, &nu).unwrap(), 1.0);
        assert_eq!(propagator(Mode::new(-1, 1), &p, 0.003, &nu).unwrap(), 1.0);
        assert_relative_eq!(propagator(Mode::new(0, 3), &p, 0.003, &nu).unwrap(), 1.0 / 81.0);
    }

    #[test]
    fn scaled_propagator_examples() {
        let nu = NuTable::zero();
        let p = params(0.0, 0.01);
        // |x_{0,3}| = 9 lies in the large-divisor scale.
        let g = scaled_propagator(Mode::new(0, 3), -1, &p, 0.0, &nu, LineKind::A).unwrap();
        assert_relative_eq!(g, 1.0 / 81.0);
        assert_eq!(scaled_propagator(Mode::new(0, 3), 0, &p, 0.0, &nu, LineKind::A).unwrap(), 0.0);
        let pa = params(0.1, 0.05);
        let mode = Mode::new(3, 3);
        let a = scaled_propagator(mode, -1, &pa, 0.02, &nu, LineKind::A).unwrap();
        let b = scaled_propagator(mode, -1, &pa, 0.02, &nu, LineKind::B).unwrap();
        assert_relative_eq!(b, 3.0 * a, max_relative = 1e-15);
        assert_eq!(scaled_propagator(Mode::new(-1, 1), -1, &pa, 0.02, &nu, LineKind::B).unwrap(), -1.0);
    }

    #[test]
    fn chi_examples() {
        let gamma = 1.0 / 64.0;
        assert_eq!(chi_h(0.5 * gamma, -1, gamma), 0.0);
        assert_eq!(chi(0.5 * gamma, gamma), 1.0);
        assert_eq!(chi_h(3.0 * gamma, 2, gamma), 0.0);
        assert_eq!(chi_h(3.0 * gamma, -1, gamma), 1.0);
    }

    #[test]
    fn chi_derivative_bound() {
        let gamma = 1.0 / 64.0;
        let n = 20_000;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let x = gamma + gamma * (i as f64) / (n as f64);
            let d = (chi(x + 1e-9, gamma) - chi(x, gamma)) / 1e-9;
            worst = worst.max(d.abs() * gamma);
        }
        assert!(worst <= 4.0, "gamma |chi'| reaches {worst}");
    }

    #[test]
    fn lambda_examples() {
        let p0 = params(0.0, 0.01);
        for m in 1..6u32 {
            assert!(in_lambda(Mode::new((m * m) as i32, m), &p0));
        }
        assert!(!in_lambda(Mode::new(1, 5), &p0));
        let p = params(0.1, 0.05);
        assert!(in_lambda(Mode::new(9, 3), &p));
    }

    #[test]
    fn extended_precision_agrees() {
        let nu = NuTable::zero();
        let p = params(0.1, 0.05);
        let pe = ModelParams { extended_precision: true, ..p.clone() };
        for &(n, m) in &[(9, 3), (400, 20), (2, 1), (-7, 5)] {
            let a = x_divisor(Mode::new(n, m), &p, 0.0123, &nu).unwrap();
            let b = x_divisor(Mode::new(n, m), &pe, 0.0123, &nu).unwrap();
            assert!((a - b).abs() <= 1e-12 * (1.0 + f64::from(m * m)), "{n} {m}: {a} vs {b}");
        }
    }

    #[test]
    fn nu_table_symmetry() {
        let p = params(0.1, 0.05);
        let mut nu = NuTable::zero();
        nu.set_pair(9, 3, 1e-3);
        assert_eq!(nu.get(Mode::new(-9, 3)), -1e-3);
        assert_eq!(nu.shift(Mode::new(9, 3)), nu.shift(Mode::new(-9, 3)));
        nu.check(&p).unwrap();
        nu.set_pair(1, 5, 1e-3);
        assert!(nu.check(&p).is_err());
    }
}
