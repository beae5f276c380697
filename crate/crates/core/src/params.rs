use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper end of the admissible mass interval.
pub const MU_MAX: f64 = 0.125;

/// Largest admissible Diophantine constant, `2^-6`.
pub const GAMMA_MAX: f64 = 1.0 / 64.0;

/// Sign of the frequency detuning: `Omega = omega_1 + eps` or `Omega = omega_1 - eps`.
///
/// Which branch carries real small-amplitude solutions depends on the sign of
/// the leading coefficient of the amplitude equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detuning {
    Plus,
    Minus,
}

impl Detuning {
    pub fn sign(self) -> f64 {
        match self {
            Detuning::Plus => 1.0,
            Detuning::Minus => -1.0,
        }
    }
}

/// Physical, arithmetic and truncation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Coefficient of `v^2`.
    pub a: f64,
    /// Coefficient of `v_t^2`.
    pub b: f64,
    /// Mass, in `[0, 1/8]`.
    pub mu: f64,
    /// Upper end of the amplitude window `(0, eps0)`.
    pub eps0: f64,
    /// Diophantine constant, in `(0, 2^-6]`.
    pub gamma: f64,
    /// Exponent of the mass conditions.
    pub tau0: f64,
    /// Exponent of the Melnikov conditions.
    pub tau: f64,
    /// Decay rate in `|n|` used by the decay diagnostics.
    pub sigma: f64,
    /// Series truncation order.
    pub kmax: usize,
    /// Spatial mode cutoff.
    pub mmax: u32,
    /// Temporal mode cutoff for Diophantine scans.
    pub nmax: u32,
    /// Temporal cutoff of the counterterm table (modes with `0 < |n| <= nnu`).
    pub nnu: u32,
    /// Constant `c` in the bound `|nu| < c eps0`.
    pub nu_bound: f64,
    /// Largest scale label; divisors below `2^-hmax gamma` reject the point.
    pub hmax: i32,
    /// Branch of the frequency detuning.
    pub detuning: Detuning,
    /// Evaluate divisors in double-double arithmetic.
    pub extended_precision: bool,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            a: 1.0,
            b: 0.5,
            mu: 0.1,
            eps0: 0.04,
            gamma: GAMMA_MAX,
            tau0: 4.0,
            tau: 10.0,
            sigma: 0.5,
            kmax: 2,
            mmax: 64,
            nmax: 500,
            nnu: 64,
            nu_bound: 1.0,
            hmax: 40,
            detuning: Detuning::Minus,
            extended_precision: false,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.a,
            self.b,
            self.mu,
            self.eps0,
            self.gamma,
            self.tau0,
            self.tau,
            self.sigma,
            self.nu_bound,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("all real parameters must be finite".into()));
        }
        if !(0.0..=MU_MAX).contains(&self.mu) {
            return Err(Error::InvalidParams(format!("mu = {} must lie in [0, 1/8]", self.mu)));
        }
        if !(self.eps0 > 0.0 && self.eps0 < 1.0) {
            return Err(Error::InvalidParams(format!("eps0 = {} must lie in (0, 1)", self.eps0)));
        }
        if !(self.gamma > 0.0 && self.gamma <= GAMMA_MAX) {
            return Err(Error::InvalidParams(format!(
                "gamma = {} must lie in (0, 2^-6]",
                self.gamma
            )));
        }
        if self.tau0 < 4.0 {
            return Err(Error::InvalidParams(format!("tau0 = {} must be >= 4", self.tau0)));
        }
        if self.tau <= self.tau0 + 2.5 {
            return Err(Error::InvalidParams(format!(
                "tau = {} must exceed tau0 + 5/2 = {}",
                self.tau,
                self.tau0 + 2.5
            )));
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidParams("sigma must be positive".into()));
        }
        if self.mmax == 0 || self.nmax == 0 {
            return Err(Error::InvalidParams("mmax and nmax must be positive".into()));
        }
        if self.nu_bound <= 0.0 {
            return Err(Error::InvalidParams("nu_bound must be positive".into()));
        }
        if !(0..=60).contains(&self.hmax) {
            return Err(Error::InvalidParams("hmax must lie in [0, 60]".into()));
        }
        Ok(())
    }

    /// `omega_1 = sqrt(1 + mu)`.
    pub fn omega1(&self) -> f64 {
        (1.0 + self.mu).sqrt()
    }

    /// Forcing frequency on the configured detuning branch.
    pub fn frequency(&self, eps: f64) -> f64 {
        self.omega1() + self.detuning.sign() * eps
    }

    /// `(omega_1^2 - Omega^2) / eps`, the linear coefficient of the amplitude equation.
    pub fn amplitude_detuning(&self, eps: f64) -> f64 {
        let s = self.detuning.sign();
        -s * (2.0 * self.omega1() + s * eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelParams::default().validate().unwrap();
    }

    #[test]
    fn rejects_large_mass() {
        let p = ModelParams { mu: 0.5, ..Default::default() };
        assert!(matches!(p.validate(), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn detuning_matches_frequency() {
        for detuning in [Detuning::Plus, Detuning::Minus] {
            let p = ModelParams { detuning, ..Default::default() };
            let eps = 0.013;
            let w = p.frequency(eps);
            let direct = (p.omega1().powi(2) - w * w) / eps;
            assert!((direct - p.amplitude_detuning(eps)).abs() < 1e-12);
        }
    }
}
