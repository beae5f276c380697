//! Low-discrepancy sampling of amplitudes and frequency shifts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diophantine::check_melnikov;
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::spectrum::{lambda_modes, NuTable};

/// Radical inverse of `index` in `base` (van der Corput sequence).
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut f = inv;
    let mut x = 0.0;
    while index > 0 {
        x += (index % base) as f64 * f;
        index /= base;
        f *= inv;
    }
    inv = x;
    inv
}

/// Point `index` of the two-dimensional Halton sequence (bases 2 and 3).
pub fn halton2(index: u64) -> (f64, f64) {
    (radical_inverse(index, 2), radical_inverse(index, 3))
}

/// Random shifts on the near-resonant modes with `0 < n <= nmax`, `m <= mmax`,
/// uniform in `(-scale c eps0, scale c eps0)` and odd in `n`.
pub fn random_nu(params: &ModelParams, nmax: u32, mmax: u32, scale: f64, rng: &mut impl Rng) -> NuTable {
    let bound = scale * params.nu_bound * params.eps0;
    let mut nu = NuTable::zero();
    for mode in lambda_modes(params, nmax, mmax) {
        if mode.n > 0 {
            nu.set_pair(mode.n, mode.m, rng.gen_range(-bound..bound));
        }
    }
    nu
}

/// Sampling limits for points of the Melnikov set.
#[derive(Debug, Clone, Copy)]
pub struct SampleOptions {
    pub count: usize,
    pub seed: u64,
    /// Modes carrying random shifts (`0` for no shifts).
    pub nu_nmax: u32,
    pub nu_mmax: u32,
    /// Cutoffs of the Melnikov filter.
    pub check_nmax: u32,
    pub check_mmax: u32,
    /// Candidates drawn before giving up.
    pub max_attempts: usize,
}

impl SampleOptions {
    pub fn new(count: usize, seed: u64) -> Self {
        SampleOptions { count, seed, nu_nmax: 0, nu_mmax: 0, check_nmax: 100, check_mmax: 64, max_attempts: 50 * count.max(1) }
    }
}

/// Points `(eps, nu)` with `eps` in `(0, eps0)` and `|nu| < c eps0` that pass
/// the Melnikov conditions. The amplitude and the overall size of the shifts
/// follow a Halton sequence; individual shifts come from a seeded ChaCha stream.
pub fn melnikov_samples(params: &ModelParams, opts: SampleOptions) -> Result<Vec<(f64, NuTable)>> {
    let mut out = Vec::with_capacity(opts.count);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for index in 1..=opts.max_attempts as u64 {
        if out.len() == opts.count {
            break;
        }
        let (u, v) = halton2(index);
        let eps = u * params.eps0;
        let nu = if opts.nu_nmax > 0 {
            random_nu(params, opts.nu_nmax, opts.nu_mmax, v, &mut rng)
        } else {
            NuTable::zero()
        };
        if eps > 0.0 && check_melnikov(params, eps, &nu, opts.check_nmax, opts.check_mmax)? {
            out.push((eps, nu));
        }
    }
    if out.len() < opts.count {
        return Err(Error::Precondition(format!(
            "only {} of {} samples passed the Melnikov conditions",
            out.len(),
            opts.count
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn van_der_corput_base_two() {
        let xs: Vec<f64> = (1..=4).map(|i| radical_inverse(i, 2)).collect();
        assert_eq!(xs, vec![0.5, 0.25, 0.75, 0.125]);
    }

    #[test]
    fn shifts_are_odd_and_bounded() {
        let p = ModelParams { eps0: 0.6, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let nu = random_nu(&p, 4, 9, 1.0, &mut rng);
        assert!(!nu.is_empty());
        for (mode, v) in nu.iter() {
            assert!(v.abs() < p.nu_bound * p.eps0);
            assert_eq!(nu.get(mode.mirrored()), -v);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = ModelParams::default();
        let mut o = SampleOptions::new(5, 3);
        o.nu_nmax = 4;
        o.nu_mmax = 9;
        let a = melnikov_samples(&p, o).unwrap();
        let b = melnikov_samples(&p, o).unwrap();
        assert_eq!(a, b);
    }
}
