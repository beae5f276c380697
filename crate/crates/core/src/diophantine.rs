//! Diophantine conditions on the mass and on the amplitude, with measure estimates.
//!
//! Every condition has the form `|f| >= c gamma |n|^-tau` for a family of
//! instances. Margins are stored as the ratio `|f| |n|^tau / (c gamma)`, so a
//! condition holds when its smallest ratio is at least 1.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::{ModelParams, MU_MAX};
use crate::series::solve_nu;
use crate::spectrum::{in_lambda, omega, Frame, Mode, NuTable};

/// Multiplier of `gamma` in the mass conditions.
pub const MASS_MULTIPLIER: f64 = 1.0;
/// Multiplier of `gamma` in the Melnikov conditions.
pub const MELNIKOV_MULTIPLIER: f64 = 1.0;
/// Multiplier of `gamma` in the integer-square condition on the amplitude.
pub const SQUARE_MULTIPLIER: f64 = 4.0;
/// Multiplier of `gamma` in the shifted Melnikov conditions on the amplitude.
pub const CANTOR_MULTIPLIER: f64 = 2.0;

/// The instance attaining the smallest margin of a condition family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Instance {
    pub n: i32,
    pub m: u32,
    /// Second mode (`0` when the condition involves one mode only).
    pub n2: i32,
    pub m2: u32,
    pub ratio: f64,
}

/// Smallest margin ratio of a condition family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionMargin {
    pub ratio: f64,
    pub worst: Option<Instance>,
}

impl ConditionMargin {
    fn new() -> Self {
        ConditionMargin { ratio: f64::INFINITY, worst: None }
    }

    fn record(&mut self, ratio: f64, n: i32, m: u32, n2: i32, m2: u32) {
        if ratio < self.ratio {
            self.ratio = ratio;
            self.worst = Some(Instance { n, m, n2, m2, ratio });
        }
    }

    /// Smaller margin; ties go to the smaller instance so parallel reductions are deterministic.
    fn merge(self, other: ConditionMargin) -> Self {
        let key = |c: &ConditionMargin| c.worst.map(|w| (w.n, w.m, w.n2, w.m2));
        match other.ratio.total_cmp(&self.ratio) {
            std::cmp::Ordering::Less => other,
            std::cmp::Ordering::Equal if key(&other) < key(&self) => other,
            _ => self,
        }
    }

    pub fn holds(&self) -> bool {
        self.ratio >= 1.0
    }

    pub fn holds_strictly(&self) -> bool {
        self.ratio > 1.0
    }
}

/// Spatial cutoff that covers every near-failure of the three-frequency mass
/// condition up to `nmax`: `m1 + m2 <= omega_1 n + 1` forces `m <= (omega_1 n + 1) / 2 + 1`.
pub fn auto_mass_mmax(nmax: u32) -> u32 {
    let w = (1.0 + MU_MAX).sqrt();
    ((w * f64::from(nmax) + 1.0) / 2.0).ceil() as u32 + 2
}

/// Indices `m` in `[2, mmax]` whose `omega_m` can lie near `target`.
fn near_square_root(target: f64, mmax: u32) -> impl Iterator<Item = u32> {
    let c = if target > 0.0 { target.sqrt().floor() as i64 } else { 0 };
    let lo = (c - 1).max(2) as u32;
    let hi = ((c + 2).max(0) as u32).min(mmax);
    lo..=hi
}

/// Smallest ratio over `|omega_1 n +- omega_m| >= gamma n^-tau0` and
/// `|omega_1 n +- omega_m +- omega_m'| >= gamma n^-tau0`, `0 < n <= nmax`, `2 <= m, m' <= mmax`.
///
/// `mmax = 0` selects [`auto_mass_mmax`].
pub fn mass_margin(mu: f64, gamma: f64, tau0: f64, nmax: u32, mmax: u32) -> ConditionMargin {
    let mmax = if mmax == 0 { auto_mass_mmax(nmax) } else { mmax };
    let w1 = omega(1, mu);
    let omegas: Vec<f64> = (0..=mmax).map(|m| omega(m, mu)).collect();
    (1..=nmax)
        .into_par_iter()
        .map(|n| {
            let mut margin = ConditionMargin::new();
            let wn = w1 * f64::from(n);
            let scale = f64::from(n).powf(tau0) / (MASS_MULTIPLIER * gamma);
            for m in near_square_root(wn, mmax) {
                margin.record((wn - omegas[m as usize]).abs() * scale, n as i32, m, 0, 0);
            }
            for m in 2..=mmax {
                let wm = omegas[m as usize];
                for t in [wn - wm, wn + wm] {
                    for m2 in near_square_root(t.abs(), mmax) {
                        margin.record((t.abs() - omegas[m2 as usize]).abs() * scale, n as i32, m, 0, m2);
                    }
                }
            }
            margin
        })
        .reduce(ConditionMargin::new, ConditionMargin::merge)
}

pub fn check_mass(mu: f64, gamma: f64, tau0: f64, nmax: u32, mmax: u32) -> bool {
    mass_margin(mu, gamma, tau0, nmax, mmax).holds()
}

/// Union length of closed intervals.
fn union_length(mut intervals: Vec<(f64, f64)>) -> (f64, Vec<(f64, f64)>) {
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (a, b) in intervals {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    (merged.iter().map(|(a, b)| b - a).sum(), merged)
}

/// Fraction of the midpoints `lo + (i + 1/2) (hi - lo) / grid` inside the union.
fn grid_fraction(merged: &[(f64, f64)], lo: f64, hi: f64, grid: usize) -> f64 {
    let mut hits = 0usize;
    for i in 0..grid {
        let x = lo + (i as f64 + 0.5) * (hi - lo) / grid as f64;
        let idx = merged.partition_point(|iv| iv.1 < x);
        if idx < merged.len() && merged[idx].0 <= x {
            hits += 1;
        }
    }
    hits as f64 / grid as f64
}

/// `{x in [lo, hi] : |f(x)| < thr}` for `f` increasing on `[lo, hi]`.
fn increasing_exclusion(f: impl Fn(f64) -> f64, thr: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    let (flo, fhi) = (f(lo), f(hi));
    if flo >= thr || fhi <= -thr {
        return None;
    }
    let solve = |level: f64| {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..80 {
            let mid = 0.5 * (a + b);
            if f(mid) < level {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    };
    let start = if flo > -thr { lo } else { solve(-thr) };
    let end = if fhi < thr { hi } else { solve(thr) };
    Some((start, end))
}

/// Estimated measure of `[0, 1/8] \ M(gamma)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassMeasure {
    pub gamma: f64,
    pub tau0: f64,
    pub nmax: u32,
    pub mmax: u32,
    pub grid: usize,
    /// Length of the union of the exclusion intervals within the cutoffs.
    pub interval_measure: f64,
    /// Grid rejection estimate: excluded grid fraction times `1/8`.
    pub grid_measure: f64,
    /// Bound on the contribution of `n > nmax`.
    pub tail_bound: f64,
    pub intervals: usize,
}

/// Bound on the mass-set exclusions from `n > nmax`: at most `2 + 4 (0.54 n + 2)`
/// instances per `n`, each excluding at most `2 gamma n^-tau0 / (0.4 n)` since
/// every margin function grows at rate `>= 0.4 n` in `mu`.
pub fn mass_tail_bound(gamma: f64, tau0: f64, nmax: u32) -> f64 {
    let term = |n: f64| (2.0 + 4.0 * (0.54 * n + 2.0)) * 2.0 * MASS_MULTIPLIER * gamma * n.powf(-tau0) / (0.4 * n);
    let start = u64::from(nmax) + 1;
    let stop = start + 1_000_000;
    let mut s = 0.0;
    for n in start..stop {
        s += term(n as f64);
    }
    // Remainder: the terms decay like n^-tau0, bounded by the integral.
    let n = stop as f64;
    s + term(n) * n / (tau0 - 1.0)
}

pub fn measure_mass_complement(gamma: f64, tau0: f64, grid: usize, nmax: u32) -> Result<MassMeasure> {
    if grid < 1000 {
        return Err(Error::InvalidParams("the mass grid needs at least 1000 points".into()));
    }
    let mmax = auto_mass_mmax(nmax);
    let intervals: Vec<(f64, f64)> = (1..=nmax)
        .into_par_iter()
        .flat_map_iter(|n| {
            let nf = f64::from(n);
            let thr = MASS_MULTIPLIER * gamma * nf.powf(-tau0);
            let mut out = Vec::new();
            let push = |out: &mut Vec<(f64, f64)>, f: &dyn Fn(f64) -> f64| {
                if let Some(iv) = increasing_exclusion(f, thr, 0.0, MU_MAX) {
                    out.push(iv);
                }
            };
            let mut ms: Vec<u32> = near_square_root(nf, mmax).collect();
            ms.extend(near_square_root(nf * omega(1, MU_MAX), mmax));
            ms.sort_unstable();
            ms.dedup();
            for &m in &ms {
                push(&mut out, &|mu: f64| omega(1, mu) * nf - omega(m, mu));
            }
            for m in 2..=mmax {
                let mut cands: Vec<(u32, f64, f64)> = Vec::new();
                for (s1, s2) in [(-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
                    for mu in [0.0, MU_MAX] {
                        let t = (omega(1, mu) * nf + s1 * omega(m, mu)).abs();
                        for m2 in near_square_root(t, mmax) {
                            cands.push((m2, s1, s2));
                        }
                    }
                }
                cands.sort_by_key(|c| (c.0, c.1 as i32, c.2 as i32));
                cands.dedup();
                for (m2, s1, s2) in cands {
                    push(&mut out, &|mu: f64| {
                        omega(1, mu) * nf + s1 * omega(m, mu) + s2 * omega(m2, mu)
                    });
                }
            }
            out
        })
        .collect();
    let count = intervals.len();
    let (measure, merged) = union_length(intervals);
    let fraction = grid_fraction(&merged, 0.0, MU_MAX, grid);
    Ok(MassMeasure {
        gamma,
        tau0,
        nmax,
        mmax,
        grid,
        interval_measure: measure,
        grid_measure: fraction * MU_MAX,
        tail_bound: mass_tail_bound(gamma, tau0, nmax),
        intervals: count,
    })
}

/// Near-resonant modes with `0 < n <= nmax`, `2 <= m <= mmax`, with `sqrt(omega_m^2 + n nu)`.
fn lambda_roots(frame: &Frame, nmax: u32, mmax: u32) -> Result<Vec<(Mode, f64)>> {
    let mut out = Vec::new();
    for n in 1..=nmax as i32 {
        let w = frame.params.omega1() * f64::from(n);
        let c = w.sqrt();
        let lo = (c - (1.0 + frame.params.eps0 * f64::from(n)).sqrt() - 2.0).floor().max(1.0) as u32;
        let hi = ((w + 1.0 + frame.params.eps0 * f64::from(n)).sqrt().ceil() as u32 + 1).min(mmax);
        for m in lo..=hi {
            let mode = Mode::new(n, m);
            if m >= 2 && in_lambda(mode, frame.params) {
                out.push((mode, frame.radicand(mode)?.sqrt()));
            }
        }
    }
    Ok(out)
}

/// `|Omega n - sqrt(omega_m^2 + n nu)| >= c gamma n^-tau` for `0 < n <= nmax`, `2 <= m <= mmax`.
/// The `+` sign and negative `n` give the same or larger values.
fn single_margin(frame: &Frame, c: f64, tau: f64, nmax: u32, mmax: u32) -> Result<ConditionMargin> {
    let gamma = frame.params.gamma;
    let parts: Vec<ConditionMargin> = (1..=nmax as i32)
        .into_par_iter()
        .map(|n| {
            let mut margin = ConditionMargin::new();
            let wn = frame.omega * f64::from(n);
            let scale = f64::from(n).powf(tau) / (c * gamma);
            for m in near_square_root(wn.abs(), mmax) {
                let r = frame.radicand(Mode::new(n, m))?.sqrt();
                margin.record((wn - r).abs() * scale, n, m, 0, 0);
            }
            Ok(margin)
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().fold(ConditionMargin::new(), ConditionMargin::merge))
}

/// Two-frequency condition over pairs of near-resonant modes with `m1 != m2`, `n1 != n2`:
/// `|Omega (n2 - n1) +- R1 +- R2| >= c gamma |n2 - n1|^-tau`.
fn pair_margin(frame: &Frame, c: f64, tau: f64, nmax: u32, mmax: u32) -> Result<ConditionMargin> {
    let gamma = frame.params.gamma;
    let modes = lambda_roots(frame, nmax, mmax)?;
    let parts: Vec<ConditionMargin> = (0..modes.len())
        .into_par_iter()
        .map(|i| {
            let (a, r1) = modes[i];
            let mut margin = ConditionMargin::new();
            for (j, &(b, r2)) in modes.iter().enumerate() {
                if b.m == a.m {
                    continue;
                }
                // Mirror symmetry (n1, n2) -> (-n1, -n2) leaves the condition invariant.
                for n2 in [b.n, -b.n] {
                    if n2 == a.n || (n2 > 0 && j <= i) {
                        continue;
                    }
                    let dn = n2 - a.n;
                    let base = frame.omega * f64::from(dn);
                    let scale = f64::from(dn.abs()).powf(tau) / (c * gamma);
                    let v = (base + r1 + r2).abs().min((base + r1 - r2).abs()).min((base - r1 + r2).abs()).min((base - r1 - r2).abs());
                    margin.record(v * scale, a.n, a.m, n2, b.m);
                }
            }
            margin
        })
        .collect();
    Ok(parts.into_iter().fold(ConditionMargin::new(), ConditionMargin::merge))
}

/// First and second Melnikov margins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MelnikovMargins {
    pub first: ConditionMargin,
    pub second: ConditionMargin,
}

impl MelnikovMargins {
    pub fn holds(&self) -> bool {
        self.first.holds() && self.second.holds()
    }
}

pub fn melnikov_margins(frame: &Frame, nmax: u32, mmax: u32) -> Result<MelnikovMargins> {
    let tau = frame.params.tau;
    Ok(MelnikovMargins {
        first: single_margin(frame, MELNIKOV_MULTIPLIER, tau, nmax, mmax)?,
        second: pair_margin(frame, MELNIKOV_MULTIPLIER, tau, nmax, mmax)?,
    })
}

/// Melnikov conditions at `(eps, nu)` with `gamma`, `tau` from the parameters.
pub fn check_melnikov(params: &ModelParams, eps: f64, nu: &NuTable, nmax: u32, mmax: u32) -> Result<bool> {
    Ok(melnikov_margins(&Frame::new(params, eps, nu), nmax, mmax)?.holds())
}

/// Margins of the conditions defining the accepted amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CantorMargins {
    /// `|Omega n - m^2| > 4 gamma n^-tau0`, `m >= 2`.
    pub square: ConditionMargin,
    /// Shifted first Melnikov condition with `2 gamma`.
    pub first: ConditionMargin,
    /// Shifted second Melnikov condition with `2 gamma`.
    pub second: ConditionMargin,
}

impl CantorMargins {
    pub fn holds(&self) -> bool {
        self.square.holds_strictly() && self.first.holds() && self.second.holds()
    }
}

fn square_margin(frame: &Frame, nmax: u32, mmax: u32) -> ConditionMargin {
    let p = frame.params;
    let mut margin = ConditionMargin::new();
    for n in 1..=nmax as i32 {
        let wn = frame.omega * f64::from(n);
        let scale = f64::from(n).powf(p.tau0) / (SQUARE_MULTIPLIER * p.gamma);
        for m in near_square_root(wn, mmax) {
            margin.record((wn - f64::from(m * m)).abs() * scale, n, m, 0, 0);
        }
    }
    margin
}

pub fn cantor_margins(frame: &Frame, nmax: u32, mmax: u32) -> Result<CantorMargins> {
    let tau = frame.params.tau;
    Ok(CantorMargins {
        square: square_margin(frame, nmax, mmax),
        first: single_margin(frame, CANTOR_MULTIPLIER, tau, nmax, mmax)?,
        second: pair_margin(frame, CANTOR_MULTIPLIER, tau, nmax, mmax)?,
    })
}

/// Conditions on an amplitude `eps` with the shifts `nu(eps)`.
pub fn check_cantor(params: &ModelParams, eps: f64, nu: &NuTable, nmax: u32, mmax: u32) -> Result<bool> {
    Ok(cantor_margins(&Frame::new(params, eps, nu), nmax, mmax)?.holds())
}

/// Piecewise-linear interpolation of shift tables between amplitude nodes.
#[derive(Debug, Clone)]
pub struct NuPath {
    nodes: Vec<(f64, NuTable)>,
}

impl NuPath {
    /// Nodes must be sorted by amplitude.
    pub fn new(nodes: Vec<(f64, NuTable)>) -> Self {
        NuPath { nodes }
    }

    pub fn constant(nu: NuTable) -> Self {
        NuPath { nodes: vec![(0.0, nu)] }
    }

    pub fn at(&self, eps: f64) -> NuTable {
        let n = self.nodes.len();
        if n == 1 || eps <= self.nodes[0].0 {
            return self.nodes[0].1.clone();
        }
        if eps >= self.nodes[n - 1].0 {
            return self.nodes[n - 1].1.clone();
        }
        let i = self.nodes.partition_point(|(e, _)| *e <= eps) - 1;
        let (e0, t0) = &self.nodes[i];
        let (e1, t1) = &self.nodes[i + 1];
        let w = (eps - e0) / (e1 - e0);
        let mut out = NuTable::zero();
        for (mode, _) in t0.iter().chain(t1.iter()) {
            if mode.n > 0 {
                out.set_pair(mode.n, mode.m, (1.0 - w) * t0.get(mode) + w * t1.get(mode));
            }
        }
        out
    }
}

/// Shifts `nu(eps)` from the counterterm fixed point at `nodes` amplitudes
/// spread over `(0, eps0)`; failed solves are returned apart.
pub fn solve_nu_path(params: &ModelParams, nodes: usize, kmax: usize) -> Result<(NuPath, Vec<f64>)> {
    let eps: Vec<f64> = (0..nodes).map(|i| params.eps0 * (i as f64 + 0.5) / nodes as f64).collect();
    let solved: Vec<(f64, Result<NuTable>)> =
        eps.iter().map(|&e| (e, solve_nu(params, e, kmax).map(|s| s.nu))).collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (e, r) in solved {
        match r {
            Ok(nu) => ok.push((e, nu)),
            Err(Error::NoConvergence { .. }) => failures.push(e),
            Err(err) => return Err(err),
        }
    }
    if ok.is_empty() {
        return Err(Error::NoConvergence { what: "counterterm fixed point on every node", iterations: nodes, last_update: f64::NAN });
    }
    Ok((NuPath::new(ok), failures))
}

/// Excluded fraction of an amplitude window `(0, eps0)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CantorMeasure {
    pub eps0: f64,
    pub grid: usize,
    /// Relative measure of the union of exclusion intervals.
    pub interval_fraction: f64,
    /// Fraction of rejected grid points.
    pub grid_fraction: f64,
    /// Amplitudes where the shift solver failed (excluded, reported apart).
    pub solver_failures: Vec<f64>,
    pub intervals: usize,
}

/// One family member as a function of the amplitude.
type Margin<'a> = Box<dyn Fn(&Frame) -> Result<f64> + Send + Sync + 'a>;

/// Exclusion intervals of one margin function `g` (`|g| < thr` excluded),
/// linearized on the cells `cells`.
fn cell_exclusions(values: &[f64], cells: &[f64], thr: f64, out: &mut Vec<(f64, f64)>) {
    for i in 0..cells.len() - 1 {
        let (a, b) = (cells[i], cells[i + 1]);
        let (fa, fb) = (values[i], values[i + 1]);
        if (fa >= thr && fb >= thr) || (fa <= -thr && fb <= -thr) {
            continue;
        }
        if fa == fb {
            out.push((a, b));
            continue;
        }
        let at = |level: f64| a + (level - fa) / (fb - fa) * (b - a);
        let (lo_level, hi_level) = if fa < fb { (-thr, thr) } else { (thr, -thr) };
        let start = if fa.abs() < thr { a } else { at(lo_level) };
        let end = if fb.abs() < thr { b } else { at(hi_level) };
        out.push((start.clamp(a, b), end.clamp(a, b)));
    }
}

/// Excluded fraction of `(0, eps0)` for the amplitude conditions with the
/// shifts interpolated along `path`.
///
/// Every condition instance that can come within reach of its threshold is
/// followed on `cells` subintervals and linearized there; the grid estimate
/// evaluates all conditions at `grid` midpoints.
pub fn measure_cantor(
    params: &ModelParams,
    path: &NuPath,
    grid: usize,
    cells: usize,
    nmax: u32,
    mmax: u32,
    solver_failures: Vec<f64>,
) -> Result<CantorMeasure> {
    let eps0 = params.eps0;
    let nodes: Vec<f64> = (0..=cells).map(|i| eps0 * i as f64 / cells as f64).collect();
    let tables: Vec<NuTable> = nodes.iter().map(|&e| path.at(e)).collect();
    let frames: Vec<Frame> = nodes.iter().zip(&tables).map(|(&e, nu)| Frame::new(params, e, nu)).collect();
    let gamma = params.gamma;

    let mut members: Vec<(Margin, f64)> = Vec::new();
    // Reach of every family over the window: Omega moves by at most eps0, the shifts by c eps0.
    let slack = |dn: f64| eps0 * dn.abs() + 2.0 * params.nu_bound * eps0 + 1e-12;
    let w_hi = params.omega1() + eps0;
    for n in 1..=nmax as i32 {
        let nf = f64::from(n);
        let mut ms: Vec<u32> = near_square_root((params.omega1() - eps0).max(0.0) * nf, mmax).collect();
        ms.extend(near_square_root(w_hi * nf, mmax));
        ms.sort_unstable();
        ms.dedup();
        for &m in &ms {
            let mode = Mode::new(n, m);
            let mid = frames[cells / 2].omega * nf;
            if (mid - f64::from(m * m)).abs() <= slack(nf) + 4.0 * gamma {
                let thr = SQUARE_MULTIPLIER * gamma * nf.powf(-params.tau0);
                members.push((Box::new(move |f: &Frame| Ok(f.omega * nf - f64::from(m * m))), thr));
            }
            let r = frames[cells / 2].radicand(mode)?.sqrt();
            if (mid - r).abs() <= slack(nf) + 4.0 * gamma {
                let thr = CANTOR_MULTIPLIER * gamma * nf.powf(-params.tau);
                members.push((Box::new(move |f: &Frame| Ok(f.omega * nf - f.radicand(mode)?.sqrt())), thr));
            }
        }
    }
    let modes = lambda_roots(&frames[cells / 2], nmax, mmax)?;
    for (i, &(a, r1)) in modes.iter().enumerate() {
        for (j, &(b, r2)) in modes.iter().enumerate() {
            if b.m == a.m {
                continue;
            }
            for n2 in [b.n, -b.n] {
                if n2 == a.n || (n2 > 0 && j <= i) {
                    continue;
                }
                let dn = n2 - a.n;
                let base = frames[cells / 2].omega * f64::from(dn);
                for (s1, s2) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    if (base + s1 * r1 + s2 * r2).abs() > slack(f64::from(dn)) + 4.0 * gamma {
                        continue;
                    }
                    let thr = CANTOR_MULTIPLIER * gamma * f64::from(dn.abs()).powf(-params.tau);
                    members.push((
                        Box::new(move |f: &Frame| {
                            Ok(f.omega * f64::from(dn) + s1 * f.radicand(a)?.sqrt() + s2 * f.radicand(b)?.sqrt())
                        }),
                        thr,
                    ));
                }
            }
        }
    }

    let intervals: Vec<Vec<(f64, f64)>> = members
        .par_iter()
        .map(|(g, thr)| {
            let values: Vec<f64> = frames.iter().map(g).collect::<Result<_>>()?;
            let mut out = Vec::new();
            cell_exclusions(&values, &nodes, *thr, &mut out);
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let intervals: Vec<(f64, f64)> = intervals.into_iter().flatten().collect();
    let count = intervals.len();
    let (measure, _) = union_length(intervals);

    let rejected: usize = (0..grid)
        .into_par_iter()
        .map(|i| {
            let eps = eps0 * (i as f64 + 0.5) / grid as f64;
            let nu = path.at(eps);
            let frame = Frame::new(params, eps, &nu);
            Ok(usize::from(!cantor_margins(&frame, nmax, mmax)?.holds()))
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();

    Ok(CantorMeasure {
        eps0,
        grid,
        interval_fraction: measure / eps0,
        grid_fraction: rejected as f64 / grid as f64,
        solver_failures,
        intervals: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn massless_beam_is_resonant() {
        assert!(!check_mass(0.0, 1.0 / 64.0, 4.0, 50, 0));
        let m = mass_margin(0.0, 1.0 / 64.0, 4.0, 50, 0);
        assert_eq!(m.ratio, 0.0);
    }

    #[test]
    fn mass_conditions_are_nested_in_gamma() {
        for i in 1..40 {
            let mu = 0.125 * f64::from(i) / 40.0;
            if check_mass(mu, 2.0 / 128.0, 4.0, 60, 0) {
                assert!(check_mass(mu, 1.0 / 128.0, 4.0, 60, 0));
            }
        }
    }

    #[test]
    fn grid_and_intervals_agree_on_direct_checks() {
        let gamma = 1.0 / 64.0;
        let nmax = 40;
        let m = measure_mass_complement(gamma, 4.0, 1000, nmax).unwrap();
        assert!(m.interval_measure <= 6.0 * gamma);
        for i in 0..200 {
            let mu = MU_MAX * (f64::from(i) + 0.5) / 200.0;
            let direct = check_mass(mu, gamma, 4.0, nmax, 0);
            let margin = mass_margin(mu, gamma, 4.0, nmax, 0).ratio;
            // Points far from the boundary classify the same way.
            if (margin - 1.0).abs() > 1e-6 {
                assert_eq!(direct, margin >= 1.0);
            }
        }
    }

    #[test]
    fn exact_square_fails_the_amplitude_condition() {
        let p = ModelParams { detuning: crate::Detuning::Minus, ..Default::default() };
        // Omega * 24 = 25.
        let eps = p.omega1() - 25.0 / 24.0;
        let nu = NuTable::zero();
        let m = cantor_margins(&Frame::new(&p, eps, &nu), 100, 64).unwrap();
        assert!(!m.square.holds_strictly());
        assert_eq!(m.square.worst.unwrap().n, 24);
    }

    #[test]
    fn exact_resonance_fails_melnikov() {
        let p = ModelParams { detuning: crate::Detuning::Minus, eps0: 0.06, ..Default::default() };
        let nu = NuTable::zero();
        // Omega * 4 = omega_2.
        let eps = p.omega1() - omega(2, p.mu) / 4.0;
        assert!(!check_melnikov(&p, eps, &nu, 100, 64).unwrap());
        let m = melnikov_margins(&Frame::new(&p, eps, &nu), 100, 64).unwrap();
        let worst = m.first.worst.unwrap();
        assert_eq!((worst.n, worst.m), (4, 2));
    }

    #[test]
    fn path_interpolates_linearly() {
        let mut a = NuTable::zero();
        a.set_pair(3, 2, 0.001);
        let mut b = NuTable::zero();
        b.set_pair(3, 2, 0.003);
        let path = NuPath::new(vec![(0.0, a), (1.0, b)]);
        let mid = path.at(0.5);
        assert!((mid.get(Mode::new(3, 2)) - 0.002).abs() < 1e-15);
        assert!((mid.get(Mode::new(-3, 2)) + 0.002).abs() < 1e-15);
    }
}
