//! Lindstedt recursion, amplitude equation, counterterm fixed point and residuals.
//!
//! Coefficients are homogeneous in the amplitude: `u^(k)` has degree `k + 1` in
//! `q` and the counterterm `l^(k)` has degree `k`. Tables are therefore built at
//! unit amplitude and rescaled once `q` is known.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{kernel_v, nonlinearity_coefficient, parity_odd, KernelTable};
use crate::params::ModelParams;
use crate::spectrum::{in_lambda, lambda_modes, omega_sq, Frame, Mode, NuTable};
use crate::trees::{counterterm_table, CountertermOptions};

/// Reality check tolerance (relative to the largest coefficient of the order).
const REALITY_TOLERANCE: f64 = 1e-12;
/// Tail content at the spatial cutoff above which a table is flagged.
pub const TAIL_TOLERANCE: f64 = 1e-8;
/// Stopping rule of the amplitude Newton iteration.
pub const AMPLITUDE_TOLERANCE: f64 = 1e-12;
/// Stopping rule of the counterterm fixed point.
pub const NU_TOLERANCE: f64 = 1e-10;

/// Counterterms `l^(k)_{n,m,h}` at unit amplitude.
///
/// Each entry holds the values for `h = -1, 0, 1, ...`; scales beyond the
/// stored range carry 0. The aggregate counterterm is the `h = -1` entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CountertermTable {
    entries: BTreeMap<(usize, Mode), Vec<f64>>,
    declared: BTreeSet<Mode>,
}

impl CountertermTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Marks `mode` and its mirror as covered by the table.
    pub fn declare(&mut self, mode: Mode) {
        self.declared.insert(mode);
        self.declared.insert(mode.mirrored());
    }

    pub fn is_declared(&self, mode: Mode) -> bool {
        self.declared.contains(&mode)
    }

    /// Stores `l^(k)_{n,m,h}` for `n > 0` and the mirrored values `-l` at `-n`.
    pub fn insert(&mut self, k: usize, mode: Mode, values: Vec<f64>) {
        self.declare(mode);
        let mirrored: Vec<f64> = values.iter().map(|v| -v).collect();
        if mode.n != 0 {
            self.entries.insert((k, mode.mirrored()), mirrored);
        }
        self.entries.insert((k, mode), values);
    }

    /// Stores one row without mirroring (used when reloading).
    pub fn insert_raw(&mut self, k: usize, mode: Mode, h: i32, value: f64) {
        self.declared.insert(mode);
        let v = self.entries.entry((k, mode)).or_default();
        let idx = (h + 1) as usize;
        if v.len() <= idx {
            v.resize(idx + 1, 0.0);
        }
        v[idx] = value;
    }

    /// `l^(k)_{n,m,h}`; `None` when the order or mode was never computed.
    pub fn get(&self, k: usize, mode: Mode, h: i32) -> Option<f64> {
        let v = self.entries.get(&(k, mode))?;
        Some(v.get((h + 1) as usize).copied().unwrap_or(0.0))
    }

    /// Aggregate counterterm `l^(k)_{n,m} = l^(k)_{n,m,-1}`.
    pub fn aggregate(&self, k: usize, mode: Mode) -> Option<f64> {
        self.get(k, mode, -1)
    }

    pub fn max_order(&self) -> usize {
        self.entries.keys().map(|(k, _)| *k).max().unwrap_or(0)
    }

    /// Rows `(k, mode, h, value)` in a deterministic order.
    pub fn rows(&self) -> impl Iterator<Item = (usize, Mode, i32, f64)> + '_ {
        self.entries
            .iter()
            .flat_map(|((k, mode), v)| v.iter().enumerate().map(move |(i, x)| (*k, *mode, i as i32 - 1, *x)))
    }

    /// Modes carrying a stored entry.
    pub fn modes(&self) -> BTreeSet<Mode> {
        self.entries.keys().map(|(_, m)| *m).collect()
    }

    /// Counterterm of order `k` at amplitude `q`: `q^k l^(k)`.
    pub fn at_amplitude(&self, k: usize, mode: Mode, h: i32, q: f64) -> Option<f64> {
        self.get(k, mode, h).map(|l| q.powi(k as i32) * l)
    }

    /// Checks that nothing is stored outside the near-resonant set.
    pub fn check_support(&self, params: &ModelParams) -> Result<()> {
        for ((k, mode), v) in &self.entries {
            if (!in_lambda(*mode, params) || mode.n == 0) && v.iter().any(|x| *x != 0.0) {
                return Err(Error::Invariant(format!(
                    "counterterm of order {k} nonzero outside the near-resonant set at ({}, {})",
                    mode.n, mode.m
                )));
            }
        }
        Ok(())
    }
}

/// Dense coefficients of one order on `|n| <= nmax`, `1 <= m <= mmax`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderTable {
    nmax: i32,
    mmax: u32,
    data: Vec<f64>,
}

impl OrderTable {
    pub fn zeros(nmax: i32, mmax: u32) -> Self {
        OrderTable { nmax, mmax, data: vec![0.0; (2 * nmax + 1) as usize * mmax as usize] }
    }

    fn index(&self, mode: Mode) -> Option<usize> {
        if mode.n.abs() > self.nmax || mode.m == 0 || mode.m > self.mmax {
            return None;
        }
        Some((mode.n + self.nmax) as usize * self.mmax as usize + (mode.m - 1) as usize)
    }

    pub fn get(&self, mode: Mode) -> f64 {
        self.index(mode).map_or(0.0, |i| self.data[i])
    }

    pub fn set(&mut self, mode: Mode, value: f64) {
        let i = self.index(mode).expect("mode outside the table range");
        self.data[i] = value;
    }

    pub fn nmax(&self) -> i32 {
        self.nmax
    }

    pub fn mmax(&self) -> u32 {
        self.mmax
    }

    pub fn modes(&self) -> impl Iterator<Item = Mode> + '_ {
        (-self.nmax..=self.nmax).flat_map(move |n| (1..=self.mmax).map(move |m| Mode::new(n, m)))
    }

    pub fn entries(&self) -> impl Iterator<Item = (Mode, f64)> + '_ {
        self.modes().map(move |mode| (mode, self.get(mode)))
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Nonzero entries grouped by `n` (index `n + nmax`).
    fn nonzero_by_n(&self) -> Vec<Vec<(u32, f64)>> {
        (-self.nmax..=self.nmax)
            .map(|n| {
                (1..=self.mmax)
                    .filter_map(|m| {
                        let v = self.get(Mode::new(n, m));
                        (v != 0.0).then_some((m, v))
                    })
                    .collect()
            })
            .collect()
    }
}

/// Lindstedt coefficients `u^(k)_{n,m}` for `k = 0..=kmax` at amplitude `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffTable {
    pub kmax: usize,
    pub mmax: u32,
    pub q: f64,
    orders: Vec<OrderTable>,
    /// Per order, the largest coefficient at the two highest spatial indices
    /// relative to the largest coefficient of the order.
    pub tail_ratios: Vec<f64>,
}

impl CoeffTable {
    pub fn get(&self, k: usize, mode: Mode) -> f64 {
        self.orders.get(k).map_or(0.0, |o| o.get(mode))
    }

    pub fn order(&self, k: usize) -> &OrderTable {
        &self.orders[k]
    }

    /// Rows `(k, mode, value)` over the full dense range, zeros included.
    pub fn rows(&self) -> impl Iterator<Item = (usize, Mode, f64)> + '_ {
        self.orders.iter().enumerate().flat_map(|(k, o)| o.entries().map(move |(m, v)| (k, m, v)))
    }

    /// Rebuilds a table from rows; orders get the support range `|n| <= k + 1`.
    pub fn from_rows(kmax: usize, mmax: u32, q: f64, rows: &[(usize, Mode, f64)]) -> Result<Self> {
        let mut orders: Vec<OrderTable> = (0..=kmax).map(|k| OrderTable::zeros(k as i32 + 1, mmax)).collect();
        for &(k, mode, v) in rows {
            let o = orders.get_mut(k).ok_or_else(|| {
                Error::InconsistentInputs(format!("row of order {k} exceeds kmax = {kmax}"))
            })?;
            if o.index(mode).is_none() {
                if v != 0.0 {
                    return Err(Error::InconsistentInputs(format!(
                        "row ({k}, {}, {}) lies outside the support",
                        mode.n, mode.m
                    )));
                }
                continue;
            }
            o.set(mode, v);
        }
        let table = CoeffTable { kmax, mmax, q, tail_ratios: tail_ratios(&orders), orders };
        table.check_invariants()?;
        Ok(table)
    }

    /// Same coefficients at amplitude `q` (exact rescaling by homogeneity).
    pub fn rescaled(&self, q: f64) -> CoeffTable {
        let ratio = q / self.q;
        let orders = self
            .orders
            .iter()
            .enumerate()
            .map(|(k, o)| {
                let f = ratio.powi(k as i32 + 1);
                OrderTable { data: o.data.iter().map(|v| v * f).collect(), ..o.clone() }
            })
            .collect();
        CoeffTable { orders, q, ..self.clone() }
    }

    /// Support, parity, reality and amplitude-mode invariants.
    pub fn check_invariants(&self) -> Result<()> {
        for (k, o) in self.orders.iter().enumerate() {
            let scale = o.sup_norm();
            for (mode, v) in o.entries() {
                let fail = |what: &str| {
                    Err(Error::Invariant(format!("{what} at order {k}, mode ({}, {})", mode.n, mode.m)))
                };
                if v == 0.0 {
                    continue;
                }
                if mode.n.unsigned_abs() as usize > k + 1 {
                    return fail("support |n| <= k + 1 violated");
                }
                if mode.m % 2 == 0 {
                    return fail("nonzero coefficient at even m");
                }
                if k >= 1 && mode.is_amplitude() {
                    return fail("amplitude mode populated beyond order 0");
                }
                if k == 0 && !mode.is_amplitude() {
                    return fail("order 0 populated off the amplitude modes");
                }
                if (v - o.get(mode.mirrored())).abs() > REALITY_TOLERANCE * scale {
                    return fail("reality u(n) = u(-n) violated");
                }
            }
        }
        Ok(())
    }

    /// Whether any order carries noticeable content at the spatial cutoff.
    pub fn tail_warning(&self) -> bool {
        self.tail_ratios.iter().any(|&r| r > TAIL_TOLERANCE)
    }
}

fn tail_ratios(orders: &[OrderTable]) -> Vec<f64> {
    orders
        .iter()
        .map(|o| {
            let scale = o.sup_norm();
            if scale == 0.0 || o.mmax < 3 {
                return 0.0;
            }
            let edge = (-o.nmax..=o.nmax)
                .flat_map(|n| [Mode::new(n, o.mmax), Mode::new(n, o.mmax - 1)])
                .fold(0.0f64, |a, mode| a.max(o.get(mode).abs()));
            edge / scale
        })
        .collect()
}

/// Quadratic term `F^(k)_{n,m}` of the recursion from the orders below `k`.
fn quadratic_term(
    nz: &[Vec<Vec<(u32, f64)>>],
    orders: &[OrderTable],
    k: usize,
    mode: Mode,
    frame: &Frame,
    kernel: &KernelTable,
) -> f64 {
    let p = frame.params;
    let mut total = 0.0;
    for k1 in 0..k {
        let k2 = k - 1 - k1;
        let (o1, o2) = (&orders[k1], &orders[k2]);
        for n1 in -o1.nmax..=o1.nmax {
            let n2 = mode.n - n1;
            if n2.abs() > o2.nmax {
                continue;
            }
            let left = &nz[k1][(n1 + o1.nmax) as usize];
            let right = &nz[k2][(n2 + o2.nmax) as usize];
            if left.is_empty() || right.is_empty() {
                continue;
            }
            let mut s = 0.0;
            for &(m1, u1) in left {
                for &(m2, u2) in right {
                    if parity_odd(mode.m, m1, m2) {
                        s += kernel.get(mode.m, m1, m2) * u1 * u2;
                    }
                }
            }
            total += nonlinearity_coefficient(p.a, p.b, frame.omega, n1, n2) * s;
        }
    }
    total
}

fn counterterm_term(
    orders: &[OrderTable],
    k: usize,
    mode: Mode,
    frame: &Frame,
    counterterms: &CountertermTable,
) -> Result<f64> {
    if mode.n == 0 || mode.is_amplitude() || !in_lambda(mode, frame.params) || k < 3 {
        return Ok(0.0);
    }
    let mut s = 0.0;
    for r in 2..k {
        let u = orders[k - r].get(mode);
        if u == 0.0 {
            continue;
        }
        let l = counterterms
            .aggregate(r, mode)
            .ok_or(Error::MissingCounterterm { k: r, n: mode.n, m: mode.m })?;
        s += l * u;
    }
    Ok(f64::from(mode.n) * s)
}

fn unit_orders(
    frame: &Frame,
    counterterms: &CountertermTable,
    kmax: usize,
    mmax: u32,
    kernel: &KernelTable,
) -> Result<Vec<OrderTable>> {
    if kernel.mmax() < mmax {
        return Err(Error::InconsistentInputs("kernel table smaller than the spatial cutoff".into()));
    }
    let mut order0 = OrderTable::zeros(1, mmax);
    order0.set(Mode::new(1, 1), 1.0);
    order0.set(Mode::new(-1, 1), 1.0);
    let mut orders = vec![order0];
    let mut nz = vec![orders[0].nonzero_by_n()];
    for k in 1..=kmax {
        let mut table = OrderTable::zeros(k as i32 + 1, mmax);
        let modes: Vec<Mode> = table.modes().filter(|m| m.m % 2 == 1 && !m.is_amplitude()).collect();
        let values: Vec<f64> = modes
            .par_iter()
            .map(|&mode| {
                let f = quadratic_term(&nz, &orders, k, mode, frame, kernel);
                let c = counterterm_term(&orders, k, mode, frame, counterterms)?;
                if f == 0.0 && c == 0.0 {
                    return Ok(0.0);
                }
                Ok(frame.g(mode)? * (f + c))
            })
            .collect::<Result<_>>()?;
        for (mode, v) in modes.into_iter().zip(values) {
            table.set(mode, v);
        }
        nz.push(table.nonzero_by_n());
        orders.push(table);
    }
    Ok(orders)
}

/// Coefficients at unit amplitude.
pub fn compute_unit_coeffs(
    frame: &Frame,
    counterterms: &CountertermTable,
    kmax: usize,
    mmax: u32,
    kernel: &KernelTable,
) -> Result<CoeffTable> {
    let orders = unit_orders(frame, counterterms, kmax, mmax, kernel)?;
    let table = CoeffTable { kmax, mmax, q: 1.0, tail_ratios: tail_ratios(&orders), orders };
    table.check_invariants()?;
    Ok(table)
}

/// Lindstedt coefficients `u^(k)_{n,m}`, `k <= kmax`, `m <= mmax`, at amplitude `q`.
pub fn compute_coeffs(
    params: &ModelParams,
    eps: f64,
    nu: &NuTable,
    counterterms: &CountertermTable,
    kmax: usize,
    mmax: u32,
    q: f64,
) -> Result<CoeffTable> {
    let kernel = KernelTable::new(mmax);
    let frame = Frame::new(params, eps, nu);
    let unit = compute_unit_coeffs(&frame, counterterms, kmax, mmax, &kernel)?;
    let table = unit.rescaled(q);
    table.check_invariants()?;
    Ok(table)
}

/// Coefficients `c_j = F^(j)_{1,1}` at unit amplitude, `j = 2..=kmax + 1`.
///
/// The truncated amplitude equation reads `D_1 = sum_j c_j eta^{j-2} q^j`
/// with `D_1 = (omega_1^2 - Omega^2) / eps`.
pub fn amplitude_polynomial(unit: &CoeffTable, frame: &Frame, kernel: &KernelTable) -> Vec<f64> {
    let nz: Vec<_> = unit.orders.iter().map(OrderTable::nonzero_by_n).collect();
    (2..=unit.kmax + 1)
        .map(|j| quadratic_term(&nz, &unit.orders, j, Mode::new(1, 1), frame, kernel))
        .collect()
}

/// Leading amplitude coefficient and the tail of its truncated mode sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CubicCoefficient {
    /// `A` in `q = A q^3 + O(eta)`.
    pub value: f64,
    /// Second-order coefficient `c_2` of the amplitude polynomial.
    pub c2: f64,
    /// Linear coefficient `D_1 = (omega_1^2 - Omega^2) / eps`.
    pub detuning: f64,
    /// Estimate of the neglected modes `m > mmax`, in units of `A`.
    pub tail: f64,
}

/// `A = c_2 / D_1` with
/// `c_2 = 2 sum_m v_{1,1,m}^2 [2a(a + b Omega^2) g_{0,m} + (a + 2b Omega^2)(a - b Omega^2) g_{2,m}]`
/// (no frequency shifts).
pub fn amplitude_cubic_coefficient(params: &ModelParams, eps: f64, mmax: u32) -> CubicCoefficient {
    let w = params.frequency(eps);
    let w2 = w * w;
    let (a, b) = (params.a, params.b);
    let term = |m: u32| {
        let v = kernel_v(1, 1, m);
        let g0 = 1.0 / omega_sq(m, params.mu);
        let g2 = 1.0 / (omega_sq(m, params.mu) - 4.0 * w2);
        2.0 * v * v * (2.0 * a * (a + b * w2) * g0 + (a + 2.0 * b * w2) * (a - b * w2) * g2)
    };
    let mut c2 = 0.0;
    let mut last = 0.0;
    for m in (1..=mmax).filter(|m| m % 2 == 1) {
        last = term(m);
        c2 += last;
    }
    let detuning = params.amplitude_detuning(eps);
    // Terms fall off like m^-10, so the tail is about m |t_m| / 9.
    let m_last = f64::from(if mmax % 2 == 1 { mmax } else { mmax.saturating_sub(1).max(1) });
    let tail = (m_last * last / 9.0 / detuning).abs();
    CubicCoefficient { value: c2 / detuning, c2, detuning, tail }
}

/// Solution of the truncated amplitude equation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmplitudeSolution {
    pub q: f64,
    /// Leading coefficient `A = c_2 / D_1`.
    pub cubic: f64,
    /// `c_j`, `j = 2..=K + 1`.
    pub coefficients: Vec<f64>,
    pub detuning: f64,
    /// `|q - RHS(q)|` at return.
    pub residual: f64,
    pub iterations: usize,
}

fn solve_amplitude_polynomial(coefficients: &[f64], detuning: f64, eta: f64) -> Result<AmplitudeSolution> {
    let c2 = coefficients.first().copied().unwrap_or(0.0);
    let cubic = c2 / detuning;
    if cubic.is_nan() || cubic <= 0.0 {
        return Err(Error::SignExcluded { coefficient: cubic });
    }
    let phi = |q: f64| -> (f64, f64) {
        let mut f = -detuning;
        let mut df = 0.0;
        for (i, c) in coefficients.iter().enumerate() {
            let j = i as i32 + 2;
            let w = c * eta.powi(j - 2);
            f += w * q.powi(j);
            df += w * f64::from(j) * q.powi(j - 1);
        }
        (f, df)
    };
    let residual = |q: f64, f: f64| (f * q / detuning).abs();
    let mut q = cubic.powf(-0.5);
    let max_iter = 100;
    let mut last_update = f64::INFINITY;
    for it in 0..max_iter {
        let (f, df) = phi(q);
        if residual(q, f) < AMPLITUDE_TOLERANCE {
            return Ok(AmplitudeSolution {
                q,
                cubic,
                coefficients: coefficients.to_vec(),
                detuning,
                residual: residual(q, f),
                iterations: it,
            });
        }
        if df == 0.0 || !df.is_finite() {
            break;
        }
        let mut step = f / df;
        let mut next = q - step;
        // Damping: halve the step until the equation residual decreases.
        let mut tries = 0;
        while (next.is_nan() || next <= 0.0 || phi(next).0.abs() > f.abs()) && tries < 30 {
            step *= 0.5;
            next = q - step;
            tries += 1;
        }
        last_update = (next - q).abs();
        q = next;
    }
    Err(Error::NoConvergence { what: "amplitude Newton iteration", iterations: max_iter, last_update })
}

/// Positive root `q` of the amplitude equation truncated at order `kmax`.
pub fn solve_amplitude_with(
    frame: &Frame,
    counterterms: &CountertermTable,
    kmax: usize,
    mmax: u32,
    kernel: &KernelTable,
) -> Result<(AmplitudeSolution, CoeffTable)> {
    let unit = compute_unit_coeffs(frame, counterterms, kmax, mmax, kernel)?;
    let coefficients = amplitude_polynomial(&unit, frame, kernel);
    let detuning = frame.params.amplitude_detuning(frame.eps);
    let sol = solve_amplitude_polynomial(&coefficients, detuning, frame.eps.sqrt())?;
    Ok((sol, unit))
}

pub fn solve_amplitude(
    params: &ModelParams,
    eps: f64,
    nu: &NuTable,
    counterterms: &CountertermTable,
    kmax: usize,
    mmax: u32,
) -> Result<AmplitudeSolution> {
    let kernel = KernelTable::new(mmax);
    let frame = Frame::new(params, eps, nu);
    Ok(solve_amplitude_with(&frame, counterterms, kmax, mmax, &kernel)?.0)
}

/// Controls of the counterterm fixed point.
#[derive(Debug, Clone, Copy)]
pub struct NuOptions {
    /// Counterterms are computed on near-resonant modes with `0 < n <= nmax`.
    pub nmax: u32,
    pub mmax: u32,
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl NuOptions {
    pub fn from_params(params: &ModelParams) -> Self {
        NuOptions { nmax: params.nnu, mmax: params.mmax, tolerance: NU_TOLERANCE, max_sweeps: 50 }
    }
}

/// Self-consistent frequency shifts with the matching counterterms and amplitude.
#[derive(Debug, Clone)]
pub struct NuSolution {
    pub nu: NuTable,
    pub counterterms: CountertermTable,
    pub amplitude: AmplitudeSolution,
    /// Coefficients at the solved amplitude.
    pub coeffs: CoeffTable,
    pub sweeps: usize,
    pub last_update: f64,
}

/// Fixed point `nu_{n,m} = sum_{r=2}^{K} eta^r q^r l^(r)_{n,m}` with `eta = sqrt(eps)`.
pub fn solve_nu(params: &ModelParams, eps: f64, kmax: usize) -> Result<NuSolution> {
    solve_nu_with(params, eps, kmax, NuOptions::from_params(params))
}

pub fn solve_nu_with(params: &ModelParams, eps: f64, kmax: usize, opts: NuOptions) -> Result<NuSolution> {
    params.validate()?;
    if !(eps > 0.0 && eps < params.eps0) {
        return Err(Error::InvalidParams(format!("eps = {eps} must lie in (0, eps0)")));
    }
    if kmax < 2 {
        return Err(Error::InvalidParams("the counterterm fixed point needs K >= 2".into()));
    }
    let kernel = KernelTable::new(opts.mmax);
    let modes = lambda_modes(params, opts.nmax.max(kmax as u32 + 1), opts.mmax);
    let tree_opts = CountertermOptions::new(opts.mmax);
    let eta = eps.sqrt();
    let bound = params.nu_bound * params.eps0;
    let mut nu = NuTable::zero();
    let mut last_update = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        let counterterms = counterterm_table(params, eps, &nu, kmax, &modes, &kernel, tree_opts)?;
        let frame = Frame::new(params, eps, &nu);
        let (amplitude, unit) = solve_amplitude_with(&frame, &counterterms, kmax, opts.mmax, &kernel)?;
        let mut next = NuTable::zero();
        for &mode in &modes {
            let mut v = 0.0;
            for r in 2..=kmax {
                let l = counterterms.aggregate(r, mode).unwrap_or(0.0);
                v += (eta * amplitude.q).powi(r as i32) * l;
            }
            if !v.is_finite() || v.abs() >= bound {
                return Err(Error::NoConvergence {
                    what: "counterterm fixed point (shift left |nu| < c eps0)",
                    iterations: sweep,
                    last_update: v.abs(),
                });
            }
            next.set_pair(mode.n, mode.m, v);
        }
        last_update = next.distance(&nu);
        if last_update < opts.tolerance {
            // Counterterms and amplitude are recomputed at the returned shifts.
            let counterterms = counterterm_table(params, eps, &next, kmax, &modes, &kernel, tree_opts)?;
            let frame = Frame::new(params, eps, &next);
            let (amplitude, unit) = solve_amplitude_with(&frame, &counterterms, kmax, opts.mmax, &kernel)?;
            let coeffs = unit.rescaled(amplitude.q);
            return Ok(NuSolution { nu: next, counterterms, amplitude, coeffs, sweeps: sweep, last_update });
        }
        let _ = unit;
        nu = next;
    }
    Err(Error::NoConvergence { what: "counterterm fixed point", iterations: opts.max_sweeps, last_update })
}

/// Field values `v(x, t) = sqrt(eps) sum_k eta^k sum_{n,m} u^(k)_{n,m} e^{i n Omega t} sin(m x)`,
/// indexed `[x][t]`.
pub fn assemble_solution(table: &CoeffTable, params: &ModelParams, eps: f64, xs: &[f64], ts: &[f64]) -> Vec<Vec<f64>> {
    let eta = eps.sqrt();
    let omega = params.frequency(eps);
    let mut entries: Vec<(Mode, f64)> = Vec::new();
    for k in 0..=table.kmax {
        let w = eta.powi(k as i32 + 1);
        for (mode, v) in table.order(k).entries() {
            if v != 0.0 {
                entries.push((mode, w * v));
            }
        }
    }
    xs.iter()
        .map(|&x| {
            ts.iter()
                .map(|&t| {
                    // The coefficients are even in n, so the sum is real: e^{int} pairs to cos.
                    entries
                        .iter()
                        .map(|(mode, c)| c * (f64::from(mode.n) * omega * t).cos() * (f64::from(mode.m) * x).sin())
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Spectral projection of `a f g + b f_t g_t` for two real fields given by their
/// Fourier-sine coefficients: a plain double sum over coefficient pairs.
fn project_product(
    lhs: &[(Mode, f64)],
    rhs: &[(Mode, f64)],
    params: &ModelParams,
    omega: f64,
    out: &mut OrderTable,
) {
    for &(m1, u1) in lhs {
        for &(m2, u2) in rhs {
            let n = m1.n + m2.n;
            if n.abs() > out.nmax {
                continue;
            }
            let c = nonlinearity_coefficient(params.a, params.b, omega, m1.n, m2.n) * u1 * u2;
            if c == 0.0 {
                continue;
            }
            for m in 1..=out.mmax {
                if parity_odd(m, m1.m, m2.m) {
                    let i = out.index(Mode::new(n, m)).unwrap();
                    out.data[i] += c * kernel_v(m, m1.m, m2.m);
                }
            }
        }
    }
}

fn nonzero(o: &OrderTable) -> Vec<(Mode, f64)> {
    o.entries().filter(|(_, v)| *v != 0.0).collect()
}

/// Residual of the truncated series in the original equation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    /// Sup norm of `R_{n,m}` over `|n| <= 2K + 2`, `m <= mmax`.
    pub sup: f64,
    /// Same, excluding the amplitude modes.
    pub sup_off_amplitude: f64,
    /// `|R_{1,1}|`.
    pub amplitude: f64,
    /// Per order `j = 1..=K`, the largest formal defect of the closed
    /// equations relative to the size of the linear term.
    pub order_defects: Vec<f64>,
    pub max_order_defect: f64,
}

/// Defect above which a table is rejected as inconsistent with `(eps, nu, counterterms)`.
const CONSISTENCY_LIMIT: f64 = 1e-6;

/// PDE residual `R_{n,m} = (-Omega^2 n^2 + omega_m^2) v_{n,m} - [P(a v^2 + b v_t^2)]_{n,m}`
/// of the truncated series, together with the order-by-order defects of the
/// closed equations with counterterms.
pub fn residual_norm(
    table: &CoeffTable,
    params: &ModelParams,
    eps: f64,
    nu: &NuTable,
    counterterms: &CountertermTable,
) -> Result<ResidualReport> {
    let frame = Frame::new(params, eps, nu);
    let omega = frame.omega;
    let eta = eps.sqrt();
    let kmax = table.kmax;
    let mmax = table.mmax;

    let mut order_defects = Vec::with_capacity(kmax);
    let nonzero_orders: Vec<Vec<(Mode, f64)>> = table.orders.iter().map(nonzero).collect();
    for j in 1..=kmax {
        let mut f = OrderTable::zeros(j as i32 + 1, mmax);
        for k1 in 0..j {
            project_product(&nonzero_orders[k1], &nonzero_orders[j - 1 - k1], params, omega, &mut f);
        }
        let o = table.order(j);
        let mut defect: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for mode in f.modes().collect::<Vec<_>>() {
            if mode.is_amplitude() {
                continue;
            }
            let lin = frame.denominator(mode)? * o.get(mode);
            let mut ct = 0.0;
            if mode.n != 0 && in_lambda(mode, params) {
                for r in 2..j {
                    let u = table.get(j - r, mode);
                    if u != 0.0 {
                        let l = counterterms
                            .at_amplitude(r, mode, -1, table.q)
                            .ok_or(Error::MissingCounterterm { k: r, n: mode.n, m: mode.m })?;
                        ct += f64::from(mode.n) * l * u;
                    }
                }
            }
            scale = scale.max(lin.abs()).max(f.get(mode).abs());
            defect = defect.max((lin - f.get(mode) - ct).abs());
        }
        order_defects.push(if scale > 0.0 { defect / scale } else { defect });
    }
    let max_order_defect = order_defects.iter().fold(0.0f64, |a, b| a.max(*b));
    if max_order_defect > CONSISTENCY_LIMIT {
        return Err(Error::InconsistentInputs(format!(
            "coefficient table does not solve the closed equations at the given shifts (defect {max_order_defect:e})"
        )));
    }

    let nfield = kmax as i32 + 1;
    let mut v = OrderTable::zeros(nfield, mmax);
    for k in 0..=kmax {
        let w = eta.powi(k as i32 + 1);
        for (mode, u) in table.order(k).entries() {
            if u != 0.0 {
                let i = v.index(mode).unwrap();
                v.data[i] += w * u;
            }
        }
    }
    let field = nonzero(&v);
    let mut p = OrderTable::zeros(2 * nfield, mmax);
    project_product(&field, &field, params, omega, &mut p);
    let mut sup: f64 = 0.0;
    let mut sup_off: f64 = 0.0;
    let mut amplitude = 0.0;
    for mode in p.modes().collect::<Vec<_>>() {
        let n = f64::from(mode.n);
        let lin = (omega_sq(mode.m, params.mu) - omega * omega * n * n) * v.get(mode);
        let r = (lin - p.get(mode)).abs();
        sup = sup.max(r);
        if mode.is_amplitude() {
            if mode.n == 1 {
                amplitude = r;
            }
        } else {
            sup_off = sup_off.max(r);
        }
    }
    Ok(ResidualReport { sup, sup_off_amplitude: sup_off, amplitude, order_defects, max_order_defect })
}

/// Fitted decay of the coefficients in `n` and `m`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    /// Fitted `sigma` in `e^{-sigma |n|}` for the eta-summed coefficients.
    pub n_rate: Option<f64>,
    /// Per order `k >= 1`, fitted power `p` in `max_n |u^(k)_{n,m}| ~ m^-p`.
    pub m_powers: Vec<Option<f64>>,
    /// Smallest `C_0` with `|u_{n,m}| <= C_0 e^{-sigma |n|} / m^7` at the configured `sigma`.
    pub c0: f64,
    /// Orders whose fitted power falls below 3.
    pub violations: Vec<usize>,
    pub passed: bool,
}

fn slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|(x, y)| **x > 0.0 && **y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    slope(&pts)
}

pub fn decay_check(table: &CoeffTable, params: &ModelParams, eps: f64) -> DecayReport {
    let eta = eps.sqrt();
    let mut m_powers = Vec::new();
    let mut violations = Vec::new();
    for k in 1..=table.kmax {
        let o = table.order(k);
        let pts: Vec<(f64, f64)> = (3..=table.mmax)
            .filter(|m| m % 2 == 1)
            .filter_map(|m| {
                let y = (-o.nmax..=o.nmax).fold(0.0f64, |a, n| a.max(o.get(Mode::new(n, m)).abs()));
                (y > 0.0).then(|| (f64::from(m).ln(), y.ln()))
            })
            .collect();
        let p = slope(&pts).map(|s| -s);
        if let Some(p) = p {
            if p < 3.0 {
                violations.push(k);
            }
        }
        m_powers.push(p);
    }
    let nmax = table.kmax as i32 + 1;
    let summed = |mode: Mode| -> f64 { (0..=table.kmax).map(|k| eta.powi(k as i32) * table.get(k, mode)).sum() };
    let n_pts: Vec<(f64, f64)> = (0..=nmax)
        .filter_map(|n| {
            let y = (1..=table.mmax).fold(0.0f64, |a, m| {
                if Mode::new(n, m).is_amplitude() {
                    a
                } else {
                    a.max(summed(Mode::new(n, m)).abs())
                }
            });
            (y > 0.0).then(|| (f64::from(n), y.ln()))
        })
        .collect();
    let n_rate = slope(&n_pts).map(|s| -s);
    let mut c0: f64 = 0.0;
    for n in -nmax..=nmax {
        for m in 1..=table.mmax {
            let mode = Mode::new(n, m);
            let u = summed(mode).abs();
            c0 = c0.max(u * f64::from(m).powi(7) * (params.sigma * f64::from(n.abs())).exp());
        }
    }
    let passed = violations.is_empty();
    DecayReport { n_rate, m_powers, c0, violations, passed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn plus(mu: f64) -> ModelParams {
        ModelParams { mu, detuning: crate::Detuning::Plus, eps0: 0.6, ..Default::default() }
    }

    #[test]
    fn order_zero_is_the_amplitude() {
        let p = ModelParams::default();
        let t = compute_coeffs(&p, 0.01, &NuTable::zero(), &CountertermTable::new(), 0, 9, 0.7).unwrap();
        for (mode, v) in t.order(0).entries() {
            assert_eq!(v, if mode.is_amplitude() { 0.7 } else { 0.0 });
        }
    }

    #[test]
    fn first_order_hand_expansion() {
        let p = plus(0.1);
        let eps = 0.013;
        let q = 0.8;
        let t = compute_coeffs(&p, eps, &NuTable::zero(), &CountertermTable::new(), 1, 11, q).unwrap();
        let w = p.frequency(eps);
        let expect = 2.0 * (p.a + p.b * w * w) * kernel_v(1, 1, 1) * q * q / (1.0 + p.mu);
        assert_relative_eq!(t.get(1, Mode::new(0, 1)), expect, max_relative = 1e-14);
        for (mode, v) in t.order(1).entries() {
            if mode.n.abs() > 2 || mode.m % 2 == 0 {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn cubic_coefficient_matches_recursion() {
        let p = ModelParams::default();
        let eps = 0.01;
        let kernel = KernelTable::new(41);
        let nu = NuTable::zero();
        let frame = Frame::new(&p, eps, &nu);
        let unit = compute_unit_coeffs(&frame, &CountertermTable::new(), 1, 41, &kernel).unwrap();
        let c = amplitude_polynomial(&unit, &frame, &kernel);
        let a = amplitude_cubic_coefficient(&p, eps, 41);
        assert_relative_eq!(a.c2, c[0], max_relative = 1e-12);
        assert!(a.tail < 1e-10 * a.value.abs());
    }

    #[test]
    fn amplitude_sign_exclusion() {
        let p = ModelParams { detuning: crate::Detuning::Plus, ..Default::default() };
        let r = solve_amplitude(&p, 0.01, &NuTable::zero(), &CountertermTable::new(), 2, 15);
        assert!(matches!(r, Err(Error::SignExcluded { .. })));
        let zero = ModelParams { a: 0.0, b: 0.0, ..Default::default() };
        let r = solve_amplitude(&zero, 0.01, &NuTable::zero(), &CountertermTable::new(), 2, 15);
        assert!(matches!(r, Err(Error::SignExcluded { .. })));
    }

    #[test]
    fn amplitude_small_eta_limit() {
        let p = ModelParams::default();
        let eps = 1e-8;
        let a = amplitude_cubic_coefficient(&p, eps, 41);
        let s = solve_amplitude(&p, eps, &NuTable::zero(), &CountertermTable::new(), 2, 41).unwrap();
        assert!(s.residual < AMPLITUDE_TOLERANCE);
        assert_relative_eq!(s.q, a.value.powf(-0.5), max_relative = 1e-3);
    }

    #[test]
    fn linear_solution_assembly() {
        let p = ModelParams::default();
        let eps = 0.01;
        let t = compute_coeffs(&p, eps, &NuTable::zero(), &CountertermTable::new(), 0, 5, 0.9).unwrap();
        let w = p.frequency(eps);
        let xs = [0.0, 0.4, 1.3];
        let ts = [0.0, 0.7, 0.7 + 2.0 * std::f64::consts::PI / w];
        let v = assemble_solution(&t, &p, eps, &xs, &ts);
        for (i, &x) in xs.iter().enumerate() {
            for (j, &tt) in ts.iter().enumerate() {
                let expect = 2.0 * eps.sqrt() * 0.9 * (w * tt).cos() * x.sin();
                assert!((v[i][j] - expect).abs() < 1e-14);
            }
        }
        assert_eq!(v[0][1], 0.0);
        assert!((v[2][1] - v[2][2]).abs() < 1e-13);
    }

    #[test]
    fn linear_problem_has_no_residual_off_the_amplitude_mode() {
        let p = ModelParams { a: 0.0, b: 0.0, ..Default::default() };
        let eps = 0.01;
        let t = compute_coeffs(&p, eps, &NuTable::zero(), &CountertermTable::new(), 2, 9, 1.0).unwrap();
        let r = residual_norm(&t, &p, eps, &NuTable::zero(), &CountertermTable::new()).unwrap();
        assert_eq!(r.sup_off_amplitude, 0.0);
        assert_eq!(r.max_order_defect, 0.0);
    }

    #[test]
    fn counterterm_table_mirrors() {
        let mut t = CountertermTable::new();
        t.insert(2, Mode::new(3, 2), vec![0.5, 0.25]);
        assert_eq!(t.get(2, Mode::new(-3, 2), 0), Some(-0.25));
        assert_eq!(t.get(2, Mode::new(3, 2), 7), Some(0.0));
        assert_eq!(t.get(3, Mode::new(3, 2), -1), None);
        assert_eq!(t.at_amplitude(2, Mode::new(3, 2), -1, 2.0), Some(2.0));
    }

    #[test]
    fn decay_of_default_table() {
        let p = ModelParams::default();
        let eps = 0.01;
        let t = compute_coeffs(&p, eps, &NuTable::zero(), &CountertermTable::new(), 3, 31, 1.0).unwrap();
        let d = decay_check(&t, &p, eps);
        assert!(d.passed, "{d:?}");
        let linear = compute_coeffs(&p, eps, &NuTable::zero(), &CountertermTable::new(), 0, 31, 1.0).unwrap();
        assert!(decay_check(&linear, &p, eps).passed);
    }
}
