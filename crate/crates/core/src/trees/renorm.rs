use rayon::prelude::*;

use crate::error::Result;
use crate::kernel::KernelTable;
use crate::params::ModelParams;
use crate::series::CountertermTable;
use crate::spectrum::{in_lambda, Frame, Mode, NuTable};

use super::enumerate::{Enumerator, DEFAULT_TREE_CAP};
use super::value::{renormalized_value, scale_labellings, tree_value, CountertermScale, Evaluator};
use super::Tree;

/// Truncation and enumeration limits for tree sums.
#[derive(Debug, Clone, Copy)]
pub struct CountertermOptions {
    pub mmax: u32,
    pub cap: usize,
}

impl CountertermOptions {
    pub fn new(mmax: u32) -> Self {
        CountertermOptions { mmax, cap: DEFAULT_TREE_CAP }
    }
}

fn sum_ordered(values: Vec<f64>) -> f64 {
    values.iter().sum()
}

/// `sum_theta sum_scales Val(theta)` over trees of order `k` with root `mode`,
/// with counterterm nodes carrying the summed counterterms.
pub fn sum_trees(k: usize, mode: Mode, ev: &Evaluator, opts: CountertermOptions) -> Result<f64> {
    let ev = Evaluator { counterterm_scale: CountertermScale::Aggregate, ..*ev };
    let trees = Enumerator::new(ev.frame.params, opts.mmax).with_cap(opts.cap).trees(k, mode)?;
    let values: Vec<f64> = trees
        .par_iter()
        .map(|t| {
            let mut s = 0.0;
            for scales in scale_labellings(t, &ev.frame)? {
                s += tree_value(t, &scales, &ev)?;
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    Ok(sum_ordered(values))
}

/// Sum of renormalized values over trees of order `k` with root `mode`, with
/// counterterm nodes carrying the scale-restricted counterterms.
pub fn renormalized_sum(k: usize, mode: Mode, ev: &Evaluator, opts: CountertermOptions) -> Result<f64> {
    let ev = Evaluator { counterterm_scale: CountertermScale::Exiting, ..*ev };
    let trees = Enumerator::new(ev.frame.params, opts.mmax).with_cap(opts.cap).trees(k, mode)?;
    let values: Vec<f64> = trees
        .par_iter()
        .map(|t| {
            let mut s = 0.0;
            for scales in scale_labellings(t, &ev.frame)? {
                s += renormalized_value(t, &scales, &ev)?;
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    Ok(sum_ordered(values))
}

/// Largest scale among the internal lines of a counterterm tree.
fn max_internal_scale(tree: &Tree, scales: &[i32]) -> i32 {
    (0..tree.nodes.len())
        .filter(|&id| tree.has_scale(id) && !tree.nodes[id].is_end())
        .map(|id| scales[id])
        .max()
        .unwrap_or(-1)
}

fn shells_from_trees(trees: &[Tree], mode: Mode, ev: &Evaluator) -> Result<Vec<f64>> {
    let per_tree: Vec<Vec<(i32, f64)>> = trees
        .par_iter()
        .filter(|t| {
            // The localization vanishes when an internal line carries the external mode.
            (0..t.nodes.len())
                .filter(|&id| id != t.root && Some(id) != t.special)
                .all(|id| t.nodes[id].mode != mode)
        })
        .map(|t| {
            let mut out = Vec::new();
            for scales in scale_labellings(t, &ev.frame)? {
                let v = renormalized_value(t, &scales, ev)?;
                if v != 0.0 {
                    out.push((max_internal_scale(t, &scales), v));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut shells: Vec<f64> = vec![0.0];
    for contributions in per_tree {
        for (h, v) in contributions {
            let idx = (h + 1) as usize;
            if shells.len() <= idx {
                shells.resize(idx + 1, 0.0);
            }
            shells[idx] += v;
        }
    }
    Ok(shells)
}

/// Scale shells `S_h = sum_{theta in R_{h,n,m}} L Val(theta)`, indexed by `h + 1`.
pub fn counterterm_shells(k: usize, mode: Mode, ev: &Evaluator, opts: CountertermOptions) -> Result<Vec<f64>> {
    let ev = Evaluator { counterterm_scale: CountertermScale::Exiting, ..*ev };
    if mode.n == 0 || !in_lambda(mode, ev.frame.params) {
        return Ok(vec![0.0]);
    }
    let trees = Enumerator::new(ev.frame.params, opts.mmax).with_cap(opts.cap).r_trees(k, mode)?;
    shells_from_trees(&trees, mode, &ev)
}

/// Turns scale shells into `l_{n,m,h} = -(m^3 / n) sum_{h1 >= h} S_{h1}` for `h >= -1`.
fn shells_to_counterterms(mode: Mode, shells: &[f64]) -> Vec<f64> {
    if mode.n == 0 {
        return vec![0.0; shells.len()];
    }
    let factor = -f64::from(mode.m).powi(3) / f64::from(mode.n);
    let mut out = vec![0.0; shells.len()];
    let mut acc = 0.0;
    for i in (0..shells.len()).rev() {
        acc += shells[i];
        out[i] = factor * acc;
    }
    out
}

/// Counterterm `l^{(k)}_{n,m,h}` built from the counterterm trees (zero outside
/// the near-resonant set and for `n = 0`).
pub fn counterterm(k: usize, mode: Mode, h: i32, ev: &Evaluator, opts: CountertermOptions) -> Result<f64> {
    let shells = counterterm_shells(k, mode, ev, opts)?;
    let l = shells_to_counterterms(mode, &shells);
    Ok(l.get((h + 1) as usize).copied().unwrap_or(0.0))
}

/// Counterterms of orders `2..=kmax` at unit amplitude on the given modes
/// (`n > 0`) and their mirrors, built order by order.
pub fn counterterm_table(
    params: &ModelParams,
    eps: f64,
    nu: &NuTable,
    kmax: usize,
    modes: &[Mode],
    kernel: &KernelTable,
    opts: CountertermOptions,
) -> Result<CountertermTable> {
    let frame = Frame::new(params, eps, nu);
    let mut table = CountertermTable::new();
    for &mode in modes {
        table.declare(mode);
    }
    for k in 2..=kmax {
        let ev = Evaluator {
            frame,
            kernel,
            q: 1.0,
            counterterms: &table,
            counterterm_scale: CountertermScale::Exiting,
        };
        let rows: Vec<(Mode, Vec<f64>)> = modes
            .par_iter()
            .map(|&mode| {
                let shells = counterterm_shells(k, mode, &ev, opts)?;
                Ok((mode, shells_to_counterterms(mode, &shells)))
            })
            .collect::<Result<_>>()?;
        for (mode, l) in rows {
            table.insert(k, mode, l);
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counterterms_sum_shells_from_above() {
        let mode = Mode::new(2, 3);
        let l = shells_to_counterterms(mode, &[1.0, 2.0, 4.0]);
        assert_eq!(l, vec![-27.0 / 2.0 * 7.0, -27.0 / 2.0 * 6.0, -27.0 / 2.0 * 4.0]);
    }
}
