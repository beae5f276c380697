//! Property checks with a JSON report.

use anyhow::{bail, Result};
use serde::Serialize;

use beamseries::io::SCHEMA_VERSION;
use beamseries::kernel::{kernel_sum_probe, kernel_v, parity_odd, triple_sine_exact, triple_sine_quadrature, KernelTable};
use beamseries::series::{compute_coeffs, CoeffTable, CountertermTable};
use beamseries::spectrum::{chi_h, lambda_modes, scales_of};
use beamseries::trees::{counterterm_table, renormalized_sum, sum_trees, CountertermOptions, CountertermScale, Evaluator};
use beamseries::{Error, Frame, Mode, ModelParams, NuTable};

use crate::commands::{bruno_counts, root_modes, tree_samples};
use crate::config::RunConfig;
use crate::output::Outputs;
use crate::{CheckFailed, TreeCutoffs, VerifyArgs};

const KERNEL_TOLERANCE: f64 = 1e-10;
const KERNEL_ORACLE_MMAX: u32 = 30;
const KERNEL_SUM_FACTOR: f64 = 10.0;
const KERNEL_SUM_MMAX: u32 = 2000;
const PARTITION_TOLERANCE: f64 = 1e-12;
const PARTITION_POINTS: usize = 10_000;
const TREE_TOLERANCE: f64 = 1e-10;
const MAX_KCAP: usize = 4;

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    status: &'static str,
    worst: Option<f64>,
    tolerance: Option<f64>,
    detail: String,
}

impl Check {
    fn measured(name: &'static str, passed: bool, worst: f64, tolerance: f64, detail: String) -> Self {
        Check { name, status: if passed { "pass" } else { "fail" }, worst: Some(worst), tolerance: Some(tolerance), detail }
    }

    fn counted(name: &'static str, failures: usize, detail: String) -> Self {
        Check {
            name,
            status: if failures == 0 { "pass" } else { "fail" },
            worst: Some(failures as f64),
            tolerance: Some(0.0),
            detail,
        }
    }

    fn skipped(name: &'static str, detail: &str) -> Self {
        Check { name, status: "skipped", worst: None, tolerance: None, detail: detail.to_string() }
    }
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    schema_version: u32,
    seed: u64,
    samples: usize,
    kcap: usize,
    passed: bool,
    checks: Vec<Check>,
}

fn kernel_oracle() -> Check {
    let mut worst: f64 = 0.0;
    let mut parity = 0;
    for m in 1..=KERNEL_ORACLE_MMAX {
        for m1 in 1..=KERNEL_ORACLE_MMAX {
            for m2 in 1..=KERNEL_ORACLE_MMAX {
                let exact = triple_sine_exact(m, m1, m2);
                worst = worst.max((triple_sine_quadrature(m, m1, m2) - exact).abs());
                if !parity_odd(m, m1, m2) && (exact != 0.0 || kernel_v(m, m1, m2) != 0.0) {
                    parity += 1;
                }
            }
        }
    }
    Check::measured(
        "kernel_oracle",
        worst <= KERNEL_TOLERANCE && parity == 0,
        worst,
        KERNEL_TOLERANCE,
        format!("indices <= {KERNEL_ORACLE_MMAX}, {parity} nonzero parity entries"),
    )
}

fn kernel_sum_bound() -> Check {
    let s1 = kernel_sum_probe(1, KERNEL_SUM_MMAX);
    let ratios: Vec<f64> =
        (1..=101).step_by(2).map(|m| f64::from(m).powi(3) * kernel_sum_probe(m, KERNEL_SUM_MMAX) / s1).collect();
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = hi.max(1.0 / lo);
    Check::measured(
        "kernel_sum_bound",
        spread <= KERNEL_SUM_FACTOR,
        spread,
        KERNEL_SUM_FACTOR,
        format!("m^3 S(m) / S(1) in [{lo:.3}, {hi:.3}] for odd m <= 101"),
    )
}

fn partition_of_unity(p: &ModelParams) -> Check {
    let lo = (p.gamma * 2f64.powi(-p.hmax)).ln();
    let hi = 10f64.ln();
    let mut worst: f64 = 0.0;
    let mut support = 0;
    for i in 0..PARTITION_POINTS {
        let x = (lo + (hi - lo) * (i as f64 + 0.5) / PARTITION_POINTS as f64).exp();
        worst = worst.max(((-1..=p.hmax).map(|h| chi_h(x, h, p.gamma)).sum::<f64>() - 1.0).abs());
        let s = scales_of(x, p.gamma, p.hmax);
        let consecutive = s.len() <= 2 && s.windows(2).all(|w| w[1] == w[0] + 1);
        support += usize::from(!consecutive);
    }
    Check::measured(
        "partition_of_unity",
        worst < PARTITION_TOLERANCE && support == 0,
        worst,
        PARTITION_TOLERANCE,
        format!("{PARTITION_POINTS} log-spaced points, {support} support failures"),
    )
}

fn positive_lambda(p: &ModelParams, c: TreeCutoffs) -> Vec<Mode> {
    lambda_modes(p, c.tree_nmax as u32, c.tree_mmax).into_iter().filter(|m| m.n > 0).collect()
}

fn worst_deviation(table: &CoeffTable, ev: &Evaluator, c: TreeCutoffs, renormalized: bool) -> Result<f64> {
    let opts = CountertermOptions::new(c.tree_mmax);
    let mut worst: f64 = 0.0;
    for k in 0..=c.kcap {
        for mode in root_modes(c) {
            let s = if renormalized { renormalized_sum(k, mode, ev, opts)? } else { sum_trees(k, mode, ev, opts)? };
            let r = table.get(k, mode);
            worst = worst.max((s - r).abs() / r.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Tree sums against the recursion, plain and renormalized, with the
/// invariants of every table produced on the way.
fn tree_checks(cfg: &RunConfig, c: TreeCutoffs, samples: &[(f64, NuTable)], flip: bool) -> Result<[Check; 3]> {
    let p = &cfg.params;
    let kernel = KernelTable::new(c.tree_mmax);
    let tree_kernel = if flip { kernel.scaled(-1.0) } else { kernel.clone() };
    let opts = CountertermOptions::new(c.tree_mmax);
    let modes = positive_lambda(p, c);
    let mut zero = CountertermTable::new();
    for &mode in &modes {
        for r in 2..=c.kcap {
            zero.insert(r, mode, vec![0.0]);
        }
    }
    let mut plain: f64 = 0.0;
    let mut renorm: f64 = 0.0;
    let mut violations = 0;
    let mut tables = 0;
    for (eps, nu) in samples {
        let frame = Frame::new(p, *eps, nu);
        let table = compute_coeffs(p, *eps, nu, &zero, c.kcap, c.tree_mmax, 1.0)?;
        tables += 1;
        violations += usize::from(table.check_invariants().is_err());
        let ev = Evaluator {
            frame,
            kernel: &tree_kernel,
            q: 1.0,
            counterterms: &zero,
            counterterm_scale: CountertermScale::Aggregate,
        };
        plain = plain.max(worst_deviation(&table, &ev, c, false)?);

        if c.kcap >= 2 {
            let ct = counterterm_table(p, *eps, nu, c.kcap, &modes, &kernel, opts)?;
            violations += usize::from(ct.check_support(p).is_err());
            let table = compute_coeffs(p, *eps, nu, &ct, c.kcap, c.tree_mmax, 1.0)?;
            tables += 1;
            violations += usize::from(table.check_invariants().is_err());
            let ev = Evaluator {
                frame,
                kernel: &tree_kernel,
                q: 1.0,
                counterterms: &ct,
                counterterm_scale: CountertermScale::Exiting,
            };
            renorm = renorm.max(worst_deviation(&table, &ev, c, true)?);
        }
    }
    let points = samples.len();
    let renormalized = if c.kcap >= 2 {
        Check::measured(
            "renormalized_sums",
            renorm <= TREE_TOLERANCE,
            renorm,
            TREE_TOLERANCE,
            format!("orders <= {}, {points} sample points", c.kcap),
        )
    } else {
        Check::skipped("renormalized_sums", "counterterms start at order 2")
    };
    Ok([
        Check::measured(
            "tree_sums",
            plain <= TREE_TOLERANCE,
            plain,
            TREE_TOLERANCE,
            format!("orders <= {}, {points} sample points", c.kcap),
        ),
        renormalized,
        Check::counted("invariants", violations, format!("{tables} tables")),
    ])
}

pub fn verify(cfg: &RunConfig, a: &VerifyArgs) -> Result<()> {
    let c = a.cutoffs;
    if c.kcap > MAX_KCAP {
        bail!(Error::Precondition(format!("verification runs up to order {MAX_KCAP}, got {}", c.kcap)));
    }
    let samples = tree_samples(cfg, c)?;
    let mut checks = vec![kernel_oracle(), kernel_sum_bound(), partition_of_unity(&cfg.params)];
    checks.extend(tree_checks(cfg, c, &samples, a.inject_kernel_sign_flip)?);
    if c.kcap >= 1 {
        let rows = bruno_counts(cfg, c, &samples)?;
        let failures: usize = rows.iter().map(|r| r.failures).sum();
        let labellings: usize = rows.iter().map(|r| r.labellings).sum();
        checks.push(Check::counted("scale_counting", failures, format!("{labellings} labelled trees")));
    } else {
        checks.push(Check::skipped("scale_counting", "no trees with internal lines at order 0"));
    }
    let first_failure = checks.iter().find(|c| c.status == "fail").map(|c| format!("{} ({})", c.name, c.detail));
    let report = VerifyReport {
        schema_version: SCHEMA_VERSION,
        seed: cfg.options.seed,
        samples: samples.len(),
        kcap: c.kcap,
        passed: first_failure.is_none(),
        checks,
    };
    for check in &report.checks {
        eprintln!("{:<20} {:<7} {}", check.name, check.status, check.detail);
    }
    let mut out = Outputs::new(cfg.out_dir());
    out.json("verify.json", &report)?;
    out.commit()?;
    match first_failure {
        Some(name) => Err(CheckFailed(name).into()),
        None => Ok(()),
    }
}
