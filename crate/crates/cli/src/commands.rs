//! Series, tree, kernel and report subcommands.

use std::fs;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use beamseries::bruno::{admissible_scales, check_bruno, check_bruno_r};
use beamseries::diophantine::check_cantor;
use beamseries::io::{read_nu_csv, write_coeffs_csv, write_counterterms_csv, write_nu_csv, CoeffSummary, SCHEMA_VERSION};
use beamseries::kernel::{kernel_v, parity_odd, triple_sine_exact, triple_sine_quadrature, KernelTable};
use beamseries::sampling::{melnikov_samples, SampleOptions};
use beamseries::series::{compute_coeffs, decay_check, log_log_slope, residual_norm, solve_nu, CountertermTable};
use beamseries::spectrum::{in_lambda, lambda_modes};
use beamseries::trees::{counterterm_table, enumerate_r_trees, enumerate_trees, CountertermOptions, Tree};
use beamseries::{Error, Frame, Mode, ModelParams, NuTable};

use crate::config::RunConfig;
use crate::output::Outputs;
use crate::{CountertermArgs, KernelArgs, ResidualArgs, TreeCutoffs, TreeDumpArgs};

pub fn coeffs(cfg: &RunConfig) -> Result<()> {
    let p = &cfg.params;
    let eps = cfg.eps();
    let kmax = p.kmax;
    let mut out = Outputs::new(cfg.out_dir());
    if p.a == 0.0 && p.b == 0.0 {
        // Linear equation: every amplitude is free, the series stops at order 0.
        eprintln!("warning: a = b = 0, the equation is linear; writing the unit-amplitude solution");
        let nu = NuTable::zero();
        let ct = CountertermTable::new();
        let table = compute_coeffs(p, eps, &nu, &ct, kmax, p.mmax, 1.0)?;
        let decay = decay_check(&table, p, eps);
        let summary = CoeffSummary::new(&table, eps, None, &decay);
        out.add("coeffs.csv", |w| write_coeffs_csv(&table, w))?;
        out.add("counterterms.csv", |w| write_counterterms_csv(&ct, w))?;
        out.add("nu.csv", |w| write_nu_csv(&nu, w))?;
        out.json("coeffs.json", &summary)?;
        return out.commit();
    }
    let sol = solve_nu(p, eps, kmax)?;
    let decay = decay_check(&sol.coeffs, p, eps);
    if !decay.passed {
        eprintln!("warning: decay fit below the expected power at orders {:?}", decay.violations);
    }
    let summary = CoeffSummary::new(&sol.coeffs, eps, Some(sol.amplitude.cubic), &decay);
    if summary.tail_warning {
        eprintln!("warning: coefficients near the spatial cutoff are not small; raise mmax");
    }
    out.add("coeffs.csv", |w| write_coeffs_csv(&sol.coeffs, w))?;
    out.add("counterterms.csv", |w| write_counterterms_csv(&sol.counterterms, w))?;
    out.add("nu.csv", |w| write_nu_csv(&sol.nu, w))?;
    out.json("coeffs.json", &summary)?;
    out.commit()
}

pub fn root_modes(c: TreeCutoffs) -> Vec<Mode> {
    (-c.tree_nmax..=c.tree_nmax).flat_map(|n| (1..=c.tree_mmax).map(move |m| Mode::new(n, m))).collect()
}

/// Counterterm trees exist on near-resonant roots other than the amplitude modes.
pub fn has_r_trees(mode: Mode, p: &ModelParams) -> bool {
    mode.n != 0 && !mode.is_amplitude() && in_lambda(mode, p)
}

#[derive(Serialize)]
struct TreeCountRow {
    k: usize,
    n: i32,
    m: u32,
    trees: usize,
    counterterm_trees: usize,
}

pub fn trees_enumerate(cfg: &RunConfig, c: TreeCutoffs) -> Result<()> {
    let p = &cfg.params;
    let mut rows = Vec::new();
    for k in 0..=c.kcap {
        for mode in root_modes(c) {
            let trees = enumerate_trees(k, mode, p, c.tree_mmax)?.len();
            let counterterm_trees =
                if k >= 1 && has_r_trees(mode, p) { enumerate_r_trees(k, mode, p, c.tree_mmax)?.len() } else { 0 };
            if trees + counterterm_trees > 0 {
                rows.push(TreeCountRow { k, n: mode.n, m: mode.m, trees, counterterm_trees });
            }
        }
    }
    let mut out = Outputs::new(cfg.out_dir());
    out.csv("trees.csv", &rows)?;
    out.commit()
}

pub fn trees_dump(cfg: &RunConfig, a: &TreeDumpArgs) -> Result<()> {
    let p = &cfg.params;
    let mode = Mode::new(a.n, a.m);
    let trees: Vec<Tree> = if a.counterterm {
        if !has_r_trees(mode, p) {
            bail!(Error::Precondition(format!("({}, {}) carries no counterterm trees", a.n, a.m)));
        }
        enumerate_r_trees(a.k, mode, p, a.tree_mmax)?
    } else {
        enumerate_trees(a.k, mode, p, a.tree_mmax)?
    };
    let nu = NuTable::zero();
    let frame = Frame::new(p, cfg.eps(), &nu);
    let mut text = String::new();
    for (i, t) in trees.iter().enumerate() {
        text.push_str(&format!("# tree {i}\n"));
        if a.scales {
            for scales in admissible_scales(t, &frame)? {
                text.push_str(&t.dump(Some(&scales)));
            }
        } else {
            text.push_str(&t.dump(None));
        }
    }
    print!("{text}");
    Ok(())
}

pub fn counterterms(cfg: &RunConfig, a: &CountertermArgs) -> Result<()> {
    let p = &cfg.params;
    let eps = cfg.eps();
    if p.kmax < 2 {
        bail!(Error::InvalidParams("counterterms start at order 2; set kmax >= 2".into()));
    }
    let nu = match &a.nu {
        Some(path) => {
            let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            read_nu_csv(f)?
        }
        None => NuTable::zero(),
    };
    nu.check(p)?;
    let modes: Vec<Mode> =
        lambda_modes(p, p.nnu.max(p.kmax as u32 + 1), p.mmax).into_iter().filter(|m| m.n > 0).collect();
    let kernel = KernelTable::new(p.mmax);
    let ct = counterterm_table(p, eps, &nu, p.kmax, &modes, &kernel, CountertermOptions::new(p.mmax))?;
    ct.check_support(p)?;
    let mut out = Outputs::new(cfg.out_dir());
    out.add("counterterms.csv", |w| write_counterterms_csv(&ct, w))?;
    out.commit()
}

#[derive(Serialize)]
struct ResidualRow {
    eps: f64,
    log_eps: f64,
    status: &'static str,
    residual: Option<f64>,
    log_residual: Option<f64>,
    residual_off_amplitude: Option<f64>,
    residual_amplitude: Option<f64>,
    max_order_defect: Option<f64>,
    nu_norm: Option<f64>,
    nu_ratio: Option<f64>,
}

impl ResidualRow {
    fn skipped(eps: f64, status: &'static str) -> Self {
        ResidualRow {
            eps,
            log_eps: eps.ln(),
            status,
            residual: None,
            log_residual: None,
            residual_off_amplitude: None,
            residual_amplitude: None,
            max_order_defect: None,
            nu_norm: None,
            nu_ratio: None,
        }
    }
}

#[derive(Serialize)]
struct ResidualSummary {
    schema_version: u32,
    kmax: usize,
    accepted: usize,
    excluded: usize,
    failed: usize,
    slope: Option<f64>,
    expected_slope: f64,
    max_order_defect: f64,
}

/// Default scan: eight points over the decade `[eps0 / 200, eps0 / 20]`.
fn default_eps_list(eps0: f64) -> Vec<f64> {
    (0..8).map(|i| eps0 / 200.0 * 10f64.powf(f64::from(i) / 7.0)).collect()
}

pub fn residual(cfg: &RunConfig, a: &ResidualArgs) -> Result<()> {
    let p = &cfg.params;
    let list = match &a.eps_list {
        Some(l) => l.clone(),
        None if !cfg.options.eps_list.is_empty() => cfg.options.eps_list.clone(),
        None => default_eps_list(p.eps0),
    };
    if let Some(bad) = list.iter().find(|&&e| !(e > 0.0 && e < p.eps0)) {
        bail!(Error::InvalidParams(format!("eps = {bad} must lie in (0, eps0)")));
    }
    let linear = p.a == 0.0 && p.b == 0.0;
    let mut rows = Vec::new();
    for &eps in &list {
        let (coeffs, nu, ct) = if linear {
            let nu = NuTable::zero();
            let ct = CountertermTable::new();
            (compute_coeffs(p, eps, &nu, &ct, p.kmax, p.mmax, 1.0)?, nu, ct)
        } else {
            match solve_nu(p, eps, p.kmax) {
                Ok(s) => (s.coeffs, s.nu, s.counterterms),
                Err(e @ (Error::NoConvergence { .. } | Error::SignExcluded { .. })) => {
                    eprintln!("eps = {eps}: {e}");
                    rows.push(ResidualRow::skipped(eps, "failed"));
                    continue;
                }
                Err(e) => return Err(e.into()),
            }
        };
        if !linear && !a.force && !check_cantor(p, eps, &nu, p.nmax, p.mmax)? {
            rows.push(ResidualRow::skipped(eps, "excluded"));
            continue;
        }
        let r = residual_norm(&coeffs, p, eps, &nu, &ct)?;
        rows.push(ResidualRow {
            eps,
            log_eps: eps.ln(),
            status: "accepted",
            residual: Some(r.sup),
            log_residual: Some(r.sup.ln()),
            residual_off_amplitude: Some(r.sup_off_amplitude),
            residual_amplitude: Some(r.amplitude),
            max_order_defect: Some(r.max_order_defect),
            nu_norm: Some(nu.sup_norm()),
            nu_ratio: Some(nu.sup_norm() / eps),
        });
    }
    let accepted: Vec<&ResidualRow> = rows.iter().filter(|r| r.status == "accepted").collect();
    let xs: Vec<f64> = accepted.iter().map(|r| r.eps).collect();
    let ys: Vec<f64> = accepted.iter().filter_map(|r| r.residual).collect();
    let summary = ResidualSummary {
        schema_version: SCHEMA_VERSION,
        kmax: p.kmax,
        accepted: accepted.len(),
        excluded: rows.iter().filter(|r| r.status == "excluded").count(),
        failed: rows.iter().filter(|r| r.status == "failed").count(),
        slope: log_log_slope(&xs, &ys),
        expected_slope: (p.kmax as f64 + 2.0) / 2.0,
        max_order_defect: accepted.iter().filter_map(|r| r.max_order_defect).fold(0.0, f64::max),
    };
    let mut out = Outputs::new(cfg.out_dir());
    out.csv("residual.csv", &rows)?;
    out.json("residual.json", &summary)?;
    out.commit()
}

#[derive(Serialize)]
pub struct BrunoRow {
    pub k: usize,
    pub trees: usize,
    pub counterterm_trees: usize,
    pub labellings: usize,
    pub failures: usize,
    pub pass: bool,
}

/// Melnikov-accepted sample points with shifts on the tree cutoffs.
pub fn tree_samples(cfg: &RunConfig, c: TreeCutoffs) -> Result<Vec<(f64, NuTable)>> {
    let mut opts = SampleOptions::new(cfg.options.samples, cfg.options.seed);
    opts.nu_nmax = c.tree_nmax as u32;
    opts.nu_mmax = c.tree_mmax;
    Ok(melnikov_samples(&cfg.params, opts)?)
}

/// Scale-counting checks over every admissible labelling, one row per order `1..=kcap`.
pub fn bruno_counts(cfg: &RunConfig, c: TreeCutoffs, samples: &[(f64, NuTable)]) -> Result<Vec<BrunoRow>> {
    let p = &cfg.params;
    let mut rows = Vec::new();
    for k in 1..=c.kcap {
        let mut trees = Vec::new();
        let mut counterterm_trees = 0;
        for mode in root_modes(c) {
            trees.extend(enumerate_trees(k, mode, p, c.tree_mmax)?);
            if has_r_trees(mode, p) {
                let r = enumerate_r_trees(k, mode, p, c.tree_mmax)?;
                counterterm_trees += r.len();
                trees.extend(r);
            }
        }
        let mut labellings = 0;
        let mut failures = 0;
        for (eps, nu) in samples {
            let frame = Frame::new(p, *eps, nu);
            for t in &trees {
                for scales in admissible_scales(t, &frame)? {
                    labellings += 1;
                    let ok = if t.is_r_tree() { check_bruno_r(t, &scales, &frame)? } else { check_bruno(t, &scales, &frame)? };
                    failures += usize::from(!ok);
                }
            }
        }
        rows.push(BrunoRow {
            k,
            trees: trees.len() - counterterm_trees,
            counterterm_trees,
            labellings,
            failures,
            pass: failures == 0,
        });
    }
    Ok(rows)
}

pub fn bruno(cfg: &RunConfig, c: TreeCutoffs) -> Result<()> {
    let samples = tree_samples(cfg, c)?;
    let rows = bruno_counts(cfg, c, &samples)?;
    let mut out = Outputs::new(cfg.out_dir());
    out.csv("bruno.csv", &rows)?;
    out.commit()
}

#[derive(Serialize)]
struct KernelRow {
    m: u32,
    m1: u32,
    m2: u32,
    kernel: f64,
    triple_exact: f64,
    triple_quadrature: f64,
}

pub fn kernel(cfg: &RunConfig, a: &KernelArgs) -> Result<()> {
    let mut rows = Vec::new();
    for m in 1..=a.kernel_mmax {
        for m1 in 1..=a.kernel_mmax {
            for m2 in 1..=a.kernel_mmax {
                if parity_odd(m, m1, m2) {
                    rows.push(KernelRow {
                        m,
                        m1,
                        m2,
                        kernel: kernel_v(m, m1, m2),
                        triple_exact: triple_sine_exact(m, m1, m2),
                        triple_quadrature: triple_sine_quadrature(m, m1, m2),
                    });
                }
            }
        }
    }
    let mut out = Outputs::new(cfg.out_dir());
    out.csv("kernel.csv", &rows)?;
    out.commit()
}

#[derive(Serialize)]
struct FileDigest {
    name: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Report<'a> {
    schema_version: u32,
    version: &'static str,
    config: &'a RunConfig,
    files: Vec<FileDigest>,
}

pub fn report(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.out_dir();
    let mut files = Vec::new();
    if dir.is_dir() {
        let mut names: Vec<_> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n != "report.json" && n != "config.toml")
            .collect();
        names.sort();
        for name in names {
            let bytes = fs::read(dir.join(&name))?;
            files.push(FileDigest { name, bytes: bytes.len() as u64, sha256: format!("{:x}", Sha256::digest(&bytes)) });
        }
    }
    let report = Report { schema_version: SCHEMA_VERSION, version: env!("CARGO_PKG_VERSION"), config: cfg, files };
    let mut out = Outputs::new(&dir);
    out.json("report.json", &report)?;
    out.text("config.toml", toml::to_string(cfg)?);
    out.commit()
}
