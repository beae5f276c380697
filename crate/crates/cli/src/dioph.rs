//! Non-resonance checks and measure estimates.

use anyhow::Result;
use serde::Serialize;

use beamseries::diophantine::{
    auto_mass_mmax, cantor_margins, mass_margin, measure_cantor, measure_mass_complement, melnikov_margins,
    solve_nu_path, CantorMeasure, ConditionMargin, MassMeasure, NuPath,
};
use beamseries::io::SCHEMA_VERSION;
use beamseries::series::solve_nu;
use beamseries::{Frame, NuTable};

use crate::config::RunConfig;
use crate::output::Outputs;
use crate::ScanArgs;

/// Nodes of the shift path used for amplitude scans.
const PATH_NODES: usize = 8;
/// Cells on which the amplitude conditions are linearized.
const CANTOR_CELLS: usize = 64;
/// Mass exclusions are bounded by this multiple of `gamma` plus the tail.
const MASS_BOUND_FACTOR: f64 = 6.0;

/// Worst Melnikov instance as `(n,m)` or `(n,m)(n2,m2)`.
fn worst_label(c: &ConditionMargin) -> String {
    match c.worst {
        None => String::new(),
        Some(w) if w.n2 == 0 && w.m2 == 0 => format!("({},{})", w.n, w.m),
        Some(w) => format!("({},{})({},{})", w.n, w.m, w.n2, w.m2),
    }
}

/// Worst mass instance as `(n,m)` or `(n,m,m2)`.
fn mass_label(c: &ConditionMargin) -> String {
    match c.worst {
        None => String::new(),
        Some(w) if w.m2 == 0 => format!("({},{})", w.n, w.m),
        Some(w) => format!("({},{},{})", w.n, w.m, w.m2),
    }
}

fn midpoints(lo: f64, hi: f64, grid: usize) -> Vec<f64> {
    (0..grid).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / grid as f64).collect()
}

#[derive(Serialize)]
struct MassRow {
    mu: f64,
    margin: f64,
    worst: String,
    pass: bool,
}

#[derive(Serialize)]
struct MassSummary {
    schema_version: u32,
    gamma: f64,
    tau0: f64,
    nmax: u32,
    mmax: u32,
    points: usize,
    failed: usize,
    /// Rejected fraction of the points times `1/8`.
    grid_measure: f64,
    tail_bound: f64,
}

pub fn mass(cfg: &RunConfig, s: &ScanArgs) -> Result<()> {
    let p = &cfg.params;
    let mmax = auto_mass_mmax(p.nmax);
    let points = if s.scan { midpoints(0.0, 0.125, cfg.options.grid) } else { vec![p.mu] };
    let rows: Vec<MassRow> = points
        .iter()
        .map(|&mu| {
            let c = mass_margin(mu, p.gamma, p.tau0, p.nmax, mmax);
            MassRow { mu, margin: c.ratio, worst: mass_label(&c), pass: c.holds() }
        })
        .collect();
    let failed = rows.iter().filter(|r| !r.pass).count();
    let summary = MassSummary {
        schema_version: SCHEMA_VERSION,
        gamma: p.gamma,
        tau0: p.tau0,
        nmax: p.nmax,
        mmax,
        points: rows.len(),
        failed,
        grid_measure: 0.125 * failed as f64 / rows.len() as f64,
        tail_bound: beamseries::diophantine::mass_tail_bound(p.gamma, p.tau0, p.nmax),
    };
    let mut out = Outputs::new(cfg.out_dir());
    out.csv("dioph_mass.csv", &rows)?;
    out.json("dioph_mass.json", &summary)?;
    out.commit()
}

/// Amplitudes with their shifts: a grid with shifts interpolated along the
/// fixed-point path, or the configured amplitude with its own fixed point.
/// Sample amplitudes with their shifts, and the path nodes where the solver failed.
type AmplitudePoints = (Vec<(f64, NuTable)>, Vec<f64>);

fn amplitude_points(cfg: &RunConfig, scan: bool) -> Result<AmplitudePoints> {
    let p = &cfg.params;
    let linear = p.a == 0.0 && p.b == 0.0;
    if scan {
        let (path, failures) =
            if linear { (NuPath::constant(NuTable::zero()), Vec::new()) } else { solve_nu_path(p, PATH_NODES, p.kmax)? };
        let pts = midpoints(0.0, p.eps0, cfg.options.grid).into_iter().map(|e| (e, path.at(e))).collect();
        Ok((pts, failures))
    } else {
        let eps = cfg.eps();
        let nu = if linear { NuTable::zero() } else { solve_nu(p, eps, p.kmax)?.nu };
        Ok((vec![(eps, nu)], Vec::new()))
    }
}

#[derive(Serialize)]
struct AmplitudeSummary {
    schema_version: u32,
    gamma: f64,
    tau: f64,
    nmax: u32,
    mmax: u32,
    points: usize,
    failed: usize,
    failed_fraction: f64,
    /// Path nodes where the shift solver did not converge.
    solver_failures: Vec<f64>,
}

impl AmplitudeSummary {
    fn new(cfg: &RunConfig, passes: &[bool], solver_failures: Vec<f64>) -> Self {
        let failed = passes.iter().filter(|p| !**p).count();
        AmplitudeSummary {
            schema_version: SCHEMA_VERSION,
            gamma: cfg.params.gamma,
            tau: cfg.params.tau,
            nmax: cfg.params.nmax,
            mmax: cfg.params.mmax,
            points: passes.len(),
            failed,
            failed_fraction: failed as f64 / passes.len() as f64,
            solver_failures,
        }
    }
}

#[derive(Serialize)]
struct MelnikovRow {
    eps: f64,
    first_margin: f64,
    first_worst: String,
    second_margin: f64,
    second_worst: String,
    pass: bool,
}

pub fn melnikov(cfg: &RunConfig, s: &ScanArgs) -> Result<()> {
    let p = &cfg.params;
    let (points, failures) = amplitude_points(cfg, s.scan)?;
    let mut rows = Vec::with_capacity(points.len());
    for (eps, nu) in &points {
        let m = melnikov_margins(&Frame::new(p, *eps, nu), p.nmax, p.mmax)?;
        rows.push(MelnikovRow {
            eps: *eps,
            first_margin: m.first.ratio,
            first_worst: worst_label(&m.first),
            second_margin: m.second.ratio,
            second_worst: worst_label(&m.second),
            pass: m.holds(),
        });
    }
    let passes: Vec<bool> = rows.iter().map(|r| r.pass).collect();
    let mut out = Outputs::new(cfg.out_dir());
    out.csv("dioph_melnikov.csv", &rows)?;
    out.json("dioph_melnikov.json", &AmplitudeSummary::new(cfg, &passes, failures))?;
    out.commit()
}

#[derive(Serialize)]
struct CantorRow {
    eps: f64,
    square_margin: f64,
    square_worst: String,
    first_margin: f64,
    first_worst: String,
    second_margin: f64,
    second_worst: String,
    pass: bool,
}

pub fn cantor(cfg: &RunConfig, s: &ScanArgs) -> Result<()> {
    let p = &cfg.params;
    let (points, failures) = amplitude_points(cfg, s.scan)?;
    let mut rows = Vec::with_capacity(points.len());
    for (eps, nu) in &points {
        let m = cantor_margins(&Frame::new(p, *eps, nu), p.nmax, p.mmax)?;
        rows.push(CantorRow {
            eps: *eps,
            square_margin: m.square.ratio,
            square_worst: worst_label(&m.square),
            first_margin: m.first.ratio,
            first_worst: worst_label(&m.first),
            second_margin: m.second.ratio,
            second_worst: worst_label(&m.second),
            pass: m.holds(),
        });
    }
    let passes: Vec<bool> = rows.iter().map(|r| r.pass).collect();
    let mut out = Outputs::new(cfg.out_dir());
    out.csv("dioph_cantor.csv", &rows)?;
    out.json("dioph_cantor.json", &AmplitudeSummary::new(cfg, &passes, failures))?;
    out.commit()
}

#[derive(Serialize)]
struct MassMeasureRow {
    gamma: f64,
    interval_measure: f64,
    grid_measure: f64,
    tail_bound: f64,
    bound: f64,
    pass: bool,
}

#[derive(Serialize)]
struct MeasureSummary {
    schema_version: u32,
    mass: Vec<MassMeasure>,
    /// Interval estimates shrink as `gamma` shrinks.
    mass_monotone: bool,
    cantor: CantorMeasure,
}

pub fn measure(cfg: &RunConfig) -> Result<()> {
    let p = &cfg.params;
    let gammas =
        if cfg.options.gammas.is_empty() { vec![p.gamma, p.gamma / 2.0, p.gamma / 4.0] } else { cfg.options.gammas.clone() };
    let grid = cfg.options.grid.max(1000);
    let mass: Vec<MassMeasure> =
        gammas.iter().map(|&g| measure_mass_complement(g, p.tau0, grid, p.nmax)).collect::<beamseries::Result<_>>()?;
    let rows: Vec<MassMeasureRow> = mass
        .iter()
        .map(|m| {
            let bound = MASS_BOUND_FACTOR * m.gamma + m.tail_bound;
            MassMeasureRow {
                gamma: m.gamma,
                interval_measure: m.interval_measure,
                grid_measure: m.grid_measure,
                tail_bound: m.tail_bound,
                bound,
                pass: m.interval_measure <= bound && m.grid_measure <= bound,
            }
        })
        .collect();
    let mut by_gamma: Vec<&MassMeasure> = mass.iter().collect();
    by_gamma.sort_by(|a, b| a.gamma.total_cmp(&b.gamma));
    let mass_monotone = by_gamma.windows(2).all(|w| w[0].interval_measure <= w[1].interval_measure);

    let (path, failures) = if p.a == 0.0 && p.b == 0.0 {
        (NuPath::constant(NuTable::zero()), Vec::new())
    } else {
        solve_nu_path(p, PATH_NODES, p.kmax)?
    };
    let cantor = measure_cantor(p, &path, cfg.options.grid, CANTOR_CELLS, p.nmax, p.mmax, failures)?;

    let mut out = Outputs::new(cfg.out_dir());
    out.csv("dioph_measure.csv", &rows)?;
    out.json("dioph_measure.json", &MeasureSummary { schema_version: SCHEMA_VERSION, mass, mass_monotone, cantor })?;
    out.commit()
}
