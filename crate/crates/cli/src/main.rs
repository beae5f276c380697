//! Command-line front end of the beam-equation series.

mod commands;
mod config;
mod dioph;
mod output;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{OptionArgs, ParamArgs, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "beamseries", version, about = "Lindstedt series and tree expansion for the nonlinear beam equation")]
struct Cli {
    /// TOML file with `[params]` and `[options]` tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    options: OptionArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Coefficients, counterterms and shifts at one amplitude.
    Coeffs,
    /// Enumerate or dump labelled trees.
    #[command(subcommand)]
    Trees(TreesCommand),
    /// Run the property checks and write a JSON report.
    Verify(VerifyArgs),
    /// Counterterm table at one amplitude.
    Counterterms(CountertermArgs),
    /// Residual of the truncated series over a list of amplitudes.
    Residual(ResidualArgs),
    /// Non-resonance conditions and measure estimates.
    #[command(subcommand)]
    Dioph(DiophCommand),
    /// Scale-counting inequalities per order.
    Bruno(TreeCutoffs),
    /// Interaction kernel table.
    Kernel(KernelArgs),
    /// Resolved configuration and checksums of the output directory.
    Report,
}

/// Cutoffs of the tree-level checks.
#[derive(Debug, Clone, Copy, Args)]
pub struct TreeCutoffs {
    /// Largest order.
    #[arg(long, default_value_t = 3)]
    pub kcap: usize,
    /// Largest `|n|` of the root modes.
    #[arg(long, default_value_t = 4)]
    pub tree_nmax: i32,
    /// Spatial cutoff of the tree labels.
    #[arg(long, default_value_t = 9)]
    pub tree_mmax: u32,
}

#[derive(Debug, Subcommand)]
enum TreesCommand {
    /// Count trees and counterterm trees per order and root mode.
    Enumerate(TreeCutoffs),
    /// Print every tree with the given order and root mode.
    Dump(TreeDumpArgs),
}

#[derive(Debug, Args)]
pub struct TreeDumpArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub n: i32,
    #[arg(long)]
    pub m: u32,
    #[arg(long, default_value_t = 9)]
    pub tree_mmax: u32,
    /// Counterterm trees instead of ordinary trees.
    #[arg(long)]
    pub counterterm: bool,
    /// Also print every admissible scale assignment at the configured amplitude.
    #[arg(long)]
    pub scales: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub cutoffs: TreeCutoffs,
    /// Test hook: flip the sign of the kernel used by the tree evaluator.
    #[arg(long, hide = true)]
    pub inject_kernel_sign_flip: bool,
}

#[derive(Debug, Args)]
pub struct CountertermArgs {
    /// Shift table to evaluate at (default: no shifts).
    #[arg(long)]
    pub nu: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ResidualArgs {
    /// Comma-separated amplitudes (overrides the configuration).
    #[arg(long, value_delimiter = ',')]
    pub eps_list: Option<Vec<f64>>,
    /// Keep amplitudes that fail the amplitude conditions.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
enum DiophCommand {
    /// Mass conditions at `mu`, or over a grid of `[0, 1/8]`.
    Mass(ScanArgs),
    /// Melnikov conditions at one amplitude, or over a grid of `(0, eps0)`.
    Melnikov(ScanArgs),
    /// Amplitude conditions at one amplitude, or over a grid of `(0, eps0)`.
    Cantor(ScanArgs),
    /// Measure estimates of the excluded masses and amplitudes.
    Measure,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Scan a grid instead of a single point.
    #[arg(long)]
    pub scan: bool,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    /// Largest index of the dumped triples.
    #[arg(long, default_value_t = 30)]
    pub kernel_mmax: u32,
}

/// Verification failure, mapped to exit code 1.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "check failed: {}", self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return 1;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<beamseries::Error>() {
            return e.exit_code() as u8;
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply(&cli.params, &cli.options);
    cfg.params.validate()?;
    if let Some(jobs) = cfg.options.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global()?;
    }
    match cli.command {
        Command::Coeffs => commands::coeffs(&cfg),
        Command::Trees(TreesCommand::Enumerate(c)) => commands::trees_enumerate(&cfg, c),
        Command::Trees(TreesCommand::Dump(a)) => commands::trees_dump(&cfg, &a),
        Command::Verify(a) => verify::verify(&cfg, &a),
        Command::Counterterms(a) => commands::counterterms(&cfg, &a),
        Command::Residual(a) => commands::residual(&cfg, &a),
        Command::Dioph(DiophCommand::Mass(s)) => dioph::mass(&cfg, &s),
        Command::Dioph(DiophCommand::Melnikov(s)) => dioph::melnikov(&cfg, &s),
        Command::Dioph(DiophCommand::Cantor(s)) => dioph::cantor(&cfg, &s),
        Command::Dioph(DiophCommand::Measure) => dioph::measure(&cfg),
        Command::Bruno(c) => commands::bruno(&cfg, c),
        Command::Kernel(a) => commands::kernel(&cfg, &a),
        Command::Report => commands::report(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
