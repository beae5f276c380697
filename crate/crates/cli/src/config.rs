//! Run configuration: a TOML file with `[params]` and `[options]` tables,
//! overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use beamseries::{Detuning, ModelParams};

/// Environment variable naming the output directory.
pub const OUT_DIR_ENV: &str = "BEAMSERIES_OUT_DIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub params: ModelParams,
    pub options: Options,
}

/// Options shared by the subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Options {
    /// Amplitude for single-point commands (default `eps0 / 20`).
    pub eps: Option<f64>,
    /// Amplitudes for the residual scan.
    pub eps_list: Vec<f64>,
    /// Seed of every random stream.
    pub seed: u64,
    /// Sample points for sampled checks.
    pub samples: usize,
    /// Grid size of measure estimates.
    pub grid: usize,
    /// Diophantine constants of the mass-measure sweep.
    pub gammas: Vec<f64>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            eps: None,
            eps_list: Vec::new(),
            seed: 1,
            samples: 20,
            grid: 1000,
            gammas: Vec::new(),
            out_dir: None,
            jobs: None,
        }
    }
}

/// Flags overriding the model parameters.
#[derive(Debug, Clone, Default, Args)]
pub struct ParamArgs {
    #[arg(long, global = true)]
    pub a: Option<f64>,
    #[arg(long, global = true)]
    pub b: Option<f64>,
    #[arg(long, global = true)]
    pub mu: Option<f64>,
    #[arg(long, global = true)]
    pub eps0: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub tau0: Option<f64>,
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true)]
    pub kmax: Option<usize>,
    #[arg(long, global = true)]
    pub mmax: Option<u32>,
    #[arg(long, global = true)]
    pub nmax: Option<u32>,
    #[arg(long, global = true)]
    pub nnu: Option<u32>,
    #[arg(long, global = true)]
    pub nu_bound: Option<f64>,
    #[arg(long, global = true)]
    pub hmax: Option<i32>,
    #[arg(long, global = true, value_parser = parse_detuning)]
    pub detuning: Option<Detuning>,
    /// Evaluate divisors in double-double arithmetic.
    #[arg(long, global = true)]
    pub extended_precision: bool,
}

fn parse_detuning(s: &str) -> std::result::Result<Detuning, String> {
    match s {
        "plus" => Ok(Detuning::Plus),
        "minus" => Ok(Detuning::Minus),
        _ => Err(format!("expected plus or minus, got {s}")),
    }
}

/// Flags overriding the shared options.
#[derive(Debug, Clone, Default, Args)]
pub struct OptionArgs {
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Output directory (overrides the environment and the config file).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }

    pub fn apply(&mut self, p: &ParamArgs, o: &OptionArgs) {
        let m = &mut self.params;
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = p.$field { m.$field = v; })* };
        }
        set!(a, b, mu, eps0, gamma, tau0, tau, sigma, kmax, mmax, nmax, nnu, nu_bound, hmax, detuning);
        if p.extended_precision {
            m.extended_precision = true;
        }
        let opts = &mut self.options;
        if o.eps.is_some() {
            opts.eps = o.eps;
        }
        if let Some(s) = o.seed {
            opts.seed = s;
        }
        if let Some(s) = o.samples {
            opts.samples = s;
        }
        if let Some(g) = o.grid {
            opts.grid = g;
        }
        if o.jobs.is_some() {
            opts.jobs = o.jobs;
        }
        if let Some(dir) = &o.out {
            opts.out_dir = Some(dir.clone());
        } else if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            opts.out_dir = Some(PathBuf::from(dir));
        }
    }

    pub fn eps(&self) -> f64 {
        self.options.eps.unwrap_or(self.params.eps0 / 20.0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.options.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[params]\nalpha = 1.0\n").is_err());
        assert!(toml::from_str::<RunConfig>("[options]\nseeds = 1\n").is_err());
        assert!(toml::from_str::<RunConfig>("[extra]\n").is_err());
    }

    #[test]
    fn flags_override_the_file() {
        let mut c: RunConfig = toml::from_str("[params]\nmu = 0.05\n[options]\nseed = 4\n").unwrap();
        assert_eq!(c.params.mu, 0.05);
        let p = ParamArgs { mu: Some(0.07), ..Default::default() };
        let o = OptionArgs { seed: Some(9), out: Some(PathBuf::from("x")), ..Default::default() };
        c.apply(&p, &o);
        assert_eq!(c.params.mu, 0.07);
        assert_eq!(c.options.seed, 9);
        assert_eq!(c.out_dir(), PathBuf::from("x"));
    }
}
