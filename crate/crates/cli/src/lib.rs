//! The `msdf` command-line pipeline: fitting, representation benchmarks,
//! extraction, flow-model training and sampling, and generative evaluation.
//!
//! Exit codes: 0 success, 1 partial or total failure, 2 invalid configuration.

pub mod config;
pub mod eval;
pub mod extract;
pub mod fit;
pub mod generate;
pub mod manifest;
pub mod pool;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use msdf_flow::Solver;

pub use config::{ConfigError, RunConfig};
pub use manifest::{Manifest, ManifestRecord};

pub const THREADS_ENV: &str = "MSDF_NUM_THREADS";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Outcome {
    pub processed: usize,
    pub skipped: usize,
    pub failed: usize,
}

#[derive(Debug, Parser)]
#[command(name = "msdf", version, about = "Mosaic-SDF shape pipeline")]
pub struct Cli {
    /// Flat key = value run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed (overrides the config's `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Concurrent per-shape jobs.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a mosaic to every manifest shape; existing outputs are skipped.
    Fit {
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fixed-budget sweep over representations.
    BenchRep {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated parameter budgets (overrides the config).
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<usize>>,
    },
    /// Marching cubes on `.msdf` files or directories of them.
    Extract {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Train a flow model on fitted mosaics.
    FmTrain {
        #[arg(long)]
        msdf_dir: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample shapes from a checkpoint, one directory per guidance scale.
    FmSample {
        ckpt: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Class id; unconditional when omitted.
        #[arg(long)]
        class: Option<usize>,
        /// Comma-separated guidance scales (overrides the config).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        omega: Option<Vec<f32>>,
        /// `euler:N`, `midpoint:N` or `dopri5[:rtol[:atol]]`.
        #[arg(long)]
        solver: Option<Solver>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// COV, MMD and 1-NNA of generated meshes against a reference manifest.
    EvalGen {
        gen_dir: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a JSON summary of a `.msdf`, checkpoint or mesh file.
    Inspect { path: PathBuf },
}

fn effective_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.workers == 0 {
        return Err(config::config_error("--workers must be positive"));
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> anyhow::Result<Outcome> {
    let cfg = effective_config(cli)?;
    let w = cli.workers;
    match &cli.command {
        Command::Fit { manifest, out_dir } => fit::cmd_fit(manifest, out_dir, &cfg, w),
        Command::BenchRep { manifest, out, budgets } => fit::cmd_bench_rep(manifest, out, budgets.clone(), &cfg, w),
        Command::Extract { inputs, out_dir, resolution } => extract::cmd_extract(inputs, out_dir, *resolution, &cfg, w),
        Command::FmTrain { msdf_dir, manifest, split, out } => {
            generate::cmd_fm_train(msdf_dir, manifest, split.as_deref(), out, &cfg)
        }
        Command::FmSample { ckpt, out_dir, class, omega, solver, count } => {
            generate::cmd_fm_sample(ckpt, *class, omega.clone(), *solver, *count, out_dir, &cfg)
        }
        Command::EvalGen { gen_dir, reference, split, out } => {
            eval::cmd_eval_gen(gen_dir, reference, split.as_deref(), out, &cfg, w)
        }
        Command::Inspect { path } => {
            println!("{}", serde_json::to_string_pretty(&extract::inspect(path)?)?);
            Ok(Outcome { processed: 1, ..Outcome::default() })
        }
    }
}

/// Sizes the intra-op thread pool from `MSDF_NUM_THREADS` when set.
pub fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| config::config_error(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // A pool built earlier in this process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = init_threads().and_then(|()| dispatch(cli));
    match result {
        Ok(o) if o.failed == 0 => 0,
        Ok(o) => {
            eprintln!("{} item(s) failed", o.failed);
            1
        }
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("error: {e:#}");
            2
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
