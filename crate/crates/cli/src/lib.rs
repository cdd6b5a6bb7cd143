//! Batch front end: `train`, `sample`, `eval`, `verify` and `gen-data`.
//!
//! Every subcommand reads the same flat configuration (see [`config::KEYS`]),
//! merged from defaults, an optional `--config` file, dedicated flags and
//! repeated `--set key=value` overrides, in increasing precedence.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::EvalInput;
use crate::config::RunConfig;
pub use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "catdiff", version, about = "Continuous-time categorical diffusion")]
pub struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes checkpoint.bin, metrics.csv and config.toml into --out.
    Train(TrainArgs),
    /// Draw samples from a checkpoint (or the exact oracle) into a CSV file.
    Sample(SampleArgs),
    /// MMD and total variation against the data law; writes metrics.json and metrics.csv.
    Eval(EvalArgs),
    /// Run the oracle verification suite and print a JSON verdict.
    Verify(VerifyArgs),
    /// Write a dataset CSV.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
#[command(after_long_help = keys_help())]
pub struct ConfigArgs {
    /// TOML file with flat dotted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override one key, e.g. `--set train.learning_rate=1e-3`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Print the normalized configuration and exit.
    #[arg(long)]
    pub print_config: bool,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Toy dataset name (`data.dataset`).
    #[arg(long)]
    pub dataset: Option<String>,

    /// Bits per axis (`data.bits`).
    #[arg(long)]
    pub bits: Option<u32>,

    /// Architecture (`model.architecture`).
    #[arg(long)]
    pub model: Option<String>,
}

fn keys_help() -> String {
    format!("Configuration keys (key, default, meaning):\n{}", config::describe_keys())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Loss (`train.loss`).
    #[arg(long)]
    pub loss: Option<String>,

    /// Optimizer steps (`train.steps`).
    #[arg(long)]
    pub steps: Option<u64>,

    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Checkpoint written by `train`; not needed for the exact oracle.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    /// Sampler (`sample.sampler`).
    #[arg(long)]
    pub sampler: Option<String>,

    /// Predictor steps (`sample.steps`).
    #[arg(long)]
    pub steps: Option<u64>,

    /// Number of samples (`sample.count`).
    #[arg(long)]
    pub n: Option<u64>,

    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Samples CSV to score.
    #[arg(long, conflicts_with_all = ["checkpoint", "baseline"])]
    pub samples: Option<PathBuf>,

    /// Checkpoint to sample fresh sets from on every repeat.
    #[arg(long, conflicts_with = "baseline")]
    pub checkpoint: Option<PathBuf>,

    /// Reference generator: `null` (data against data), `init` (untrained model)
    /// or `oracle` (exact reverse simulation of a table).
    #[arg(long)]
    pub baseline: Option<String>,

    /// Repeats (`eval.repeats`).
    #[arg(long)]
    pub repeats: Option<u64>,

    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// fast or full.
    #[arg(long, default_value = "fast")]
    pub level: String,

    /// Invert the marginal ratio inside the reverse rate (negative control).
    #[arg(long)]
    pub inject_fault: bool,

    /// Run only the named checks; repeatable.
    #[arg(long)]
    pub only: Vec<String>,

    /// Keep per-check wall-clock seconds in the verdict.
    #[arg(long)]
    pub timings: bool,

    /// Also write the verdict to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Number of rows.
    #[arg(long, default_value_t = 4000)]
    pub n: usize,

    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

impl ConfigArgs {
    /// Defaults, then the file, then dedicated flags and `extra`, then `--set`.
    pub fn resolve(&self, extra: &[(&str, Option<String>)]) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.merge_file(path)?;
        }
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("data.dataset", self.dataset.clone()),
            ("data.bits", self.bits.map(|v| v.to_string())),
            ("model.architecture", self.model.clone()),
        ];
        for (key, value) in flags.iter().chain(extra) {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for assignment in &self.overrides {
            cfg.set_assignment(assignment)?;
        }
        Ok(cfg)
    }
}

fn configure_threads(threads: usize) -> Result<(), CliError> {
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    Ok(())
}

/// Runs one parsed invocation; returns the process exit code.
pub fn execute(cli: Cli) -> Result<i32, CliError> {
    configure_threads(cli.threads)?;
    let (args, extra): (&ConfigArgs, Vec<(&str, Option<String>)>) = match &cli.command {
        Command::Train(a) => (
            &a.config,
            vec![("train.loss", a.loss.clone()), ("train.steps", a.steps.map(|v| v.to_string()))],
        ),
        Command::Sample(a) => (
            &a.config,
            vec![
                ("sample.sampler", a.sampler.clone()),
                ("sample.steps", a.steps.map(|v| v.to_string())),
                ("sample.count", a.n.map(|v| v.to_string())),
            ],
        ),
        Command::Eval(a) => (&a.config, vec![("eval.repeats", a.repeats.map(|v| v.to_string()))]),
        Command::Verify(a) => (&a.config, vec![]),
        Command::GenData(a) => (&a.config, vec![]),
    };
    let cfg = args.resolve(&extra)?;
    if args.print_config {
        print!("{}", cfg.normalized());
        return Ok(0);
    }
    match &cli.command {
        Command::Train(a) => {
            let out = commands::run_train(&cfg, &a.out)?;
            eprintln!("wrote {}", out.checkpoint.display());
            Ok(0)
        }
        Command::Sample(a) => {
            let n = commands::run_sample(&cfg, a.checkpoint.as_deref(), &a.out)?;
            eprintln!("wrote {n} samples to {}", a.out.display());
            Ok(0)
        }
        Command::Eval(a) => {
            let input = match (&a.samples, &a.checkpoint, a.baseline.as_deref()) {
                (Some(p), _, _) => EvalInput::Samples(p),
                (_, Some(p), _) => EvalInput::Checkpoint(p),
                (_, _, Some("null")) => EvalInput::Null,
                (_, _, Some("init")) => EvalInput::Init,
                (_, _, Some("oracle")) => EvalInput::Oracle,
                (_, _, Some(other)) => {
                    return Err(CliError::Usage(format!("--baseline: unknown value `{other}` (null, init, oracle)")))
                }
                _ => return Err(CliError::Usage("eval needs --samples, --checkpoint or --baseline".into())),
            };
            let report = commands::run_eval(&cfg, input, &a.out)?;
            print!("{}", report.to_csv());
            Ok(0)
        }
        Command::Verify(a) => {
            let level = a.level.parse().map_err(|e| CliError::Usage(format!("--level: {e}")))?;
            let (passed, text) = commands::run_verify(&cfg, level, a.inject_fault, &a.only, a.timings, a.out.as_deref())?;
            println!("{text}");
            if passed {
                Ok(0)
            } else {
                Err(CliError::Verification("see the failing checks in the verdict".into()))
            }
        }
        Command::GenData(a) => {
            commands::run_gen_data(&cfg, a.n, &a.out)?;
            Ok(0)
        }
    }
}

/// Parses `args` and runs; clap handles `--help` and malformed flags itself.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("catdiff: {e}");
            e.exit_code()
        }
    }
}
