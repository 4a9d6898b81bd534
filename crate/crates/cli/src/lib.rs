//! Config-driven experiment runner: dataset generation, cross-validated
//! training, the full ablation table, gradient checks and embedding export.
//!
//! Every run writes `manifest.json` into its output directory. Passing that
//! manifest back through `--config` reruns the same experiment.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use foaa_core::exec::{with_thread_limit, Executor};
use foaa_core::model::Arch;
use foaa_core::tape::OpClass;

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::error::{CliError, EXIT_OK};

pub const THREADS_ENV: &str = "FOAA_THREADS";

#[derive(Debug, Parser)]
#[command(name = "foaa", version, about = "Flattened outer arithmetic attention experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-modality dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        /// Class-0 probability; draws the imbalanced variant.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Cross-validate one arch row and save its parameters.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Cross-validate every arch row under identical folds and seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Finite-difference check of every layer type.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = foaa_core::gradsuite::DEFAULT_INSTANCES)]
        instances: usize,
        /// Test fixture: corrupt the adjoint of one op class.
        #[arg(long, hide = true, value_parser = parse_op_class)]
        corrupt_adjoint: Option<OpClass>,
    },
    /// Write the classifier-facing representation of every sample.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        /// Directory written by `train` (params/<arch>/fold_<k>).
        #[arg(long)]
        params: Option<PathBuf>,
        /// Dataset directory written by `gen-data`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config or a previous run's manifest.json.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Arch row; `ablate` accepts a comma-separated subset.
    #[arg(long, value_delimiter = ',', value_parser = parse_arch)]
    pub arch: Vec<Arch>,
}

#[derive(Debug, Args)]
pub struct RunFlags {
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Embedding width.
    #[arg(long)]
    pub m: Option<usize>,
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    s.parse::<Arch>().map_err(|e| e.to_string())
}

fn parse_op_class(s: &str) -> Result<OpClass, String> {
    OpClass::parse(s).ok_or_else(|| format!("unknown op class '{s}'"))
}

fn base_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(folds) = common.folds {
        cfg.cv.folds = folds;
    }
    Ok(cfg)
}

fn single_arch(common: &Common, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
    match common.arch.as_slice() {
        [] => Ok(()),
        [a] => {
            cfg.arch = *a;
            Ok(())
        }
        _ => Err(CliError::Usage("this command takes a single --arch".into())),
    }
}

fn training_overrides(common: &Common, run: &RunFlags, cfg: &mut ExperimentConfig) {
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.cv.split_seed = seed;
    }
    if let Some(dir) = &run.data {
        cfg.dataset = DatasetSpec::Files { dir: dir.clone() };
    }
    if let Some(e) = run.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = run.lr {
        cfg.train.lr = lr;
    }
    if let Some(m) = run.m {
        cfg.model.m = m;
    }
}

/// Input paths are recorded absolute so a manifest reruns from any directory.
fn absolute_inputs(cfg: &mut ExperimentConfig) -> Result<(), CliError> {
    if let DatasetSpec::Files { dir } = &mut cfg.dataset {
        *dir = std::path::absolute(&*dir).map_err(|e| CliError::io(dir, e))?;
    }
    if let Some(p) = &mut cfg.params {
        *p = std::path::absolute(&*p).map_err(|e| CliError::io(p, e))?;
    }
    Ok(())
}

fn thread_limit() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

/// Executes one parsed command.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    let threads = thread_limit()?;
    let exec = Executor::default();
    match cli.command {
        Command::GenData { common, n, noise, ratio } => {
            let mut cfg = base_config(&common)?;
            let DatasetSpec::Generate(spec) = &mut cfg.dataset else {
                return Err(CliError::Usage("gen-data needs a generated dataset spec".into()));
            };
            if let Some(seed) = common.seed {
                spec.generator.seed = seed;
            }
            if let Some(n) = n {
                spec.generator.n = n;
            }
            if let Some(noise) = noise {
                spec.generator.noise = noise;
            }
            if ratio.is_some() {
                spec.ratio = ratio;
            }
            commands::gen_data(&cfg)?;
        }
        Command::Train { common, run } => {
            let mut cfg = base_config(&common)?;
            single_arch(&common, &mut cfg)?;
            training_overrides(&common, &run, &mut cfg);
            absolute_inputs(&mut cfg)?;
            with_thread_limit(threads, || commands::train(&cfg, exec))?;
        }
        Command::Ablate { common, run } => {
            let mut cfg = base_config(&common)?;
            if !common.arch.is_empty() {
                cfg.archs = Some(common.arch.clone());
            }
            training_overrides(&common, &run, &mut cfg);
            absolute_inputs(&mut cfg)?;
            with_thread_limit(threads, || commands::ablate(&cfg, exec))?;
        }
        Command::Gradcheck {
            common,
            instances,
            corrupt_adjoint,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(seed) = common.seed {
                cfg.train.seed = seed;
            }
            commands::gradcheck(&cfg, instances, corrupt_adjoint)?;
        }
        Command::ExportEmbeddings { common, params, data } => {
            let mut cfg = base_config(&common)?;
            if let Some(p) = params {
                cfg.params = Some(p);
            }
            if let Some(dir) = data {
                cfg.dataset = DatasetSpec::Files { dir };
            }
            let arch = match common.arch.as_slice() {
                [] => None,
                [a] => Some(*a),
                _ => return Err(CliError::Usage("this command takes a single --arch".into())),
            };
            if let Some(a) = arch {
                cfg.arch = a;
            }
            absolute_inputs(&mut cfg)?;
            commands::export_embeddings(&cfg, arch)?;
        }
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("foaa: {e}");
            e.exit_code()
        }
    }
}
