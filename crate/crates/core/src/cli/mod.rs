//! The `cign` command line: synthesize data, run experiments, check
//! gradients and summarize runs.

pub mod config;
pub mod gradcheck;
pub mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::ExperimentConfig;

use crate::continual::{run_sequence, RunOutput};
use crate::data::{generate_synthetic, load_features, nearest_centroid_accuracy, save_features, FeatureDataset, Split};
use crate::error::Result;
use crate::fsio::write_atomic;
use crate::losses::DenominatorVariant;
use crate::model::{AssignmentMode, AttentionVariant};
use report::{CONFIG_FILE, LOG_FILE, MATRIX_FILE, METRICS_FILE};

#[derive(Debug, Parser)]
#[command(name = "cign", version, about = "Class-incremental grouping network for audio-visual classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic feature dataset.
    Synth {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Output directory for the manifest and payload.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train over the task sequence and write metrics.
    Run {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[arg(long, env = "CIGN_SEED", default_value_t = 0)]
        seed: u64,
        /// Use a deliberately broken backward rule; the check must fail.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Summarize a finished run directory.
    Report {
        run_dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AssignmentArg {
    Soft,
    Hard,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DenominatorArg {
    AsWritten,
    WithPositive,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AttentionArg {
    Literal,
    Projected,
}

/// Overrides applied on top of `--config` (or the defaults).
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// Flat JSON experiment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "CIGN_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub classes_per_task: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Stored pairs per class.
    #[arg(long)]
    pub buffer: Option<usize>,
    #[arg(long, value_enum)]
    pub assignment: Option<AssignmentArg>,
    #[arg(long)]
    pub disable_kl: bool,
    #[arg(long)]
    pub disable_ce_new: bool,
    #[arg(long)]
    pub disable_ctl: bool,
    #[arg(long)]
    pub disable_buffer: bool,
    #[arg(long, value_enum)]
    pub contrastive_denominator: Option<DenominatorArg>,
    #[arg(long, value_enum)]
    pub attention: Option<AttentionArg>,
    /// Precomputed feature directory instead of synthetic data.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Number of synthetic classes.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub patches: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
}

impl ExperimentArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident <- $arg:expr),* $(,)?) => {
                $(if let Some(v) = $arg { c.$field = v; })*
            };
        }
        set!(
            seed <- self.seed,
            tasks <- self.tasks,
            depth <- self.depth,
            tau <- self.tau,
            epochs <- self.epochs,
            learning_rate <- self.lr,
            batch_size <- self.batch_size,
            buffer_capacity <- self.buffer,
            num_classes <- self.classes,
            dim <- self.dim,
            patches <- self.patches,
            separation <- self.separation,
            sigma <- self.sigma,
            rho <- self.rho,
        );
        if self.classes_per_task.is_some() {
            c.classes_per_task = self.classes_per_task;
        }
        if self.dataset.is_some() {
            c.dataset = self.dataset.clone();
        }
        if let Some(a) = self.assignment {
            c.assignment = match a {
                AssignmentArg::Soft => AssignmentMode::Soft,
                AssignmentArg::Hard => AssignmentMode::Hard,
            };
        }
        if let Some(d) = self.contrastive_denominator {
            c.contrastive_denominator = match d {
                DenominatorArg::AsWritten => DenominatorVariant::AsWritten,
                DenominatorArg::WithPositive => DenominatorVariant::WithPositive,
            };
        }
        if let Some(a) = self.attention {
            c.attention = match a {
                AttentionArg::Literal => AttentionVariant::Literal,
                AttentionArg::Projected => AttentionVariant::Projected,
            };
        }
        c.disable_kl |= self.disable_kl;
        c.disable_ce_new |= self.disable_ce_new;
        c.disable_ctl |= self.disable_ctl;
        c.disable_buffer |= self.disable_buffer;
        c.validate()?;
        Ok(c)
    }
}

pub fn dataset_for(cfg: &ExperimentConfig) -> Result<FeatureDataset> {
    match &cfg.dataset {
        Some(dir) => load_features(dir),
        None => generate_synthetic(&cfg.synthetic()),
    }
}

/// Writes every run artifact into `out`.
pub fn write_run(out: &Path, cfg: &ExperimentConfig, run: &RunOutput) -> Result<()> {
    write_atomic(&out.join(CONFIG_FILE), &serde_json::to_vec_pretty(cfg)?)?;
    write_atomic(&out.join(MATRIX_FILE), report::matrices_csv(&run.matrices).as_bytes())?;
    write_atomic(&out.join(LOG_FILE), run.log_jsonl()?.as_bytes())?;
    write_atomic(&out.join(METRICS_FILE), &serde_json::to_vec_pretty(&run.report)?)
}

pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let ds = generate_synthetic(&cfg.synthetic())?;
    let manifest = save_features(&ds, out)?;
    let mut s = format!(
        "dataset {}\nclasses {}  dim {}  patches {}\ntrain {}  val {}  test {}\ncrc32 {:08x}\n",
        ds.name,
        ds.num_classes,
        ds.dim,
        ds.patches,
        ds.count(Split::Train),
        ds.count(Split::Val),
        ds.count(Split::Test),
        manifest.crc32
    );
    if ds.count(Split::Test) > 0 && ds.count(Split::Train) > 0 {
        s.push_str(&format!(
            "nearest-centroid test accuracy {:.4}\n",
            nearest_centroid_accuracy(&ds, Split::Test)?
        ));
    }
    Ok(s)
}

pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let ds = dataset_for(cfg)?;
    let run = run_sequence(&ds, &cfg.train())?;
    write_run(out, cfg, &run)?;
    Ok(report::render_table(&run.report))
}

fn execute(cli: Cli) -> Result<(String, bool)> {
    match cli.command {
        Command::Synth { experiment, out } => Ok((cmd_synth(&experiment.resolve()?, &out)?, true)),
        Command::Run { experiment, out } => Ok((cmd_run(&experiment.resolve()?, &out)?, true)),
        Command::Gradcheck { seed, inject_fault } => {
            let r = gradcheck::run_suite(seed, inject_fault)?;
            Ok((r.render(), r.passed()))
        }
        Command::Report { run_dir } => Ok((report::report(&run_dir)?, true)),
    }
}

/// Parses the process arguments and runs one subcommand.
pub fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok((text, ok)) => {
            let _ = std::io::stdout().write_all(text.as_bytes());
            if ok {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: gradient check exceeded tolerance {:e}", gradcheck::TOLERANCE);
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
