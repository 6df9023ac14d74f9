//! `clhar`: contrastive pretraining experiments for accelerometer activity
//! recognition.
//!
//! Exit codes: 0 success, 1 gradient check failure or I/O error, 2 bad
//! configuration, 3 data error, 4 training divergence.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clhar::Error;

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "clhar", version, about = "Contrastive self-supervised pretraining for accelerometer activity recognition")]
struct Cli {
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain and evaluate one configuration.
    #[command(after_long_help = config::keys_help())]
    Run(Overrides),
    /// Pretrain and evaluate every ordered pair of transforms.
    #[command(after_long_help = config::keys_help())]
    Sweep(SweepArgs),
    /// Check every backward kernel against finite differences in f64.
    Gradcheck(GradcheckArgs),
    /// Print a config file with every key at its default.
    Defaults,
}

#[derive(Args, Default)]
struct Overrides {
    /// TOML config file; flags take precedence over its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `synthetic` or a MotionSense root directory.
    #[arg(long)]
    data: Option<String>,
    /// Comma-separated pretraining transforms, e.g. `rotate` or `shuffle,permute`.
    #[arg(long)]
    pipeline: Option<String>,
    /// linear, finetune or supervised.
    #[arg(long)]
    protocol: Option<String>,
    /// Pretraining epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Pretraining batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Base learning rate of pretraining.
    #[arg(long)]
    lr: Option<f64>,
    /// NT-Xent temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Evaluation epochs.
    #[arg(long)]
    eval_epochs: Option<usize>,
    /// Evaluation batch size.
    #[arg(long)]
    eval_batch: Option<usize>,
    /// Evaluation learning rate.
    #[arg(long)]
    eval_lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "CLHAR_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Overrides,
    /// Axis of the grid: `all` or comma-separated transforms.
    #[arg(long)]
    grid: Option<String>,
    /// Repetitions per cell.
    #[arg(long)]
    runs: Option<usize>,
    /// Worker cap.
    #[arg(long)]
    jobs: Option<usize>,
    /// Reuse finished runs from a previous invocation.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random instances per kernel.
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Perturb the analytic gradient of this kernel by 10%.
    #[arg(long, value_name = "KERNEL")]
    inject_fault: Option<String>,
}

impl Overrides {
    fn apply(&self) -> Result<ExperimentConfig, Error> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field { c.$field = v.clone(); }
            )*};
        }
        set!(data, pipeline, protocol, epochs, batch, lr, temperature, eval_epochs, eval_batch, seed);
        if self.eval_lr.is_some() {
            c.eval_lr = self.eval_lr;
        }
        if self.out.is_some() {
            c.out = self.out.clone();
        }
        Ok(c)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parameter(_) | Error::Parse(_) => 2,
        Error::DatasetNotFound(_) | Error::Data(_) | Error::LabelOutOfRange { .. } => 3,
        Error::Diverged(_) | Error::NonFinite(_) | Error::DegenerateEmbedding { .. } => 4,
        Error::Dimension { .. } | Error::Io { .. } => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Run(o) => o.apply().and_then(|c| commands::run(&c)),
        Command::Sweep(s) => s.common.apply().and_then(|mut c| {
            if let Some(g) = s.grid {
                c.grid = g;
            }
            if let Some(r) = s.runs {
                c.runs_per_cell = r;
            }
            if s.jobs.is_some() {
                c.jobs = s.jobs;
            }
            commands::sweep(&c, s.resume)
        }),
        Command::Gradcheck(g) => commands::gradcheck(g.instances, g.tolerance, g.inject_fault.as_deref()),
        Command::Defaults => {
            print!("{}", ExperimentConfig::defaults_toml());
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
