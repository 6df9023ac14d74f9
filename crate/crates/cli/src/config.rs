//! Experiment configuration: a flat TOML file whose keys mirror the command
//! line flags, plus flag overrides.

use std::path::{Path, PathBuf};

use clhar::augment::{parse_stages, TransformKind, TransformParams, TransformPipeline};
use clhar::data::{AccelChannels, DEFAULT_TEST_SUBJECTS};
use clhar::model::ModelConfig;
use clhar::train::{EvalConfig, PretrainConfig, Protocol};
use clhar::{Error, Result};
use serde::Deserialize;

/// Every key, its default and meaning; printed by `--help` and `defaults`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("data", "\"synthetic\"", "`synthetic` or a MotionSense root directory"),
    ("synthetic_per_class", "100", "synthetic windows per class"),
    ("synthetic_classes", "3", "synthetic classes (at most 6)"),
    ("synthetic_seed", "0", "seed of the synthetic generator"),
    ("accel", "\"user\"", "MotionSense signal: `user` or `gravity+user`"),
    ("standardize", "false", "standardise channels with training-split statistics"),
    ("test_subjects", "[20, 21, 22, 23, 24]", "held-out subject ids"),
    ("pipeline", "\"rotate\"", "comma-separated transforms for pretraining"),
    ("protocol", "\"finetune\"", "`linear`, `finetune` or `supervised`"),
    ("epochs", "200", "pretraining epochs"),
    ("batch", "512", "pretraining batch size"),
    ("lr", "0.1", "base learning rate of cosine-decayed SGD pretraining"),
    ("temperature", "0.1", "NT-Xent temperature"),
    ("eval_epochs", "50", "evaluation epochs"),
    ("eval_batch", "512", "evaluation batch size"),
    ("eval_lr", "0.03 linear, 0.001 otherwise", "evaluation learning rate"),
    ("noise_sigma", "0.05", "standard deviation of additive noise"),
    ("scale_sigma", "0.1", "standard deviation of per-channel scaling"),
    ("permute_segments", "4", "segments for permutation"),
    ("warp_knots", "4", "interior knots of the time-warp curve"),
    ("warp_sigma", "0.2", "standard deviation of time-warp knot speeds"),
    ("seed", "0", "base seed of the experiment"),
    ("out", "$CLHAR_OUT or \"runs\"", "output directory"),
    ("runs_per_cell", "5", "sweep repetitions per grid cell"),
    ("grid", "\"all\"", "sweep axis: `all` or comma-separated transforms"),
    ("jobs", "all cores", "sweep worker cap"),
];

pub fn keys_help() -> String {
    let mut s = String::from("Config file keys (TOML, flat; flags override):\n");
    for (k, d, m) in KEYS {
        s.push_str(&format!("  {k:<20} {m} [default: {d}]\n"));
    }
    s
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: String,
    pub synthetic_per_class: usize,
    pub synthetic_classes: usize,
    pub synthetic_seed: u64,
    pub accel: String,
    pub standardize: bool,
    pub test_subjects: Vec<u32>,
    pub pipeline: String,
    pub protocol: String,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub temperature: f64,
    pub eval_epochs: usize,
    pub eval_batch: usize,
    pub eval_lr: Option<f64>,
    pub noise_sigma: f64,
    pub scale_sigma: f64,
    pub permute_segments: usize,
    pub warp_knots: usize,
    pub warp_sigma: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub runs_per_cell: usize,
    pub grid: String,
    pub jobs: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let pre = PretrainConfig::default();
        let tp = TransformParams::default();
        let ev = EvalConfig::new(Protocol::FineTune, 0);
        ExperimentConfig {
            data: "synthetic".into(),
            synthetic_per_class: 100,
            synthetic_classes: 3,
            synthetic_seed: 0,
            accel: "user".into(),
            standardize: false,
            test_subjects: DEFAULT_TEST_SUBJECTS.to_vec(),
            pipeline: "rotate".into(),
            protocol: "finetune".into(),
            epochs: pre.epochs,
            batch: pre.batch_size,
            lr: pre.base_lr,
            temperature: pre.temperature,
            eval_epochs: ev.epochs,
            eval_batch: ev.batch_size,
            eval_lr: None,
            noise_sigma: tp.noise_sigma,
            scale_sigma: tp.scale_sigma,
            permute_segments: tp.permute_segments,
            warp_knots: tp.warp_knots,
            warp_sigma: tp.warp_sigma,
            seed: 0,
            out: None,
            runs_per_cell: 5,
            grid: "all".into(),
            jobs: None,
        }
    }
}

pub enum DataSource {
    Synthetic { per_class: usize, classes: usize, seed: u64 },
    MotionSense { root: PathBuf, channels: AccelChannels, standardize: bool },
}

/// Typed view of an [`ExperimentConfig`].
pub struct Resolved {
    pub source: DataSource,
    pub test_subjects: Vec<u32>,
    pub protocol: Protocol,
    pub pretrain: PretrainConfig,
    pub eval: EvalConfig,
    pub out: PathBuf,
    pub grid: Vec<TransformKind>,
    pub runs_per_cell: usize,
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {}", e.message())))
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let protocol: Protocol = self.protocol.parse()?;
        let params = TransformParams {
            noise_sigma: self.noise_sigma,
            scale_sigma: self.scale_sigma,
            permute_segments: self.permute_segments,
            warp_knots: self.warp_knots,
            warp_sigma: self.warp_sigma,
        };
        params.validate()?;
        let pipeline = TransformPipeline::parse(&self.pipeline, self.seed)?.with_params(params);
        let pretrain = PretrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            base_lr: self.lr,
            temperature: self.temperature,
            pipeline,
            model: ModelConfig::default(),
            seed: self.seed,
        };
        let mut eval = EvalConfig::new(protocol, self.seed);
        eval.epochs = self.eval_epochs;
        eval.batch_size = self.eval_batch;
        if let Some(lr) = self.eval_lr {
            eval.lr = lr;
        }
        if protocol != Protocol::Supervised {
            pretrain.validate()?;
        }
        eval.validate()?;
        let source = if self.data == "synthetic" {
            DataSource::Synthetic {
                per_class: self.synthetic_per_class,
                classes: self.synthetic_classes,
                seed: self.synthetic_seed,
            }
        } else {
            let channels = match self.accel.as_str() {
                "user" => AccelChannels::UserAcceleration,
                "gravity+user" => AccelChannels::GravityPlusUser,
                other => return Err(Error::Parse(format!("unknown accel signal `{other}`"))),
            };
            DataSource::MotionSense {
                root: PathBuf::from(&self.data),
                channels,
                standardize: self.standardize,
            }
        };
        let grid = if self.grid.trim() == "all" {
            TransformKind::ALL.to_vec()
        } else {
            parse_stages(&self.grid)?
        };
        if self.runs_per_cell == 0 {
            return Err(Error::Parameter("runs_per_cell must be at least 1".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Parameter("jobs must be at least 1".into()));
        }
        let out = self
            .out
            .clone()
            .or_else(|| std::env::var_os("CLHAR_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"));
        Ok(Resolved {
            source,
            test_subjects: self.test_subjects.clone(),
            protocol,
            pretrain,
            eval,
            out,
            grid,
            runs_per_cell: self.runs_per_cell,
            jobs: self.jobs,
        })
    }

    /// Commented TOML with every key at its default.
    pub fn defaults_toml() -> String {
        let mut s = String::new();
        for (k, d, m) in KEYS {
            s.push_str(&format!("# {m}\n"));
            if d.starts_with('"') || d.starts_with('[') || d.parse::<f64>().is_ok() || *d == "false" {
                s.push_str(&format!("{k} = {d}\n\n"));
            } else {
                s.push_str(&format!("# {k} = ({d})\n\n"));
            }
        }
        s
    }
}
