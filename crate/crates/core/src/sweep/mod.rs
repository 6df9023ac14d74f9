//! The transformation-pair grid: every ordered pair `(first, second)` of
//! transform kinds is used as a two-stage pretraining pipeline, evaluated
//! `runs_per_cell` times with independent seeds.
//!
//! Each run is a pure function of `(split, config, i, j, r)`, so results do
//! not depend on how runs are scheduled across workers. With a store
//! directory every finished run is written to disk immediately and skipped
//! on the next invocation.

mod render;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

use crate::augment::{TransformKind, TransformPipeline};
use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::train::{evaluate, pretrain_simclr, unlabeled, EvalConfig, PretrainConfig, Protocol};

pub use render::{render_csv, render_svg, write_report, ReportFormat};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Axis values; the grid is `kinds × kinds`.
    pub kinds: Vec<TransformKind>,
    pub runs_per_cell: usize,
    pub pretrain: PretrainConfig,
    /// Its `protocol` selects linear or fine-tuned evaluation.
    pub eval: EvalConfig,
    pub base_seed: u64,
    /// Worker cap; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl SweepConfig {
    pub fn new(pretrain: PretrainConfig, eval: EvalConfig, base_seed: u64) -> Self {
        SweepConfig {
            kinds: TransformKind::ALL.to_vec(),
            runs_per_cell: 5,
            pretrain,
            eval,
            base_seed,
            jobs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::Parameter("sweep grid has no kinds".into()));
        }
        let mut seen = self.kinds.clone();
        seen.sort_by_key(|k| k.index());
        seen.dedup();
        if seen.len() != self.kinds.len() {
            return Err(Error::Parameter("sweep grid lists a kind twice".into()));
        }
        if self.runs_per_cell == 0 {
            return Err(Error::Parameter("runs_per_cell must be at least 1".into()));
        }
        if self.eval.protocol == Protocol::Supervised {
            return Err(Error::Parameter("sweep evaluates with linear or finetune only".into()));
        }
        self.pretrain.validate()?;
        self.eval.validate()
    }

    pub fn planned_runs(&self) -> usize {
        self.kinds.len() * self.kinds.len() * self.runs_per_cell
    }

    /// Seed of run `r` in cell `(first, second)`; depends on kind identity,
    /// not on grid position, so sub-grids reproduce full-grid runs.
    pub fn run_seed(&self, first: TransformKind, second: TransformKind, run: usize) -> u64 {
        derive_seed(
            self.base_seed,
            &[first.index() as u64, second.index() as u64, run as u64],
        )
    }

    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("kinds".into(), crate::augment::format_stages(&self.kinds));
        m.insert("runs_per_cell".into(), self.runs_per_cell.to_string());
        m.insert("base_seed".into(), self.base_seed.to_string());
        for (k, v) in self.pretrain.echo() {
            if k != "pipeline" && k != "pipeline_seed" {
                m.insert(format!("pretrain.{k}"), v);
            }
        }
        for (k, v) in self.eval.echo() {
            m.insert(format!("eval.{k}"), v);
        }
        m
    }
}

/// Outcome of one run of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub first: TransformKind,
    pub second: TransformKind,
    pub run: usize,
    pub seed: u64,
    pub outcome: std::result::Result<f64, String>,
    /// Unix seconds at completion.
    pub finished_at: u64,
}

impl RunResult {
    fn file_name(first: TransformKind, second: TransformKind, run: usize) -> String {
        format!("{first}-{second}-r{run}.result")
    }

    fn to_text(&self) -> String {
        let status = match &self.outcome {
            Ok(f1) => format!("status=ok\nf1={f1}\n"),
            Err(e) => format!("status=failed\nerror={}\n", e.replace('\n', " ")),
        };
        format!(
            "first={}\nsecond={}\nrun={}\nseed={}\nfinished_at={}\n{status}",
            self.first, self.second, self.run, self.seed, self.finished_at
        )
    }

    fn parse(text: &str) -> Result<Self> {
        let kv: BTreeMap<&str, &str> = text.lines().filter_map(|l| l.split_once('=')).collect();
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::Parse(format!("run result missing `{k}`")))
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?.parse().map_err(|_| Error::Parse(format!("bad `{k}` in run result")))
        };
        let outcome = match get("status")? {
            "ok" => Ok(get("f1")?
                .parse()
                .map_err(|_| Error::Parse("bad f1 in run result".into()))?),
            _ => Err(get("error").unwrap_or("unknown").to_string()),
        };
        Ok(RunResult {
            first: get("first")?.parse()?,
            second: get("second")?.parse()?,
            run: num("run")? as usize,
            seed: num("seed")?,
            outcome,
            finished_at: num("finished_at")?,
        })
    }
}

/// Aggregated scores of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub first: TransformKind,
    pub second: TransformKind,
    pub runs: Vec<RunResult>,
}

impl CellResult {
    pub fn scores(&self) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.outcome.as_ref().ok().copied()).collect()
    }

    pub fn failed(&self) -> bool {
        self.runs.iter().any(|r| r.outcome.is_err())
    }

    /// Both stages are the identity, so the two views coincide.
    pub fn degenerate(&self) -> bool {
        self.first == TransformKind::Identity && self.second == TransformKind::Identity
    }

    /// `None` when any run failed.
    pub fn mean(&self) -> Option<f64> {
        if self.failed() || self.runs.is_empty() {
            return None;
        }
        let s = self.scores();
        Some(s.iter().sum::<f64>() / s.len() as f64)
    }

    /// Sample standard deviation; 0 for a single run.
    pub fn std(&self) -> Option<f64> {
        let m = self.mean()?;
        let s = self.scores();
        if s.len() < 2 {
            return Some(0.0);
        }
        Some((s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (s.len() - 1) as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub kinds: Vec<TransformKind>,
    pub runs_per_cell: usize,
    pub protocol: Protocol,
    /// Row-major over `kinds × kinds`.
    pub cells: Vec<CellResult>,
    pub config: BTreeMap<String, String>,
    pub started_at: u64,
    pub finished_at: u64,
}

impl SweepReport {
    pub fn cell(&self, row: usize, col: usize) -> &CellResult {
        &self.cells[row * self.kinds.len() + col]
    }

    /// Mean of the row's available cell means.
    pub fn row_average(&self, row: usize) -> Option<f64> {
        let means: Vec<f64> = (0..self.kinds.len())
            .filter_map(|c| self.cell(row, c).mean())
            .collect();
        (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
    }

    /// Max − min over available cell means.
    pub fn spread(&self) -> Option<f64> {
        let means: Vec<f64> = self.cells.iter().filter_map(CellResult::mean).collect();
        let max = means.iter().copied().reduce(f64::max)?;
        let min = means.iter().copied().reduce(f64::min)?;
        Some(max - min)
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.failed()).count()
    }

    /// Identical scores and configuration, ignoring timestamps.
    pub fn same_scores(&self, other: &SweepReport) -> bool {
        type Key = (TransformKind, TransformKind, u64, std::result::Result<u64, String>);
        let strip = |r: &SweepReport| -> Vec<Key> {
            r.cells
                .iter()
                .flat_map(|c| c.runs.iter())
                .map(|x| (x.first, x.second, x.seed, x.outcome.clone().map(f64::to_bits)))
                .collect()
        };
        self.kinds == other.kinds && self.config == other.config && strip(self) == strip(other)
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn run_one(
    split: &DatasetSplit,
    pretrain_x: &crate::numcore::Tensor<f32>,
    config: &SweepConfig,
    first: TransformKind,
    second: TransformKind,
    run: usize,
) -> RunResult {
    let seed = config.run_seed(first, second, run);
    let outcome = (|| -> Result<f64> {
        let pipeline = TransformPipeline::new(vec![first, second], seed)
            .with_params(config.pretrain.pipeline.params);
        let pre = PretrainConfig {
            pipeline,
            seed,
            ..config.pretrain.clone()
        };
        let rec = pretrain_simclr(pretrain_x, &pre)?;
        let eval = EvalConfig {
            seed,
            ..config.eval.clone()
        };
        Ok(evaluate(&rec.params, split, &eval)?.f1)
    })();
    if let Err(e) = &outcome {
        log::warn!("cell {first},{second} run {run} failed: {e}");
    }
    RunResult {
        first,
        second,
        run,
        seed,
        outcome: outcome.map_err(|e| e.to_string()),
        finished_at: now(),
    }
}

/// Runs every cell of the grid. With `store`, finished runs are persisted
/// there one file each; with `resume` as well, successful runs already
/// present are reused instead of retrained.
pub fn run_sweep(
    split: &DatasetSplit,
    config: &SweepConfig,
    store: Option<&Path>,
    resume: bool,
) -> Result<SweepReport> {
    config.validate()?;
    let started_at = now();
    let pretrain_x = unlabeled(&split.train)?;
    if let Some(dir) = store {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tasks: Vec<(TransformKind, TransformKind, usize)> = config
        .kinds
        .iter()
        .flat_map(|&a| config.kinds.iter().map(move |&b| (a, b)))
        .flat_map(|(a, b)| (0..config.runs_per_cell).map(move |r| (a, b, r)))
        .collect();

    let work = || -> Result<Vec<RunResult>> {
        tasks
            .par_iter()
            .map(|&(a, b, r)| {
                let path: Option<PathBuf> = store.map(|d| d.join(RunResult::file_name(a, b, r)));
                if let Some(p) = path.as_ref().filter(|p| resume && p.exists()) {
                    let prev = RunResult::parse(
                        &std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
                    )?;
                    if prev.outcome.is_ok() && prev.seed == config.run_seed(a, b, r) {
                        log::info!("resume: skipping {a},{b} run {r}");
                        return Ok(prev);
                    }
                }
                let res = run_one(split, &pretrain_x, config, a, b, r);
                if let Some(p) = &path {
                    std::fs::write(p, res.to_text()).map_err(|e| Error::io(p, e))?;
                }
                Ok(res)
            })
            .collect()
    };
    let results = match config.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::Parameter(format!("worker pool: {e}")))?
            .install(work)?,
        None => work()?,
    };

    let cells = results
        .chunks(config.runs_per_cell)
        .map(|runs| CellResult {
            first: runs[0].first,
            second: runs[0].second,
            runs: runs.to_vec(),
        })
        .collect();
    Ok(SweepReport {
        kinds: config.kinds.clone(),
        runs_per_cell: config.runs_per_cell,
        protocol: config.eval.protocol,
        cells,
        config: config.echo(),
        started_at,
        finished_at: now(),
    })
}
