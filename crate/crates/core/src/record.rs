//! Training records and their key/value text format.
//!
//! ```text
//! # clhar train record
//! stage=pretrain
//! seed=7
//! duration_secs=1.25
//! f1=0.912
//! config.epochs=20
//! loss 0 2.3025
//! loss 1 1.9871
//! ```
//!
//! Model parameters are not part of the text; they travel as a checkpoint
//! container next to it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::ModelParams;

const HEADER: &str = "# clhar train record";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    /// `pretrain`, `linear`, `finetune` or `supervised`.
    pub stage: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub epoch_losses: Vec<f64>,
    pub duration_secs: f64,
    /// Weighted F1 on the test split, for evaluation stages.
    pub f1: Option<f64>,
    pub params: ModelParams<f32>,
}

/// Everything in a record except the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSummary {
    pub stage: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub epoch_losses: Vec<f64>,
    pub duration_secs: f64,
    pub f1: Option<f64>,
}

impl TrainRecord {
    pub fn summary(&self) -> RecordSummary {
        RecordSummary {
            stage: self.stage.clone(),
            seed: self.seed,
            config: self.config.clone(),
            epoch_losses: self.epoch_losses.clone(),
            duration_secs: self.duration_secs,
            f1: self.f1,
        }
    }

    /// Equal up to wall-clock duration.
    pub fn same_outcome(&self, other: &TrainRecord) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.stage == other.stage
            && self.seed == other.seed
            && self.config == other.config
            && bits(&self.epoch_losses) == bits(&other.epoch_losses)
            && self.f1.map(f64::to_bits) == other.f1.map(f64::to_bits)
            && self.params == other.params
    }

    pub fn to_text(&self) -> String {
        self.summary().to_text()
    }

    /// Writes `<stem>.record` and the `<stem>.manifest`/`.bin` checkpoint
    /// into `dir`, returning the record path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{stem}.record"));
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        self.params.save(&dir.join(format!("{stem}.manifest")))?;
        Ok(path)
    }
}

impl RecordSummary {
    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER}\nstage={}\nseed={}\n", self.stage, self.seed);
        let _ = writeln!(s, "duration_secs={}", self.duration_secs);
        if let Some(f1) = self.f1 {
            let _ = writeln!(s, "f1={f1}");
        }
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k}={v}");
        }
        for (i, l) in self.epoch_losses.iter().enumerate() {
            let _ = writeln!(s, "loss {i} {l}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::Parse("missing record header".into()));
        }
        let bad = |l: &str| Error::Parse(format!("bad record line `{l}`"));
        let num = |v: &str, l: &str| v.parse::<f64>().map_err(|_| bad(l));
        let mut out = RecordSummary {
            stage: String::new(),
            seed: 0,
            config: BTreeMap::new(),
            epoch_losses: Vec::new(),
            duration_secs: 0.0,
            f1: None,
        };
        for l in lines.filter(|l| !l.trim().is_empty()) {
            if let Some(rest) = l.strip_prefix("loss ") {
                let (i, v) = rest.split_once(' ').ok_or_else(|| bad(l))?;
                if i.parse::<usize>().ok() != Some(out.epoch_losses.len()) {
                    return Err(bad(l));
                }
                out.epoch_losses.push(num(v, l)?);
                continue;
            }
            let (k, v) = l.split_once('=').ok_or_else(|| bad(l))?;
            match k {
                "stage" => out.stage = v.to_string(),
                "seed" => out.seed = v.parse().map_err(|_| bad(l))?,
                "duration_secs" => out.duration_secs = num(v, l)?,
                "f1" => out.f1 = Some(num(v, l)?),
                _ => match k.strip_prefix("config.") {
                    Some(ck) => {
                        out.config.insert(ck.to_string(), v.to_string());
                    }
                    None => return Err(bad(l)),
                },
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// `<pipeline>_<protocol>_seed<seed>` with pipeline stages joined by `-`.
pub fn file_stem(pipeline_spec: &str, protocol: &str, seed: u64) -> String {
    let p: String = pipeline_spec
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect();
    format!("{p}_{protocol}_seed{seed}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stems() {
        assert_eq!(file_stem("noise,scale", "linear", 7), "noise-scale_linear_seed7");
    }

    #[test]
    fn rejects_garbage() {
        assert!(RecordSummary::parse("stage=x").is_err());
        assert!(RecordSummary::parse(&format!("{HEADER}\nloss 1 0.5")).is_err());
        assert!(RecordSummary::parse(&format!("{HEADER}\nwhat=1")).is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip(
            losses in prop::collection::vec(-1e6f64..1e6, 0..30),
            seed in any::<u64>(),
            f1 in prop::option::of(0.0f64..=1.0),
            dur in 0.0f64..1e4,
        ) {
            let r = RecordSummary {
                stage: "linear".into(),
                seed,
                config: BTreeMap::from([("epochs".into(), "50".into()), ("pipeline".into(), "noise,scale".into())]),
                epoch_losses: losses,
                duration_secs: dur,
                f1,
            };
            prop_assert_eq!(RecordSummary::parse(&r.to_text()).unwrap(), r);
        }
    }
}
