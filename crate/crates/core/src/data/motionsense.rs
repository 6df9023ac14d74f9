//! MotionSense `A_DeviceMotion_data` reader.
//!
//! Layout: one folder per trial named `<activity>_<trial>` containing one
//! `sub_<id>.csv` per subject, with a header row naming the device-motion
//! columns.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::ActivityLabel;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

const SUBDIR: &str = "A_DeviceMotion_data";

/// Which acceleration signal to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccelChannels {
    /// `userAcceleration.{x,y,z}`.
    #[default]
    UserAcceleration,
    /// `gravity.* + userAcceleration.*`, i.e. the raw accelerometer reading.
    GravityPlusUser,
}

/// One continuous recording.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub subject_id: u32,
    pub trial_id: u32,
    pub label: ActivityLabel,
    /// `[T, 3]`, channels ordered x, y, z.
    pub values: Tensor<f32>,
}

pub fn load_motionsense(root: &Path) -> Result<Vec<RawSeries>> {
    load_motionsense_with(root, AccelChannels::default())
}

/// Reads every trial under `root` (or `root/A_DeviceMotion_data`).
pub fn load_motionsense_with(root: &Path, channels: AccelChannels) -> Result<Vec<RawSeries>> {
    let base = if root.join(SUBDIR).is_dir() {
        root.join(SUBDIR)
    } else {
        root.to_path_buf()
    };
    if !base.is_dir() {
        return Err(Error::DatasetNotFound(root.to_path_buf()));
    }
    let mut files: Vec<(PathBuf, u32, u32, ActivityLabel)> = Vec::new();
    for entry in read_dir(&base)? {
        if !entry.is_dir() {
            continue;
        }
        let name = file_name(&entry);
        if name.starts_with('.') {
            continue;
        }
        let (prefix, trial) = name
            .split_once('_')
            .ok_or_else(|| Error::Data(format!("unrecognised trial folder `{name}`")))?;
        let label = ActivityLabel::from_prefix(prefix)
            .ok_or_else(|| Error::Data(format!("unknown activity prefix `{prefix}` in `{name}`")))?;
        let trial: u32 = trial
            .parse()
            .map_err(|_| Error::Data(format!("bad trial number in `{name}`")))?;
        for f in read_dir(&entry)? {
            let fname = file_name(&f);
            let Some(id) = fname.strip_prefix("sub_").and_then(|s| s.strip_suffix(".csv")) else {
                continue;
            };
            let subject: u32 = id
                .parse()
                .map_err(|_| Error::Data(format!("bad subject file name `{fname}`")))?;
            files.push((f, subject, trial, label));
        }
    }
    if files.is_empty() {
        return Err(Error::DatasetNotFound(root.to_path_buf()));
    }
    let mut series: Vec<RawSeries> = files
        .par_iter()
        .map(|(path, subject, trial, label)| {
            Ok(RawSeries {
                subject_id: *subject,
                trial_id: *trial,
                label: *label,
                values: read_csv(path, channels)?,
            })
        })
        .collect::<Result<_>>()?;
    series.sort_by_key(|s| (s.subject_id, s.trial_id, s.label));
    Ok(series)
}

fn read_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(e.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_csv(path: &Path, channels: AccelChannels) -> Result<Tensor<f32>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data(format!("{}: missing column `{name}`", path.display())))
    };
    let user = [col("userAcceleration.x")?, col("userAcceleration.y")?, col("userAcceleration.z")?];
    let gravity = match channels {
        AccelChannels::UserAcceleration => None,
        AccelChannels::GravityPlusUser => Some([col("gravity.x")?, col("gravity.y")?, col("gravity.z")?]),
    };
    let mut data = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: row {}: {e}", path.display(), row + 1)))?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Data(format!("{}: row {}: unparseable value", path.display(), row + 1)))
        };
        for c in 0..3 {
            let mut v = field(user[c])?;
            if let Some(g) = gravity {
                v += field(g[c])?;
            }
            data.push(v as f32);
        }
    }
    let t = data.len() / 3;
    Tensor::from_vec(&[t, 3], data)
}
