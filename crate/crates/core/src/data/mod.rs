//! Sensor windows, MotionSense ingestion, windowing, subject-level splits and
//! synthetic fixtures.

mod cache;
mod motionsense;
mod synth;
mod window;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub use cache::{load_windows, save_windows};
pub use motionsense::{load_motionsense, load_motionsense_with, AccelChannels, RawSeries};
pub use synth::{synth_dataset, SAMPLE_RATE_HZ};
pub use window::{make_windows, window_count, windows_from_series, Standardizer};

/// Timesteps per window.
pub const WINDOW_LEN: usize = 400;
/// Fractional overlap between consecutive windows.
pub const WINDOW_OVERLAP: f64 = 0.5;
/// Subjects held out for testing unless overridden.
pub const DEFAULT_TEST_SUBJECTS: [u32; 5] = [20, 21, 22, 23, 24];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActivityLabel {
    Downstairs,
    Upstairs,
    Walking,
    Jogging,
    Sitting,
    Standing,
}

impl ActivityLabel {
    pub const ALL: [ActivityLabel; 6] = [
        ActivityLabel::Downstairs,
        ActivityLabel::Upstairs,
        ActivityLabel::Walking,
        ActivityLabel::Jogging,
        ActivityLabel::Sitting,
        ActivityLabel::Standing,
    ];
    pub const COUNT: usize = 6;

    /// MotionSense trial-folder prefix.
    pub fn prefix(self) -> &'static str {
        match self {
            ActivityLabel::Downstairs => "dws",
            ActivityLabel::Upstairs => "ups",
            ActivityLabel::Walking => "wlk",
            ActivityLabel::Jogging => "jog",
            ActivityLabel::Sitting => "sit",
            ActivityLabel::Standing => "std",
        }
    }

    pub fn from_prefix(prefix: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.prefix() == prefix)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::LabelOutOfRange {
            label: i,
            classes: Self::COUNT,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivityLabel::Downstairs => "downstairs",
            ActivityLabel::Upstairs => "upstairs",
            ActivityLabel::Walking => "walking",
            ActivityLabel::Jogging => "jogging",
            ActivityLabel::Sitting => "sitting",
            ActivityLabel::Standing => "standing",
        }
    }
}

impl fmt::Display for ActivityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivityLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s || l.prefix() == s)
            .ok_or_else(|| Error::Parse(format!("unknown activity `{s}`")))
    }
}

/// One fixed-length tri-axial segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorWindow {
    /// `[time, 3]`, acceleration in g.
    pub values: Tensor<f32>,
    pub subject_id: u32,
    pub label: ActivityLabel,
    pub trial_id: u32,
    /// Offset of the first timestep within its source series.
    pub start: usize,
}

/// Train/test partition by subject.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<SensorWindow>,
    pub test: Vec<SensorWindow>,
    pub train_subjects: BTreeSet<u32>,
    pub test_subjects: BTreeSet<u32>,
}

/// Partitions `windows` so that every subject in `test_subjects` is held out.
pub fn split_by_subject(windows: Vec<SensorWindow>, test_subjects: &[u32]) -> Result<DatasetSplit> {
    let observed: BTreeSet<u32> = windows.iter().map(|w| w.subject_id).collect();
    let test_set: BTreeSet<u32> = test_subjects.iter().copied().collect();
    if let Some(unknown) = test_set.iter().find(|s| !observed.contains(s)) {
        return Err(Error::Data(format!("test subject {unknown} has no windows")));
    }
    let (test, train): (Vec<_>, Vec<_>) = windows
        .into_iter()
        .partition(|w| test_set.contains(&w.subject_id));
    if train.is_empty() {
        return Err(Error::Data("split leaves no training windows".into()));
    }
    if test.is_empty() {
        return Err(Error::Data("split leaves no test windows".into()));
    }
    Ok(DatasetSplit {
        train_subjects: observed.difference(&test_set).copied().collect(),
        test_subjects: test_set,
        train,
        test,
    })
}

/// Loads MotionSense, cuts 400-step windows with 50% overlap and holds out
/// `test_subjects`. With `standardize`, every channel is shifted and scaled
/// by statistics of the training side only.
pub fn motionsense_split(
    root: &std::path::Path,
    channels: AccelChannels,
    test_subjects: &[u32],
    standardize: bool,
) -> Result<DatasetSplit> {
    let series = load_motionsense_with(root, channels)?;
    let windows = windows_from_series(&series, WINDOW_LEN, WINDOW_OVERLAP)?;
    let mut split = split_by_subject(windows, test_subjects)?;
    if standardize {
        let s = Standardizer::fit(&split.train)?;
        s.apply(&mut split.train);
        s.apply(&mut split.test);
    }
    Ok(split)
}

/// Stacks window values into `[B, L, C]`.
pub fn stack_windows(windows: &[SensorWindow], indices: &[usize]) -> Result<Tensor<f32>> {
    let items: Vec<&Tensor<f32>> = indices.iter().map(|&i| &windows[i].values).collect();
    Tensor::stack(&items)
}

pub fn labels_of(windows: &[SensorWindow], indices: &[usize]) -> Vec<usize> {
    indices.iter().map(|&i| windows[i].label.index()).collect()
}
