//! Stochastic signal transformations and their composition into the view
//! generator used for contrastive training.

mod pipeline;
pub mod transforms;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use pipeline::{two_views, two_views_indexed, TransformPipeline};
pub use transforms::{
    t_channel_shuffle, t_invert, t_noise, t_permute, t_rotate, t_scale, t_time_reverse,
    t_time_warp,
};

/// One stage of a transformation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransformKind {
    Identity,
    Noise,
    Scale,
    Rotate,
    Invert,
    TimeReverse,
    Permute,
    TimeWarp,
    ChannelShuffle,
}

impl TransformKind {
    pub const ALL: [TransformKind; 9] = [
        TransformKind::Identity,
        TransformKind::Noise,
        TransformKind::Scale,
        TransformKind::Rotate,
        TransformKind::Invert,
        TransformKind::TimeReverse,
        TransformKind::Permute,
        TransformKind::TimeWarp,
        TransformKind::ChannelShuffle,
    ];

    /// Name used in pipeline specification strings.
    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Identity => "identity",
            TransformKind::Noise => "noise",
            TransformKind::Scale => "scale",
            TransformKind::Rotate => "rotate",
            TransformKind::Invert => "invert",
            TransformKind::TimeReverse => "reverse",
            TransformKind::Permute => "permute",
            TransformKind::TimeWarp => "warp",
            TransformKind::ChannelShuffle => "shuffle",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).expect("listed in ALL")
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let token = s.trim();
        Self::ALL
            .into_iter()
            .find(|k| k.name() == token)
            .ok_or_else(|| {
                Error::Parse(format!(
                    "unknown transform `{token}` (expected one of: {})",
                    Self::ALL.map(|k| k.name()).join(", ")
                ))
            })
    }
}

/// Kind-specific magnitudes shared by every stage of a pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformParams {
    pub noise_sigma: f64,
    pub scale_sigma: f64,
    pub permute_segments: usize,
    pub warp_knots: usize,
    pub warp_sigma: f64,
}

impl Default for TransformParams {
    fn default() -> Self {
        TransformParams {
            noise_sigma: 0.05,
            scale_sigma: 0.1,
            permute_segments: 4,
            warp_knots: 4,
            warp_sigma: 0.2,
        }
    }
}

impl TransformParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("scale_sigma", self.scale_sigma),
            ("warp_sigma", self.warp_sigma),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.permute_segments < 2 {
            return Err(Error::Parameter("permute_segments must be >= 2".into()));
        }
        if self.warp_knots < 2 {
            return Err(Error::Parameter("warp_knots must be >= 2".into()));
        }
        Ok(())
    }
}

/// Parses a comma-separated list such as `shuffle,permute`.
pub fn parse_stages(spec: &str) -> Result<Vec<TransformKind>> {
    if spec.trim().is_empty() {
        return Ok(Vec::new());
    }
    spec.split(',').map(str::parse).collect()
}

pub fn format_stages(stages: &[TransformKind]) -> String {
    if stages.is_empty() {
        return TransformKind::Identity.name().to_string();
    }
    stages.iter().map(|k| k.name()).collect::<Vec<_>>().join(",")
}
