use rayon::prelude::*;

use super::transforms::*;
use super::{format_stages, parse_stages, TransformKind, TransformParams};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::rng::{self, Rng};

/// Ordered transformation stages plus the base seed from which every
/// `(window, view, stage)` random stream is derived.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformPipeline {
    pub stages: Vec<TransformKind>,
    pub params: TransformParams,
    pub base_seed: u64,
}

impl TransformPipeline {
    pub fn new(stages: Vec<TransformKind>, base_seed: u64) -> Self {
        TransformPipeline {
            stages,
            params: TransformParams::default(),
            base_seed,
        }
    }

    pub fn parse(spec: &str, base_seed: u64) -> Result<Self> {
        Ok(Self::new(parse_stages(spec)?, base_seed))
    }

    pub fn with_params(mut self, params: TransformParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_seed(&self, base_seed: u64) -> Self {
        TransformPipeline {
            base_seed,
            ..self.clone()
        }
    }

    pub fn spec(&self) -> String {
        format_stages(&self.stages)
    }

    /// Stages that actually do something; `Identity` entries are dropped
    /// before stream indices are assigned.
    pub fn effective_stages(&self) -> Vec<TransformKind> {
        self.stages
            .iter()
            .copied()
            .filter(|&k| k != TransformKind::Identity)
            .collect()
    }

    pub fn is_identity(&self) -> bool {
        self.effective_stages().is_empty()
    }

    /// Stream for one stage of one view of one window.
    pub fn stream(&self, window_index: u64, view_index: u64, stage_index: u64) -> Rng {
        rng::stream(self.base_seed, &[window_index, view_index, stage_index])
    }

    /// Applies the stages left to right.
    pub fn apply(&self, w: &Tensor<f32>, window_index: u64, view_index: u64) -> Result<Tensor<f32>> {
        self.params.validate()?;
        let mut cur = w.clone();
        for (stage, kind) in self.effective_stages().into_iter().enumerate() {
            let mut r = self.stream(window_index, view_index, stage as u64);
            cur = apply_stage(kind, &self.params, &cur, &mut r)?;
        }
        Ok(cur)
    }
}

fn apply_stage(kind: TransformKind, p: &TransformParams, w: &Tensor<f32>, r: &mut Rng) -> Result<Tensor<f32>> {
    match kind {
        TransformKind::Identity => Ok(w.clone()),
        TransformKind::Noise => t_noise(w, p.noise_sigma, r),
        TransformKind::Scale => t_scale(w, p.scale_sigma, r),
        TransformKind::Rotate => t_rotate(w, r),
        TransformKind::Invert => t_invert(w),
        TransformKind::TimeReverse => t_time_reverse(w),
        TransformKind::Permute => t_permute(w, p.permute_segments, r),
        TransformKind::TimeWarp => t_time_warp(w, p.warp_knots, p.warp_sigma, r),
        TransformKind::ChannelShuffle => t_channel_shuffle(w, r),
    }
}

/// Two independently augmented views of every window in `batch`
/// (`[B, L, C]`), using `window_indices[b]` to derive the streams.
pub fn two_views_indexed(
    pipeline: &TransformPipeline,
    batch: &Tensor<f32>,
    window_indices: &[u64],
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    batch.expect_rank("two_views", 3)?;
    let b = batch.shape()[0];
    if window_indices.len() != b {
        return Err(Error::dim(
            "two_views",
            format!("{} indices for batch of {b}", window_indices.len()),
        ));
    }
    let inner = &batch.shape()[1..];
    let pairs: Vec<(Tensor<f32>, Tensor<f32>)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let w = Tensor::from_vec(inner, batch.outer(i).to_vec())?;
            let idx = window_indices[i];
            Ok((pipeline.apply(&w, idx, 0)?, pipeline.apply(&w, idx, 1)?))
        })
        .collect::<Result<_>>()?;
    let a: Vec<&Tensor<f32>> = pairs.iter().map(|p| &p.0).collect();
    let v: Vec<&Tensor<f32>> = pairs.iter().map(|p| &p.1).collect();
    if pairs.is_empty() {
        return Ok((batch.clone(), batch.clone()));
    }
    Ok((Tensor::stack(&a)?, Tensor::stack(&v)?))
}

/// [`two_views_indexed`] with window indices `0..B`.
pub fn two_views(pipeline: &TransformPipeline, batch: &Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>)> {
    batch.expect_rank("two_views", 3)?;
    let idx: Vec<u64> = (0..batch.shape()[0] as u64).collect();
    two_views_indexed(pipeline, batch, &idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn batch(b: usize, len: usize, seed: u64) -> Tensor<f32> {
        let mut r = rng::stream(seed, &[]);
        Tensor::from_fn(&[b, len, 3], |_| {
            let v: f64 = StandardNormal.sample(&mut r);
            v as f32
        })
    }

    fn window(len: usize, seed: u64) -> Tensor<f32> {
        let b = batch(1, len, seed);
        b.reshape(&[len, 3]).unwrap()
    }

    #[test]
    fn empty_and_involution_pipelines_are_identity() {
        let w = window(40, 1);
        assert_eq!(TransformPipeline::new(vec![], 3).apply(&w, 0, 0).unwrap(), w);
        let p = TransformPipeline::parse("invert,invert", 3).unwrap();
        assert_eq!(p.apply(&w, 5, 1).unwrap(), w);
        let p = TransformPipeline::parse("identity", 3).unwrap();
        assert!(p.is_identity());
        assert_eq!(p.apply(&w, 5, 1).unwrap(), w);
    }

    #[test]
    fn order_of_scale_and_noise_matters() {
        let w = window(30, 2);
        let eps = window(30, 3).map(|v| v * 0.05);
        let factors = [2.0, 2.0, 2.0];
        let scale_then_noise = noise_with(&scale_with(&w, &factors).unwrap(), &eps).unwrap();
        let noise_then_scale = scale_with(&noise_with(&w, &eps).unwrap(), &factors).unwrap();
        for i in 0..w.len() {
            let (x, e) = (w.data()[i], eps.data()[i]);
            assert!((scale_then_noise.data()[i] - (2.0 * x + e)).abs() < 1e-6);
            assert!((noise_then_scale.data()[i] - 2.0 * (x + e)).abs() < 1e-6);
            let diff = noise_then_scale.data()[i] - scale_then_noise.data()[i];
            assert!((diff - e).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_pipeline_views_equal_batch() {
        let x = batch(4, 20, 4);
        let (a, b) = two_views(&TransformPipeline::new(vec![TransformKind::Identity], 9), &x).unwrap();
        assert_eq!(a, x);
        assert_eq!(b, x);
    }

    #[test]
    fn noise_views_differ_and_replay() {
        let x = batch(4, 20, 5);
        let p = TransformPipeline::parse("noise", 11).unwrap();
        let (a, b) = two_views(&p, &x).unwrap();
        assert!(a.max_abs_diff(&b) > 0.0);
        let (a2, b2) = two_views(&p, &x).unwrap();
        assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   a2.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(b, b2);
        let (a3, _) = two_views(&p.with_seed(12), &x).unwrap();
        assert!(a3.max_abs_diff(&a) > 0.0);
    }

    #[test]
    fn identity_stages_do_not_shift_streams() {
        let w = window(64, 6);
        for kind in TransformKind::ALL {
            let single = TransformPipeline::new(vec![kind], 21);
            let left = TransformPipeline::new(vec![kind, TransformKind::Identity], 21);
            let right = TransformPipeline::new(vec![TransformKind::Identity, kind], 21);
            let s = single.apply(&w, 3, 1).unwrap();
            assert_eq!(left.apply(&w, 3, 1).unwrap(), s);
            assert_eq!(right.apply(&w, 3, 1).unwrap(), s);
        }
    }

    #[test]
    fn index_count_must_match() {
        let x = batch(2, 10, 7);
        assert!(two_views_indexed(&TransformPipeline::new(vec![], 0), &x, &[0]).is_err());
    }
}
