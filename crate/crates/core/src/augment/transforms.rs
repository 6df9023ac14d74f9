//! The eight signal transformations on a `[time, channel]` window.
//!
//! Each stochastic transform comes in two forms: `*_with` takes its random
//! draws explicitly, `t_*` draws them from a generator. Inputs are never
//! mutated.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::rng::Rng;

/// Lower clamp on the time-warp speed curve.
pub const MIN_WARP_SPEED: f64 = 0.1;

fn dims(w: &Tensor<f32>, op: &'static str) -> Result<(usize, usize)> {
    w.expect_rank(op, 2)?;
    Ok((w.shape()[0], w.shape()[1]))
}

fn require_three_channels(w: &Tensor<f32>, op: &'static str) -> Result<usize> {
    let (len, ch) = dims(w, op)?;
    if ch != 3 {
        return Err(Error::dim(op, format!("needs 3 channels, got {ch}")));
    }
    Ok(len)
}

fn normal(mean: f64, sigma: f64) -> Result<Normal<f64>> {
    Normal::new(mean, sigma).map_err(|e| Error::Parameter(format!("normal({mean}, {sigma}): {e}")))
}

/// `w + ε` for a pre-drawn `ε` of the same shape.
pub fn noise_with(w: &Tensor<f32>, eps: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut out = w.clone();
    out.add_assign(eps)?;
    Ok(out)
}

/// Adds i.i.d. `Normal(0, sigma²)` noise to every element.
pub fn t_noise(w: &Tensor<f32>, sigma: f64, rng: &mut Rng) -> Result<Tensor<f32>> {
    dims(w, "noise")?;
    let dist = normal(0.0, sigma)?;
    let eps = Tensor::from_fn(w.shape(), |_| dist.sample(rng) as f32);
    noise_with(w, &eps)
}

/// Multiplies channel `c` by `factors[c]`.
pub fn scale_with(w: &Tensor<f32>, factors: &[f64]) -> Result<Tensor<f32>> {
    let (_, ch) = dims(w, "scale")?;
    if factors.len() != ch {
        return Err(Error::dim("scale", format!("{} factors for {ch} channels", factors.len())));
    }
    let mut out = w.clone();
    for row in out.data_mut().chunks_mut(ch) {
        for (v, &s) in row.iter_mut().zip(factors) {
            *v = (*v as f64 * s) as f32;
        }
    }
    Ok(out)
}

/// One `Normal(1, sigma²)` factor per channel.
pub fn draw_scale_factors(channels: usize, sigma: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    let dist = normal(1.0, sigma)?;
    Ok((0..channels).map(|_| dist.sample(rng)).collect())
}

pub fn t_scale(w: &Tensor<f32>, sigma: f64, rng: &mut Rng) -> Result<Tensor<f32>> {
    let (_, ch) = dims(w, "scale")?;
    let factors = draw_scale_factors(ch, sigma, rng)?;
    scale_with(w, &factors)
}

pub type Mat3 = [[f64; 3]; 3];

/// Rodrigues' formula for a rotation by `angle` about the unit vector `axis`.
pub fn rotation_matrix(axis: [f64; 3], angle: f64) -> Mat3 {
    let [x, y, z] = axis;
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

/// Applies `r` to every timestep's 3-vector.
pub fn rotate_with(w: &Tensor<f32>, r: &Mat3) -> Result<Tensor<f32>> {
    require_three_channels(w, "rotate")?;
    let mut out = w.clone();
    for row in out.data_mut().chunks_mut(3) {
        let v = [row[0] as f64, row[1] as f64, row[2] as f64];
        for (i, o) in row.iter_mut().enumerate() {
            *o = (r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2]) as f32;
        }
    }
    Ok(out)
}

/// Axis uniform on the unit sphere, angle uniform on `[0, 2π)`.
pub fn draw_rotation(rng: &mut Rng) -> (Mat3, [f64; 3], f64) {
    let axis = loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            break [v[0] / n, v[1] / n, v[2] / n];
        }
    };
    let angle = rng.random_range(0.0..2.0 * PI);
    (rotation_matrix(axis, angle), axis, angle)
}

pub fn t_rotate(w: &Tensor<f32>, rng: &mut Rng) -> Result<Tensor<f32>> {
    require_three_channels(w, "rotate")?;
    let (r, _, _) = draw_rotation(rng);
    rotate_with(w, &r)
}

pub fn t_invert(w: &Tensor<f32>) -> Result<Tensor<f32>> {
    dims(w, "invert")?;
    Ok(w.map(|x| -x))
}

/// `w'[t] = w[L−1−t]`.
pub fn t_time_reverse(w: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (len, _) = dims(w, "reverse")?;
    let idx: Vec<usize> = (0..len).rev().collect();
    Ok(w.select(&idx))
}

/// Start offsets of `segments` contiguous pieces; the last absorbs the
/// remainder.
fn segment_bounds(len: usize, segments: usize) -> Vec<(usize, usize)> {
    let base = len / segments;
    (0..segments)
        .map(|s| {
            let start = s * base;
            let end = if s + 1 == segments { len } else { start + base };
            (start, end)
        })
        .collect()
}

/// Concatenates segments in the order given by `perm`.
pub fn permute_with(w: &Tensor<f32>, perm: &[usize]) -> Result<Tensor<f32>> {
    let (len, _) = dims(w, "permute")?;
    let segments = perm.len();
    if segments < 2 {
        return Err(Error::Parameter(format!("permute needs >= 2 segments, got {segments}")));
    }
    if len < segments {
        return Err(Error::dim("permute", format!("length {len} shorter than {segments} segments")));
    }
    let mut seen = vec![false; segments];
    for &p in perm {
        if p >= segments || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Parameter(format!("{perm:?} is not a permutation")));
        }
    }
    let bounds = segment_bounds(len, segments);
    let idx: Vec<usize> = perm.iter().flat_map(|&p| bounds[p].0..bounds[p].1).collect();
    Ok(w.select(&idx))
}

pub fn t_permute(w: &Tensor<f32>, segments: usize, rng: &mut Rng) -> Result<Tensor<f32>> {
    let mut perm: Vec<usize> = (0..segments).collect();
    perm.shuffle(rng);
    permute_with(w, &perm)
}

/// Natural cubic spline through `(xs[i], ys[i])`, evaluated at `at`.
fn natural_spline(xs: &[f64], ys: &[f64], at: impl Iterator<Item = f64>) -> Vec<f64> {
    let n = xs.len();
    // second derivatives, zero at both ends
    let mut m = vec![0.0; n];
    if n > 2 {
        let h: Vec<f64> = xs.windows(2).map(|p| p[1] - p[0]).collect();
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            diag[i] = 2.0 * (h[i] + h[i + 1]);
            rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h[i + 1] - (ys[i + 1] - ys[i]) / h[i]);
        }
        // Thomas algorithm; off-diagonals are h[i+1]
        for i in 1..k {
            let f = h[i] / diag[i - 1];
            diag[i] -= f * h[i];
            rhs[i] -= f * rhs[i - 1];
        }
        for i in (0..k).rev() {
            let upper = if i + 1 < k { h[i + 1] * m[i + 2] } else { 0.0 };
            m[i + 1] = (rhs[i] - upper) / diag[i];
        }
    }
    let mut seg = 0;
    at.map(|x| {
        while seg + 2 < n && x > xs[seg + 1] {
            seg += 1;
        }
        let (x0, x1) = (xs[seg], xs[seg + 1]);
        let h = x1 - x0;
        let a = (x1 - x) / h;
        let b = (x - x0) / h;
        a * ys[seg] + b * ys[seg + 1] + ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * h * h / 6.0
    })
    .collect()
}

/// Time warp driven by speeds at equally spaced knots.
///
/// The speed curve is a natural cubic spline through the knots, clamped to
/// [`MIN_WARP_SPEED`]. Its running sum, rescaled to `[0, L−1]`, maps input
/// time to output time; each output sample is read back through the inverse
/// map with linear interpolation.
pub fn time_warp_with(w: &Tensor<f32>, knot_speeds: &[f64]) -> Result<Tensor<f32>> {
    let (len, ch) = dims(w, "warp")?;
    if len < 8 {
        return Err(Error::dim("warp", format!("length {len} shorter than 8")));
    }
    if knot_speeds.len() < 2 {
        return Err(Error::Parameter("warp needs >= 2 knots".into()));
    }
    let last = (len - 1) as f64;
    let k = knot_speeds.len();
    let xs: Vec<f64> = (0..k).map(|j| last * j as f64 / (k - 1) as f64).collect();
    let speed: Vec<f64> = natural_spline(&xs, knot_speeds, (0..len).map(|t| t as f64))
        .into_iter()
        .map(|s| s.max(MIN_WARP_SPEED))
        .collect();
    let mut warped = vec![0.0; len];
    for t in 1..len {
        warped[t] = warped[t - 1] + 0.5 * (speed[t - 1] + speed[t]);
    }
    let scale = last / warped[len - 1];
    warped.iter_mut().for_each(|v| *v *= scale);
    warped[len - 1] = last;

    let mut out = Tensor::zeros(w.shape());
    let src = w.data();
    let mut seg = 0;
    for u in 0..len {
        let target = u as f64;
        while seg + 2 < len && warped[seg + 1] < target {
            seg += 1;
        }
        let span = warped[seg + 1] - warped[seg];
        let frac = if span > 0.0 {
            ((target - warped[seg]) / span).clamp(0.0, 1.0)
        } else {
            0.0
        };
        // inverse-warped source position
        let pos = seg as f64 + frac;
        let i0 = (pos.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        let f = pos - i0 as f64;
        for c in 0..ch {
            let (a, b) = (src[i0 * ch + c] as f64, src[i1 * ch + c] as f64);
            out.data_mut()[u * ch + c] = (a + f * (b - a)) as f32;
        }
    }
    Ok(out)
}

/// Knot speeds `Normal(1, sigma²)` clamped to [`MIN_WARP_SPEED`].
pub fn draw_warp_knots(knots: usize, sigma: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    let dist = normal(1.0, sigma)?;
    Ok((0..knots).map(|_| dist.sample(rng).max(MIN_WARP_SPEED)).collect())
}

pub fn t_time_warp(w: &Tensor<f32>, knots: usize, sigma: f64, rng: &mut Rng) -> Result<Tensor<f32>> {
    dims(w, "warp")?;
    let speeds = draw_warp_knots(knots, sigma, rng)?;
    time_warp_with(w, &speeds)
}

/// `w'[:, c] = w[:, perm[c]]`.
pub fn shuffle_with(w: &Tensor<f32>, perm: [usize; 3]) -> Result<Tensor<f32>> {
    require_three_channels(w, "shuffle")?;
    let mut sorted = perm;
    sorted.sort_unstable();
    if sorted != [0, 1, 2] {
        return Err(Error::Parameter(format!("{perm:?} is not a permutation of 0..3")));
    }
    let mut out = w.clone();
    for (o, i) in out.data_mut().chunks_mut(3).zip(w.data().chunks(3)) {
        for c in 0..3 {
            o[c] = i[perm[c]];
        }
    }
    Ok(out)
}

pub fn draw_channel_permutation(rng: &mut Rng) -> [usize; 3] {
    let mut p = [0, 1, 2];
    p.shuffle(rng);
    p
}

pub fn t_channel_shuffle(w: &Tensor<f32>, rng: &mut Rng) -> Result<Tensor<f32>> {
    require_three_channels(w, "shuffle")?;
    shuffle_with(w, draw_channel_permutation(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn window(len: usize, seed: u64) -> Tensor<f32> {
        let mut r = rng::stream(seed, &[]);
        Tensor::from_fn(&[len, 3], |_| {
            let v: f64 = StandardNormal.sample(&mut r);
            v as f32
        })
    }

    fn ramp(len: usize) -> Tensor<f32> {
        Tensor::from_fn(&[len, 3], |i| (i / 3) as f32)
    }

    #[test]
    fn noise_zero_sigma_and_moments() {
        let w = window(50, 1);
        assert_eq!(t_noise(&w, 0.0, &mut rng::stream(0, &[])).unwrap(), w);
        let z = Tensor::<f32>::zeros(&[10_000, 1]);
        let out = t_noise(&z, 0.05, &mut rng::stream(2, &[])).unwrap();
        let n = out.len() as f64;
        let mean = out.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = out.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((0.045..=0.055).contains(&var.sqrt()), "{}", var.sqrt());
        let a = t_noise(&z, 0.05, &mut rng::stream(2, &[0])).unwrap();
        let b = t_noise(&z, 0.05, &mut rng::stream(2, &[1])).unwrap();
        assert!(a.max_abs_diff(&b) > 0.0);
    }

    #[test]
    fn scale_examples_and_moments() {
        let w = window(20, 3);
        assert_eq!(scale_with(&w, &[1.0, 1.0, 1.0]).unwrap(), w);
        let s = scale_with(&w, &[2.0, 1.0, 1.0]).unwrap();
        for (o, i) in s.data().chunks(3).zip(w.data().chunks(3)) {
            assert_eq!(o[0], 2.0 * i[0]);
            assert_eq!(&o[1..], &i[1..]);
        }
        let mut r = rng::stream(4, &[]);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| draw_scale_factors(1, 0.1, &mut r).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / 1e4;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 9_999.0).sqrt();
        assert!((0.99..=1.01).contains(&mean));
        assert!((0.095..=0.105).contains(&sd));
    }

    #[test]
    fn canonical_rotation() {
        let r = rotation_matrix([0.0, 0.0, 1.0], PI / 2.0);
        let w = Tensor::from_fn(&[5, 3], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        let out = rotate_with(&w, &r).unwrap();
        for row in out.data().chunks(3) {
            assert!(row[0].abs() < 1e-7 && (row[1] - 1.0).abs() < 1e-7 && row[2].abs() < 1e-7);
        }
        let id = rotate_with(&w, &rotation_matrix([0.6, 0.8, 0.0], 0.0)).unwrap();
        assert_eq!(id, w);
    }

    #[test]
    fn random_rotations_are_proper_orthogonal() {
        let mut r = rng::stream(5, &[]);
        for _ in 0..100 {
            let (m, _, _) = draw_rotation(&mut r);
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-6);
                }
            }
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            assert!((det - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rotate_needs_three_channels() {
        let w = Tensor::<f32>::zeros(&[10, 2]);
        assert!(t_rotate(&w, &mut rng::stream(0, &[])).is_err());
        assert!(t_channel_shuffle(&w, &mut rng::stream(0, &[])).is_err());
    }

    #[test]
    fn invert_and_reverse_examples() {
        let row = Tensor::<f32>::from_vec(&[1, 3], vec![1.0, -2.0, 3.0]).unwrap();
        assert_eq!(t_invert(&row).unwrap().data(), &[-1.0, 2.0, -3.0]);
        assert!(t_invert(&Tensor::<f32>::zeros(&[4, 3])).unwrap().data().iter().all(|&v| v == 0.0));
        let rev = t_time_reverse(&ramp(4)).unwrap();
        assert_eq!(rev.data(), &[3.0, 3.0, 3.0, 2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let c = Tensor::<f32>::full(&[7, 3], 2.5);
        assert_eq!(t_time_reverse(&c).unwrap(), c);
    }

    #[test]
    fn permute_hand_example() {
        let w = Tensor::<f32>::from_fn(&[8, 1], |i| i as f32);
        let out = permute_with(&w, &[1, 0, 3, 2]).unwrap();
        assert_eq!(out.data(), &[2.0, 3.0, 0.0, 1.0, 6.0, 7.0, 4.0, 5.0]);
        assert_eq!(permute_with(&w, &[0, 1, 2, 3]).unwrap(), w);
    }

    #[test]
    fn permute_remainder_goes_to_last_segment() {
        let w = Tensor::<f32>::from_fn(&[10, 1], |i| i as f32);
        // segments: [0,1] [2,3] [4,5] [6..10)
        let out = permute_with(&w, &[3, 0, 1, 2]).unwrap();
        assert_eq!(out.data(), &[6.0, 7.0, 8.0, 9.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn permute_errors() {
        let w = Tensor::<f32>::zeros(&[3, 3]);
        assert!(t_permute(&w, 4, &mut rng::stream(0, &[])).is_err());
        let w = Tensor::<f32>::zeros(&[8, 3]);
        assert!(permute_with(&w, &[0, 0, 1, 2]).is_err());
    }

    #[test]
    fn warp_identity_and_endpoints() {
        let w = window(400, 6);
        let same = time_warp_with(&w, &[1.0; 4]).unwrap();
        assert!(same.max_abs_diff(&w) < 1e-6);
        let mut r = rng::stream(7, &[]);
        for _ in 0..20 {
            let out = t_time_warp(&w, 4, 0.2, &mut r).unwrap();
            assert_eq!(out.shape(), w.shape());
            for c in 0..3 {
                assert!((out.data()[c] - w.data()[c]).abs() < 1e-6);
                assert!((out.data()[399 * 3 + c] - w.data()[399 * 3 + c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn warp_keeps_ramps_monotone() {
        let w = ramp(400);
        let mut r = rng::stream(8, &[]);
        let mut changed = 0;
        for _ in 0..100 {
            let out = t_time_warp(&w, 4, 0.2, &mut r).unwrap();
            for c in 0..3 {
                for t in 1..400 {
                    assert!(out.data()[t * 3 + c] >= out.data()[(t - 1) * 3 + c]);
                }
            }
            if out.max_abs_diff(&w) > 1e-3 {
                changed += 1;
            }
        }
        assert!(changed > 90);
    }

    #[test]
    fn warp_rejects_short_windows() {
        let w = Tensor::<f32>::zeros(&[7, 3]);
        assert!(t_time_warp(&w, 4, 0.2, &mut rng::stream(0, &[])).is_err());
    }

    #[test]
    fn spline_interpolates_knots() {
        let xs = [0.0, 1.0, 2.5, 4.0];
        let ys = [1.0, 0.2, 1.7, 0.9];
        let v = natural_spline(&xs, &ys, xs.iter().copied());
        for (a, b) in v.iter().zip(ys) {
            assert!((a - b).abs() < 1e-12);
        }
        // linear data is reproduced exactly by a natural spline
        let lin = natural_spline(&xs, &[0.0, 1.0, 2.5, 4.0], [0.3, 1.7, 3.9].into_iter());
        for (a, b) in lin.iter().zip([0.3, 1.7, 3.9]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shuffle_examples_and_frequencies() {
        let w = Tensor::<f32>::from_fn(&[4, 3], |i| (i % 3) as f32 * 10.0 + (i / 3) as f32);
        assert_eq!(shuffle_with(&w, [0, 1, 2]).unwrap(), w);
        let s = shuffle_with(&w, [1, 2, 0]).unwrap();
        for (o, i) in s.data().chunks(3).zip(w.data().chunks(3)) {
            assert_eq!(o, &[i[1], i[2], i[0]]);
        }
        let mut r = rng::stream(9, &[]);
        let mut counts = std::collections::HashMap::new();
        for _ in 0..6000 {
            *counts.entry(draw_channel_permutation(&mut r)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        for &c in counts.values() {
            let f = c as f64 / 6000.0;
            assert!((f - 1.0 / 6.0).abs() <= 0.02, "{f}");
        }
    }
}
