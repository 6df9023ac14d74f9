use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{ActivityLabel, SensorWindow, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::rng;

pub const SAMPLE_RATE_HZ: f64 = 50.0;
const NOISE_SIGMA: f64 = 0.1;
const SUBJECTS: u32 = 24;

/// Class-separable sinusoid windows.
///
/// Class `c` is a unit-amplitude sinusoid at `(c+1)·0.5` Hz on each of the
/// three channels with an independent random phase per channel, plus
/// `Normal(0, 0.1²)` noise. Windows are interleaved by class and assigned to
/// subjects `1..=24` round-robin.
pub fn synth_dataset(n_per_class: usize, n_classes: usize, seed: u64) -> Result<Vec<SensorWindow>> {
    if n_classes == 0 || n_classes > ActivityLabel::COUNT {
        return Err(Error::Parameter(format!(
            "n_classes must be in 1..={}, got {n_classes}",
            ActivityLabel::COUNT
        )));
    }
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut out = Vec::with_capacity(n_per_class * n_classes);
    for i in 0..n_per_class {
        for c in 0..n_classes {
            let k = out.len();
            let mut r = rng::stream(seed, &[c as u64, i as u64]);
            let freq = (c + 1) as f64 * 0.5;
            let phase: [f64; 3] = std::array::from_fn(|_| r.random_range(0.0..2.0 * PI));
            let values = Tensor::from_fn(&[WINDOW_LEN, 3], |j| {
                let (t, ch) = (j / 3, j % 3);
                let clean = (2.0 * PI * freq * t as f64 / SAMPLE_RATE_HZ + phase[ch]).sin();
                (clean + noise.sample(&mut r)) as f32
            });
            out.push(SensorWindow {
                values,
                subject_id: (k as u32 % SUBJECTS) + 1,
                label: ActivityLabel::ALL[c],
                trial_id: i as u32,
                start: 0,
            });
        }
    }
    Ok(out)
}
