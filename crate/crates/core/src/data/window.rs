use super::motionsense::RawSeries;
use super::SensorWindow;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

fn stride_for(length: usize, overlap: f64) -> Result<usize> {
    if length == 0 {
        return Err(Error::Parameter("window length must be positive".into()));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Parameter(format!("overlap must lie in [0, 1), got {overlap}")));
    }
    Ok(((length as f64 * (1.0 - overlap)).round() as usize).max(1))
}

/// `max(0, ⌊(T − length)/stride⌋ + 1)`.
pub fn window_count(series_len: usize, length: usize, overlap: f64) -> Result<usize> {
    let stride = stride_for(length, overlap)?;
    Ok(if series_len < length {
        0
    } else {
        (series_len - length) / stride + 1
    })
}

/// Cuts one series into windows starting at `0, stride, 2·stride, …`;
/// trailing partial data is dropped.
pub fn make_windows(series: &RawSeries, length: usize, overlap: f64) -> Result<Vec<SensorWindow>> {
    let stride = stride_for(length, overlap)?;
    let (t, ch) = (series.values.shape()[0], series.values.shape()[1]);
    let n = window_count(t, length, overlap)?;
    (0..n)
        .map(|i| {
            let start = i * stride;
            let data = series.values.data()[start * ch..(start + length) * ch].to_vec();
            Ok(SensorWindow {
                values: Tensor::from_vec(&[length, ch], data)?,
                subject_id: series.subject_id,
                label: series.label,
                trial_id: series.trial_id,
                start,
            })
        })
        .collect()
}

/// Windows every series and returns them sorted by
/// `(subject, trial, label, start)`.
pub fn windows_from_series(series: &[RawSeries], length: usize, overlap: f64) -> Result<Vec<SensorWindow>> {
    let mut out = Vec::new();
    for s in series {
        out.extend(make_windows(s, length, overlap)?);
    }
    out.sort_by_key(|w| (w.subject_id, w.trial_id, w.label, w.start));
    Ok(out)
}

/// Per-channel standardisation fitted on training windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(windows: &[SensorWindow]) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| Error::Data("cannot fit standardizer on no windows".into()))?;
        let ch = first.values.shape()[1];
        let mut sum = vec![0.0f64; ch];
        let mut sq = vec![0.0f64; ch];
        let mut n = 0usize;
        for w in windows {
            for row in w.values.data().chunks(ch) {
                for c in 0..ch {
                    let v = row[c] as f64;
                    sum[c] += v;
                    sq[c] += v * v;
                }
                n += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n as f64 - m * m).max(0.0).sqrt().max(1e-8))
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, windows: &mut [SensorWindow]) {
        let ch = self.mean.len();
        for w in windows {
            for row in w.values.data_mut().chunks_mut(ch) {
                for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                    *v = ((*v as f64 - m) / s) as f32;
                }
            }
        }
    }
}
