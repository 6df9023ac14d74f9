//! Windowed-dataset cache in the tensor container format.

use std::path::Path;

use super::{ActivityLabel, SensorWindow};
use crate::error::{Error, Result};
use crate::numcore::{load_container, save_container, Tensor, TensorContainer};

pub fn save_windows(manifest: &Path, windows: &[SensorWindow]) -> Result<()> {
    let Some(first) = windows.first() else {
        return Err(Error::Data("refusing to cache an empty dataset".into()));
    };
    let n = windows.len();
    let items: Vec<&Tensor<f32>> = windows.iter().map(|w| &w.values).collect();
    let column = |f: &dyn Fn(&SensorWindow) -> usize| {
        Tensor::from_fn(&[n], |i| f(&windows[i]) as f32)
    };
    let mut c = TensorContainer::default();
    c.meta.insert("kind".into(), "windows".into());
    c.meta.insert("window_len".into(), first.values.shape()[0].to_string());
    c.tensors.push(("windows".into(), Tensor::stack(&items)?));
    c.tensors.push(("subject".into(), column(&|w| w.subject_id as usize)));
    c.tensors.push(("trial".into(), column(&|w| w.trial_id as usize)));
    c.tensors.push(("label".into(), column(&|w| w.label.index())));
    c.tensors.push(("start".into(), column(&|w| w.start)));
    save_container(manifest, &c)
}

pub fn load_windows(manifest: &Path) -> Result<Vec<SensorWindow>> {
    let mut c = load_container(manifest)?;
    if c.meta.get("kind").map(String::as_str) != Some("windows") {
        return Err(Error::Parse(format!("{} is not a window cache", manifest.display())));
    }
    let values = c.take("windows")?;
    let subject = c.take("subject")?;
    let trial = c.take("trial")?;
    let label = c.take("label")?;
    let start = c.take("start")?;
    values.expect_rank("load_windows", 3)?;
    let n = values.shape()[0];
    if [&subject, &trial, &label, &start].iter().any(|t| t.len() != n) {
        return Err(Error::Parse("window cache columns disagree in length".into()));
    }
    let inner = &values.shape()[1..];
    (0..n)
        .map(|i| {
            Ok(SensorWindow {
                values: Tensor::from_vec(inner, values.outer(i).to_vec())?,
                subject_id: subject.data()[i] as u32,
                trial_id: trial.data()[i] as u32,
                label: ActivityLabel::from_index(label.data()[i] as usize)?,
                start: start.data()[i] as usize,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.manifest");
        let w = synth_dataset(4, 3, 2).unwrap();
        save_windows(&path, &w).unwrap();
        assert_eq!(load_windows(&path).unwrap(), w);
        assert!(save_windows(&path, &[]).is_err());
    }
}
