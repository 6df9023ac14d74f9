#![allow(dead_code)]

use clhar::data::{split_by_subject, synth_dataset};
use clhar::model::{EncoderConfig, ModelConfig};
use clhar::DatasetSplit;

/// Narrow network on full-length windows.
pub fn small_model() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            kernel_sizes: [8, 6, 4],
            filters: [8, 12, 16],
            dropout: 0.1,
            window_len: 400,
            channels: 3,
        },
        proj_units: [32, 16, 8],
        ft_hidden: 32,
        n_classes: 6,
    }
}

/// Synthetic 3-class windows with the three highest subject ids held out.
pub fn synth_split(per_class: usize, seed: u64) -> DatasetSplit {
    let w = synth_dataset(per_class, 3, seed).unwrap();
    let top = w.iter().map(|w| w.subject_id).max().unwrap();
    split_by_subject(w, &[top - 2, top - 1, top]).unwrap()
}
