//! Confusion matrices and support-weighted F1.

use std::io::Write;
use std::path::Path;

use crate::data::ActivityLabel;
use crate::error::{Error, Result};

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for l in [truth, predicted] {
            if l >= self.classes {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    classes: self.classes,
                });
            }
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.classes).all(|t| (0..self.classes).all(|p| t == p || self.get(t, p) == 0))
    }

    /// Rows of counts.
    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.classes.max(1))
    }

    /// CSV with a header of class names; first column is the true class.
    pub fn write_csv<W: Write>(&self, out: W, class_names: &[&str]) -> Result<()> {
        if class_names.len() != self.classes {
            return Err(Error::dim(
                "ConfusionMatrix::write_csv",
                format!("{} names for {} classes", class_names.len(), self.classes),
            ));
        }
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Data(e.to_string());
        let mut header = vec!["true\\predicted"];
        header.extend_from_slice(class_names);
        w.write_record(&header).map_err(csv_err)?;
        for (name, row) in class_names.iter().zip(self.rows()) {
            let mut rec = vec![name.to_string()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Data(e.to_string()))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let names: Vec<&str> = if self.classes == ActivityLabel::COUNT {
            ActivityLabel::ALL.iter().map(|l| l.name()).collect()
        } else {
            return Err(Error::Parameter(format!(
                "no class names for a {}-class matrix",
                self.classes
            )));
        };
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f), &names)
    }
}

/// Tallies `(truth, predicted)` pairs.
pub fn confusion(truth: &[usize], predicted: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::dim(
            "confusion",
            format!("{} true labels, {} predictions", truth.len(), predicted.len()),
        ));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        cm.add(t, p)?;
    }
    Ok(cm)
}

/// Per-class F1 averaged with weights proportional to class support.
/// Undefined precision or recall counts as 0.
pub fn weighted_f1(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("weighted F1 of an empty confusion matrix".into()));
    }
    let k = cm.classes;
    let mut acc = 0.0;
    for c in 0..k {
        let tp = cm.get(c, c) as f64;
        let support: u64 = (0..k).map(|p| cm.get(c, p)).sum();
        let predicted: u64 = (0..k).map(|t| cm.get(t, c)).sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { tp / support as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        acc += support as f64 * f1;
    }
    Ok(acc / total as f64)
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows(values: &[f32], cols: usize) -> Vec<usize> {
    values
        .chunks(cols)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}
