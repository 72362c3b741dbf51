//! Segmentation metrics from a confusion matrix.

use serde::{Deserialize, Serialize};

use crate::data::{LabelMap, IGNORE_LABEL};
use crate::error::{Error, Result};

/// Pixel counts, rows = ground truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
    ignored: u64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
            ignored: 0,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, l: usize) -> u64 {
        self.counts[l * self.classes..(l + 1) * self.classes].iter().sum()
    }

    pub fn col_sum(&self, l: usize) -> u64 {
        (0..self.classes).map(|g| self.get(g, l)).sum()
    }

    /// Add one image. A pixel is skipped when its ground truth is in
    /// `ignore` or is [`IGNORE_LABEL`].
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap, ignore: &[u16]) -> Result<()> {
        if pred.height() != gt.height() || pred.width() != gt.width() {
            return Err(Error::usage(format!(
                "prediction is {}x{} but ground truth is {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        let m = self.classes;
        let w = gt.width();
        let mut add = vec![0u64; m * m];
        let mut ignored = 0;
        for (p, (&y, &yhat)) in gt.as_slice().iter().zip(pred.as_slice()).enumerate() {
            if y == IGNORE_LABEL || ignore.contains(&y) {
                ignored += 1;
                continue;
            }
            for (what, l) in [("ground-truth", y), ("predicted", yhat)] {
                if l as usize >= m {
                    return Err(Error::data(format!(
                        "{what} label {l} at pixel ({}, {}) is not below the class count {m}",
                        p / w,
                        p % w
                    )));
                }
            }
            add[y as usize * m + yhat as usize] += 1;
        }
        for (c, a) in self.counts.iter_mut().zip(add) {
            *c += a;
        }
        self.ignored += ignored;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::usage(format!(
                "cannot merge confusion matrices over {} and {} classes",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.ignored += other.ignored;
        Ok(())
    }
}

/// Percentage of correctly labelled pixels.
pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::usage("no evaluated pixels"));
    }
    let trace: u64 = (0..cm.classes).map(|l| cm.get(l, l)).sum();
    Ok(100.0 * trace as f64 / total as f64)
}

/// Per-class recall (fraction, `None` for classes absent from ground
/// truth) and their mean as a percentage. With `zero_absent` absent
/// classes count as 0 in the mean.
pub fn class_accuracy(cm: &ConfusionMatrix, zero_absent: bool) -> Result<(Vec<Option<f64>>, f64)> {
    let per: Vec<Option<f64>> = (0..cm.classes)
        .map(|l| {
            let row = cm.row_sum(l);
            (row > 0).then(|| cm.get(l, l) as f64 / row as f64)
        })
        .collect();
    let mean = mean_of(&per, zero_absent).ok_or_else(|| Error::usage("no ground-truth pixels"))?;
    Ok((per, 100.0 * mean))
}

/// Per-class intersection over union and the mean, both fractions. Classes
/// with an empty union are `None`.
pub fn iou(cm: &ConfusionMatrix, zero_absent: bool) -> Result<(Vec<Option<f64>>, f64)> {
    let per: Vec<Option<f64>> = (0..cm.classes)
        .map(|l| {
            let tp = cm.get(l, l);
            let union = cm.row_sum(l) + cm.col_sum(l) - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    let mean = mean_of(&per, zero_absent).ok_or_else(|| Error::usage("every class union is empty"))?;
    Ok((per, mean))
}

fn mean_of(per: &[Option<f64>], zero_absent: bool) -> Option<f64> {
    let vals: Vec<f64> = if zero_absent {
        per.iter().map(|v| v.unwrap_or(0.0)).collect()
    } else {
        per.iter().flatten().copied().collect()
    };
    if vals.is_empty() || per.iter().all(Option::is_none) {
        return None;
    }
    Some(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Round to 6 decimals for reporting.
pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub ca: Option<f64>,
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub oa: f64,
    pub mean_ca: f64,
    pub miou: f64,
    pub ignored: u64,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricsSummary {
    pub fn from_confusion(cm: &ConfusionMatrix, zero_absent: bool) -> Result<Self> {
        let oa = overall_accuracy(cm)?;
        let (ca, mean_ca) = class_accuracy(cm, zero_absent)?;
        let (io, miou) = iou(cm, zero_absent)?;
        Ok(MetricsSummary {
            oa: round6(oa),
            mean_ca: round6(mean_ca),
            miou: round6(miou),
            ignored: cm.ignored(),
            per_class: ca
                .into_iter()
                .zip(io)
                .enumerate()
                .map(|(class, (ca, iou))| ClassMetrics {
                    class,
                    ca: ca.map(round6),
                    iou: iou.map(round6),
                })
                .collect(),
        })
    }

    /// `class,ca,iou` rows; empty cells for undefined values.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from("class,ca,iou\n");
        for c in &self.per_class {
            out.push_str(&format!("{},{},{}\n", c.class, cell(c.ca), cell(c.iou)));
        }
        out
    }
}
