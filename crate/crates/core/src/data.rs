//! Belief tensors and label maps.

use crate::error::{Error, Result};

/// Label value excluded from training and evaluation.
pub const IGNORE_LABEL: u16 = u16::MAX;

/// One classifier's per-pixel class probabilities, `H × W × M`, stored
/// row-major in `(y, x, class)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTensor {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<f32>,
}

impl BeliefTensor {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::data("belief tensor needs at least one class"));
        }
        let want = height
            .checked_mul(width)
            .and_then(|p| p.checked_mul(classes))
            .ok_or_else(|| Error::data("belief tensor dimensions overflow"))?;
        if data.len() != want {
            return Err(Error::data(format!(
                "belief tensor {height}x{width}x{classes} needs {want} values, got {}",
                data.len()
            )));
        }
        Ok(BeliefTensor {
            height,
            width,
            classes,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, classes: usize) -> Self {
        BeliefTensor {
            height,
            width,
            classes,
            data: vec![0.0; height * width * classes],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Class scores of pixel `p` (row-major index).
    pub fn pixel(&self, p: usize) -> &[f32] {
        &self.data[p * self.classes..(p + 1) * self.classes]
    }

    pub fn pixel_mut(&mut self, p: usize) -> &mut [f32] {
        let m = self.classes;
        &mut self.data[p * m..(p + 1) * m]
    }

    pub fn same_shape(&self, other: &BeliefTensor) -> bool {
        self.height == other.height && self.width == other.width && self.classes == other.classes
    }

    /// Check every value lies in `[0, 1]` and every pixel sums to one
    /// within `tolerance`.
    pub fn check_probabilities(&self, tolerance: f64) -> Result<()> {
        for p in 0..self.pixels() {
            let row = self.pixel(p);
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::data(format!(
                    "pixel ({}, {}) has score {v} outside [0, 1]",
                    p / self.width,
                    p % self.width
                )));
            }
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            if (sum - 1.0).abs() > tolerance {
                return Err(Error::data(format!(
                    "pixel ({}, {}) scores sum to {sum}",
                    p / self.width,
                    p % self.width
                )));
            }
        }
        Ok(())
    }

    /// Per-pixel argmax, ties to the lowest class index.
    pub fn argmax(&self) -> LabelMap {
        let labels = (0..self.pixels())
            .map(|p| argmax_f32(self.pixel(p)) as u16)
            .collect();
        LabelMap {
            height: self.height,
            width: self.width,
            labels,
        }
    }
}

/// Index of the first maximum.
pub fn argmax_f32(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn argmax_f64(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Check that `tensors` is non-empty and every tensor has the same shape.
pub fn check_aligned(tensors: &[BeliefTensor]) -> Result<()> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::usage("no belief tensors given"))?;
    for (i, t) in tensors.iter().enumerate().skip(1) {
        if !t.same_shape(first) {
            return Err(Error::usage(format!(
                "tensor {i} is {}x{}x{}, expected {}x{}x{}",
                t.height, t.width, t.classes, first.height, first.width, first.classes
            )));
        }
    }
    Ok(())
}

/// Per-pixel class labels, `H × W` row-major; [`IGNORE_LABEL`] marks
/// excluded pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::data(format!(
                "label map {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(LabelMap {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u16) -> Self {
        LabelMap {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.labels
    }

    pub fn as_mut_slice(&mut self) -> &mut [u16] {
        &mut self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    /// Error naming the first label that is neither `< classes` nor the
    /// ignore value.
    pub fn check_labels(&self, classes: usize) -> Result<()> {
        for (p, &l) in self.labels.iter().enumerate() {
            if l != IGNORE_LABEL && l as usize >= classes {
                return Err(Error::data(format!(
                    "label {l} at pixel ({}, {}) is not below the class count {classes}",
                    p / self.width,
                    p % self.width
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checks() {
        assert!(BeliefTensor::new(2, 2, 3, vec![0.0; 11]).is_err());
        assert!(BeliefTensor::new(1, 1, 0, vec![]).is_err());
        assert!(LabelMap::new(2, 2, vec![0; 3]).is_err());
        let a = BeliefTensor::zeros(2, 3, 4);
        let b = BeliefTensor::zeros(3, 2, 4);
        assert!(check_aligned(&[a.clone(), b]).is_err());
        assert!(check_aligned(&[a.clone(), a]).is_ok());
        assert!(check_aligned(&[]).is_err());
    }

    #[test]
    fn argmax_ties_to_lowest() {
        let t = BeliefTensor::new(1, 2, 3, vec![0.4, 0.4, 0.2, 0.1, 0.2, 0.7]).unwrap();
        assert_eq!(t.argmax().as_slice(), &[0, 2]);
    }

    #[test]
    fn probability_check() {
        let good = BeliefTensor::new(1, 1, 2, vec![0.25, 0.75]).unwrap();
        assert!(good.check_probabilities(1e-3).is_ok());
        let bad = BeliefTensor::new(1, 1, 2, vec![0.25, 0.70]).unwrap();
        assert!(bad.check_probabilities(1e-3).is_err());
    }

    #[test]
    fn label_range_check() {
        let m = LabelMap::new(1, 3, vec![0, IGNORE_LABEL, 3]).unwrap();
        let err = m.check_labels(3).unwrap_err().to_string();
        assert!(err.contains("(0, 2)"), "{err}");
        assert!(m.check_labels(4).is_ok());
    }
}
