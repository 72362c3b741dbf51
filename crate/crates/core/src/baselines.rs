//! Comparison fusers: linear opinion pool, majority vote, logit pooling.

use rayon::prelude::*;

use crate::copula::CLAMP_EPS;
use crate::data::{argmax_f32, check_aligned, BeliefTensor, LabelMap};
use crate::error::{Error, Result};

/// Nonnegative classifier weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights(Vec<f64>);

impl FusionWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::usage("weights must not be empty"));
        }
        if let Some(x) = w.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::usage(format!("weight {x} is not a nonnegative number")));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::usage(format!("weights sum to {total}, not 1")));
        }
        Ok(FusionWeights(w))
    }

    pub fn uniform(l: usize) -> Result<Self> {
        if l == 0 {
            return Err(Error::usage("weights must not be empty"));
        }
        Ok(FusionWeights(vec![1.0 / l as f64; l]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Elementwise `Σ w_i p_i`, accumulated in f64.
pub fn lop_fuse(tensors: &[BeliefTensor], weights: &FusionWeights) -> Result<BeliefTensor> {
    check_aligned(tensors)?;
    if weights.len() != tensors.len() {
        return Err(Error::usage(format!(
            "{} weights given for {} classifiers",
            weights.len(),
            tensors.len()
        )));
    }
    let t0 = &tensors[0];
    let w = weights.as_slice();
    let data: Vec<f32> = (0..t0.as_slice().len())
        .into_par_iter()
        .map(|k| {
            tensors
                .iter()
                .zip(w)
                .map(|(t, &wi)| wi * t.as_slice()[k] as f64)
                .sum::<f64>() as f32
        })
        .collect();
    BeliefTensor::new(t0.height(), t0.width(), t0.classes(), data)
}

/// Plurality of per-classifier argmax votes. Tied classes are separated by
/// the highest confidence any voter gave its vote among them; what remains
/// goes to the lowest class index.
pub fn majority_vote(tensors: &[BeliefTensor]) -> Result<LabelMap> {
    check_aligned(tensors)?;
    if tensors.len() < 2 {
        return Err(Error::usage("majority vote needs at least 2 classifiers"));
    }
    let t0 = &tensors[0];
    let m = t0.classes();
    let labels: Vec<u16> = (0..t0.pixels())
        .into_par_iter()
        .map(|p| {
            let mut votes = vec![0usize; m];
            let mut best_conf = vec![f32::NEG_INFINITY; m];
            for t in tensors {
                let row = t.pixel(p);
                let c = argmax_f32(row);
                votes[c] += 1;
                best_conf[c] = best_conf[c].max(row[c]);
            }
            let top = *votes.iter().max().expect("classes");
            let mut winner = usize::MAX;
            for c in 0..m {
                if votes[c] == top && (winner == usize::MAX || best_conf[c] > best_conf[winner]) {
                    winner = c;
                }
            }
            winner as u16
        })
        .collect();
    LabelMap::new(t0.height(), t0.width(), labels)
}

/// `g^a / (1 + g^a)` with `g` the geometric mean of the classifiers' odds,
/// evaluated as `sigmoid(a · mean logit)` on clamped scores.
pub fn logit_fuse(tensors: &[BeliefTensor], a: f64) -> Result<BeliefTensor> {
    check_aligned(tensors)?;
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::usage(format!("logit exponent must be positive, got {a}")));
    }
    let t0 = &tensors[0];
    let l = tensors.len() as f64;
    let data: Vec<f32> = (0..t0.as_slice().len())
        .into_par_iter()
        .map(|k| {
            let mean = tensors
                .iter()
                .map(|t| {
                    let p = (t.as_slice()[k] as f64).clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
                    p.ln() - (-p).ln_1p()
                })
                .sum::<f64>()
                / l;
            sigmoid(a * mean) as f32
        })
        .collect();
    BeliefTensor::new(t0.height(), t0.width(), t0.classes(), data)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
