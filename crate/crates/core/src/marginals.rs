//! Gaussian-kernel density estimates for the per-classifier belief scores.
//!
//! [`KdeModel`] evaluates exactly by summing kernels over a window of the
//! sorted sample set. [`KdeGrid`] tabulates the CDF and log-density on a
//! fine grid (spacing at most `h/16`) and interpolates with quintic
//! Hermite polynomials; fitting and fusion use it because they evaluate the same
//! marginals hundreds of thousands of times.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::special::std_normal_cdf;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Kernels further than this many bandwidths away contribute below 1e-15.
const WINDOW: f64 = 8.0;

/// Fallback bandwidth for samples with no spread.
pub const DEGENERATE_BANDWIDTH: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth {
    pub h: f64,
    /// The sample set had zero spread and `h` is the fixed fallback.
    pub degenerate: bool,
}

/// Silverman's rule `0.9 · min(σ̂, IQR/1.34) · k^(−1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<Bandwidth> {
    let k = samples.len();
    if k < 2 {
        return Err(Error::data(format!(
            "bandwidth needs at least 2 samples, got {k}"
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::data("bandwidth samples must be finite"));
    }
    let n = k as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => {
            return Ok(Bandwidth {
                h: DEGENERATE_BANDWIDTH,
                degenerate: true,
            })
        }
    };
    Ok(Bandwidth {
        h: 0.9 * spread * n.powf(-0.2),
        degenerate: false,
    })
}

/// Linear-interpolation quantile (type 7) of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Kernel density estimate: sorted samples plus bandwidth.
#[derive(Debug, Clone)]
pub struct KdeModel {
    samples: Vec<f64>,
    bandwidth: f64,
    /// Range used for 16-bit quantized serialization, if enabled.
    q16: Option<(f64, f64)>,
    grid: OnceLock<KdeGrid>,
}

impl PartialEq for KdeModel {
    fn eq(&self, other: &Self) -> bool {
        self.bandwidth == other.bandwidth && self.samples == other.samples && self.q16 == other.q16
    }
}

impl KdeModel {
    /// Model with an explicit bandwidth. A single sample is accepted.
    pub fn new(mut samples: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::data("kernel density needs at least one sample"));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::data("kernel density samples must be finite"));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::domain(format!(
                "bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        samples.sort_by(f64::total_cmp);
        Ok(KdeModel {
            samples,
            bandwidth,
            q16: None,
            grid: OnceLock::new(),
        })
    }

    /// Model with the Silverman bandwidth (or `bandwidth` if given).
    pub fn fit(samples: Vec<f64>, bandwidth: Option<f64>) -> Result<(Self, Bandwidth)> {
        let bw = match bandwidth {
            Some(h) => Bandwidth {
                h,
                degenerate: false,
            },
            None => silverman_bandwidth(&samples)?,
        };
        Ok((Self::new(samples, bw.h)?, bw))
    }

    /// Quantize the samples to 16-bit fixed point over their range; the
    /// model then serializes in the compact `q16` form and round-trips
    /// exactly.
    pub fn quantized(self) -> Self {
        let lo = self.samples[0];
        let hi = *self.samples.last().unwrap();
        let samples = if hi > lo {
            self.samples
                .iter()
                .map(|&x| dequantize(quantize(x, lo, hi), lo, hi))
                .collect()
        } else {
            self.samples
        };
        KdeModel {
            samples,
            bandwidth: self.bandwidth,
            q16: Some((lo, hi)),
            grid: OnceLock::new(),
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn lower_index(&self, x: f64) -> usize {
        self.samples.partition_point(|&s| s < x)
    }

    /// `(1/kh) Σ φ((x − x_i)/h)`
    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// Log-density, accurate far outside the data where `pdf` underflows.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.ln_pdf_derivatives(x)[0]
    }

    /// `ln f(x)` with its first and second derivatives. Kernels are
    /// accumulated relative to the nearest sample, keeping every term
    /// within `e^-32` of the largest.
    pub fn ln_pdf_derivatives(&self, x: f64) -> [f64; 3] {
        if x.is_nan() {
            return [f64::NAN; 3];
        }
        let h = self.bandwidth;
        let s = &self.samples;
        let idx = self.lower_index(x);
        let nearest = match (idx.checked_sub(1), s.get(idx)) {
            (Some(i), Some(&b)) => (x - s[i]).abs().min((b - x).abs()),
            (Some(i), None) => (x - s[i]).abs(),
            (None, Some(&b)) => (b - x).abs(),
            (None, None) => unreachable!(),
        };
        if !nearest.is_finite() {
            return [f64::NEG_INFINITY, 0.0, 0.0];
        }
        let zn = nearest / h;
        let reach = h * (zn * zn + 64.0).sqrt();
        let first = s.partition_point(|&v| v < x - reach);
        let last = s.partition_point(|&v| v <= x + reach);
        let top = -0.5 * zn * zn;
        let (mut w0, mut w1, mut w2) = (0.0, 0.0, 0.0);
        for &v in &s[first..last] {
            let z = (x - v) / h;
            let w = (-0.5 * z * z - top).exp();
            w0 += w;
            w1 += w * z;
            w2 += w * z * z;
        }
        let k = s.len() as f64;
        let ln = top + w0.ln() - (k * h).ln() - LN_SQRT_2PI;
        let m1 = w1 / w0;
        let m2 = w2 / w0;
        [ln, -m1 / h, (m2 - 1.0 - m1 * m1) / (h * h)]
    }

    /// `(1/k) Σ Φ((x − x_i)/h)`; kernels further than `8h` below `x`
    /// count as one.
    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        let h = self.bandwidth;
        let s = &self.samples;
        let first = s.partition_point(|&v| v < x - WINDOW * h);
        let last = s.partition_point(|&v| v <= x + WINDOW * h);
        let mut sum = first as f64;
        for &v in &s[first..last] {
            sum += std_normal_cdf((x - v) / h);
        }
        (sum / s.len() as f64).clamp(0.0, 1.0)
    }

    /// Tabulated evaluator, built on first use.
    pub fn grid(&self) -> &KdeGrid {
        self.grid.get_or_init(|| KdeGrid::build(self))
    }
}

fn quantize(x: f64, lo: f64, hi: f64) -> u16 {
    (((x - lo) / (hi - lo)) * 65535.0).round().clamp(0.0, 65535.0) as u16
}

fn dequantize(q: u16, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * (q as f64 / 65535.0)
}

/// Quintic Hermite tables of the CDF and log-density on a uniform grid
/// over `[min − 8h, max + 8h]`; queries outside the grid fall back to the
/// exact sums.
#[derive(Debug, Clone)]
pub struct KdeGrid {
    lo: f64,
    step: f64,
    /// Per node: `[F, f, f', g, g', g'']` with `g = ln f`.
    nodes: Vec<[f64; 6]>,
    exact: Box<KdeModel>,
}

const MAX_NODES: usize = 65_537;

impl KdeGrid {
    fn build(model: &KdeModel) -> Self {
        let h = model.bandwidth;
        let lo = model.samples[0] - WINDOW * h;
        let hi = model.samples[model.samples.len() - 1] + WINDOW * h;
        let intervals = (((hi - lo) / (h / 16.0)).ceil() as usize).clamp(16, MAX_NODES - 1);
        let step = (hi - lo) / intervals as f64;
        let nodes = (0..=intervals)
            .into_par_iter()
            .map(|i| {
                let x = lo + step * i as f64;
                let [g, g1, g2] = model.ln_pdf_derivatives(x);
                let f = g.exp();
                [model.cdf(x), f, f * g1, g, g1, g2]
            })
            .collect();
        let exact = KdeModel {
            samples: model.samples.clone(),
            bandwidth: model.bandwidth,
            q16: model.q16,
            grid: OnceLock::new(),
        };
        KdeGrid {
            lo,
            step,
            nodes,
            exact: Box::new(exact),
        }
    }

    #[inline]
    fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let t = (x - self.lo) / self.step;
        if !(t >= 0.0) {
            return None;
        }
        let i = t as usize;
        if i + 1 >= self.nodes.len() {
            return None;
        }
        Some((i, t - i as f64))
    }

    #[inline]
    fn interpolate(&self, i: usize, t: f64, at: usize) -> f64 {
        let (a, b) = (&self.nodes[i], &self.nodes[i + 1]);
        let d = self.step;
        quintic(
            [a[at], a[at + 1] * d, a[at + 2] * d * d],
            [b[at], b[at + 1] * d, b[at + 2] * d * d],
            t,
        )
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self.locate(x) {
            Some((i, t)) => self.interpolate(i, t, 0).clamp(0.0, 1.0),
            None => self.exact.cdf(x),
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match self.locate(x) {
            Some((i, t)) => self.interpolate(i, t, 3),
            None => self.exact.ln_pdf(x),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }
}

/// Quintic Hermite interpolant on `[0, 1]` from value, first and second
/// derivative at both ends.
#[inline]
fn quintic(p0: [f64; 3], p1: [f64; 3], t: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
    let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
    let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
    let h3 = 0.5 * (t3 - 2.0 * t4 + t5);
    let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
    let h5 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    h0 * p0[0] + h1 * p0[1] + h2 * p0[2] + h3 * p1[2] + h4 * p1[1] + h5 * p1[0]
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum KdeRepr {
    Quantized {
        encoding: String,
        bandwidth: f64,
        lo: f64,
        hi: f64,
        samples: Vec<u16>,
    },
    Plain {
        bandwidth: f64,
        samples: Vec<f64>,
    },
}

impl Serialize for KdeModel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self.q16 {
            Some((lo, hi)) => KdeRepr::Quantized {
                encoding: "q16".into(),
                bandwidth: self.bandwidth,
                lo,
                hi,
                samples: if hi > lo {
                    self.samples.iter().map(|&x| quantize(x, lo, hi)).collect()
                } else {
                    vec![0; self.samples.len()]
                },
            },
            None => KdeRepr::Plain {
                bandwidth: self.bandwidth,
                samples: self.samples.clone(),
            },
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for KdeModel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match KdeRepr::deserialize(deserializer)? {
            KdeRepr::Plain { bandwidth, samples } => {
                KdeModel::new(samples, bandwidth).map_err(D::Error::custom)
            }
            KdeRepr::Quantized {
                encoding,
                bandwidth,
                lo,
                hi,
                samples,
            } => {
                if encoding != "q16" {
                    return Err(D::Error::custom(format!(
                        "unknown sample encoding '{encoding}'"
                    )));
                }
                if !(lo.is_finite() && hi.is_finite() && hi >= lo) {
                    return Err(D::Error::custom("q16 range must satisfy lo <= hi"));
                }
                let values = samples.iter().map(|&q| dequantize(q, lo, hi)).collect();
                let mut m = KdeModel::new(values, bandwidth).map_err(D::Error::custom)?;
                m.q16 = Some((lo, hi));
                Ok(m)
            }
        }
    }
}
