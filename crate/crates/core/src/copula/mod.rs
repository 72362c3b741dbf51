//! Copula families: CDFs, densities, log-densities and samplers.
//!
//! Six families are supported: independence, Gaussian and Student-t
//! (elliptical), and the Clayton, Frank and Gumbel Archimedean families.
//! A [`CopulaModel`] is the serializable family + parameter description;
//! [`Copula`] is the validated evaluator with per-parameter precomputation
//! (Cholesky factors, normalizing constants) done once.

mod archimedean;
mod elliptical;
mod sample;
pub mod tau;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use elliptical::CorrelationMatrix;

/// Global clamp for uniforms: every copula input is forced into
/// `[CLAMP_EPS, 1 - CLAMP_EPS]` before evaluation.
pub const CLAMP_EPS: f64 = 1e-6;

#[inline]
pub fn clamp_unit(u: f64) -> f64 {
    if u.is_nan() {
        return 0.5;
    }
    u.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Independence,
    Gaussian,
    #[serde(rename = "studentt", alias = "student-t", alias = "t")]
    StudentT,
    Clayton,
    Frank,
    Gumbel,
}

impl CopulaFamily {
    pub const ALL: [CopulaFamily; 6] = [
        CopulaFamily::Independence,
        CopulaFamily::Gaussian,
        CopulaFamily::StudentT,
        CopulaFamily::Clayton,
        CopulaFamily::Frank,
        CopulaFamily::Gumbel,
    ];

    /// The five candidate families fitted per class, in tie-break order.
    pub const CANDIDATES: [CopulaFamily; 5] = [
        CopulaFamily::Gaussian,
        CopulaFamily::StudentT,
        CopulaFamily::Clayton,
        CopulaFamily::Frank,
        CopulaFamily::Gumbel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CopulaFamily::Independence => "independence",
            CopulaFamily::Gaussian => "gaussian",
            CopulaFamily::StudentT => "studentt",
            CopulaFamily::Clayton => "clayton",
            CopulaFamily::Frank => "frank",
            CopulaFamily::Gumbel => "gumbel",
        }
    }

    /// Number of free parameters at dimension `dim`, as used by AIC/BIC.
    pub fn parameter_count(self, dim: usize) -> usize {
        let pairs = dim * dim.saturating_sub(1) / 2;
        match self {
            CopulaFamily::Independence => 0,
            CopulaFamily::Gaussian => pairs,
            CopulaFamily::StudentT => pairs + 1,
            CopulaFamily::Clayton | CopulaFamily::Frank | CopulaFamily::Gumbel => 1,
        }
    }

    pub fn is_archimedean(self) -> bool {
        matches!(
            self,
            CopulaFamily::Clayton | CopulaFamily::Frank | CopulaFamily::Gumbel
        )
    }

    pub fn is_elliptical(self) -> bool {
        matches!(self, CopulaFamily::Gaussian | CopulaFamily::StudentT)
    }

    /// Whether a closed-form density is available at this dimension.
    pub fn supports_density(self, dim: usize) -> bool {
        match self {
            CopulaFamily::Frank | CopulaFamily::Gumbel => (2..=3).contains(&dim),
            _ => dim >= 2,
        }
    }
}

impl fmt::Display for CopulaFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CopulaFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independence" | "independent" | "indep" => Ok(CopulaFamily::Independence),
            "gaussian" | "normal" => Ok(CopulaFamily::Gaussian),
            "studentt" | "student-t" | "student_t" | "t" => Ok(CopulaFamily::StudentT),
            "clayton" => Ok(CopulaFamily::Clayton),
            "frank" => Ok(CopulaFamily::Frank),
            "gumbel" => Ok(CopulaFamily::Gumbel),
            other => Err(Error::usage(format!("unknown copula family '{other}'"))),
        }
    }
}

/// Family parameters. Fields a family does not use are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaParams {
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<CorrelationMatrix>,
}

/// A copula family tag together with its parameters.
///
/// Serializes as `{"family": ..., "dim": ..., "theta"?, "nu"?, "sigma"?}`
/// with `sigma` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaModel {
    pub family: CopulaFamily,
    #[serde(flatten)]
    pub params: CopulaParams,
}

impl CopulaModel {
    pub fn independence(dim: usize) -> Result<Self> {
        Self::checked(CopulaFamily::Independence, dim, None, None, None)
    }

    pub fn gaussian(sigma: CorrelationMatrix) -> Result<Self> {
        Self::checked(CopulaFamily::Gaussian, sigma.dim(), None, None, Some(sigma))
    }

    pub fn student_t(sigma: CorrelationMatrix, nu: f64) -> Result<Self> {
        Self::checked(
            CopulaFamily::StudentT,
            sigma.dim(),
            None,
            Some(nu),
            Some(sigma),
        )
    }

    pub fn clayton(dim: usize, theta: f64) -> Result<Self> {
        Self::checked(CopulaFamily::Clayton, dim, Some(theta), None, None)
    }

    pub fn frank(dim: usize, theta: f64) -> Result<Self> {
        Self::checked(CopulaFamily::Frank, dim, Some(theta), None, None)
    }

    pub fn gumbel(dim: usize, theta: f64) -> Result<Self> {
        Self::checked(CopulaFamily::Gumbel, dim, Some(theta), None, None)
    }

    /// Single-parameter Archimedean constructor by family.
    pub fn archimedean(family: CopulaFamily, dim: usize, theta: f64) -> Result<Self> {
        if !family.is_archimedean() {
            return Err(Error::usage(format!("{family} is not Archimedean")));
        }
        Self::checked(family, dim, Some(theta), None, None)
    }

    fn checked(
        family: CopulaFamily,
        dim: usize,
        theta: Option<f64>,
        nu: Option<f64>,
        sigma: Option<CorrelationMatrix>,
    ) -> Result<Self> {
        let model = CopulaModel {
            family,
            params: CopulaParams {
                dim,
                theta,
                nu,
                sigma,
            },
        };
        model.validate()?;
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn parameter_count(&self) -> usize {
        self.family.parameter_count(self.dim())
    }

    /// Check the parameters against the family's admissible range.
    pub fn validate(&self) -> Result<()> {
        let d = self.params.dim;
        if d < 2 {
            return Err(Error::domain(format!("copula dimension must be >= 2, got {d}")));
        }
        let theta = || {
            self.params
                .theta
                .filter(|t| t.is_finite())
                .ok_or_else(|| Error::domain(format!("{} needs a finite theta", self.family)))
        };
        let sigma = || {
            let s = self.params.sigma.as_ref().ok_or_else(|| {
                Error::domain(format!("{} needs a correlation matrix", self.family))
            })?;
            if s.dim() != d {
                return Err(Error::domain(format!(
                    "correlation matrix is {}x{} but dim is {d}",
                    s.dim(),
                    s.dim()
                )));
            }
            Ok(s)
        };
        match self.family {
            CopulaFamily::Independence => {}
            CopulaFamily::Gaussian => {
                sigma()?;
            }
            CopulaFamily::StudentT => {
                sigma()?;
                match self.params.nu {
                    Some(nu) if nu.is_finite() && nu >= 2.0 => {}
                    other => {
                        return Err(Error::domain(format!(
                            "student-t degrees of freedom must be finite and >= 2, got {other:?}"
                        )))
                    }
                }
            }
            CopulaFamily::Clayton => {
                let t = theta()?;
                if t <= 0.0 {
                    return Err(Error::domain(format!("clayton theta must be > 0, got {t}")));
                }
            }
            CopulaFamily::Frank => {
                let t = theta()?;
                if t == 0.0 {
                    return Err(Error::domain("frank theta must be nonzero"));
                }
                if d >= 3 && t < 0.0 {
                    return Err(Error::domain(format!(
                        "frank theta must be > 0 for dim {d}, got {t}"
                    )));
                }
            }
            CopulaFamily::Gumbel => {
                let t = theta()?;
                if t < 1.0 {
                    return Err(Error::domain(format!("gumbel theta must be >= 1, got {t}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Kernel {
    Independence,
    Gaussian(elliptical::Elliptical),
    StudentT(elliptical::StudentT),
    Clayton(f64),
    Frank(f64),
    Gumbel(f64),
}

/// Validated copula with precomputed constants, ready for repeated
/// evaluation. Immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct Copula {
    model: CopulaModel,
    kernel: Kernel,
}

impl Copula {
    pub fn new(model: &CopulaModel) -> Result<Self> {
        model.validate()?;
        let p = &model.params;
        let kernel = match model.family {
            CopulaFamily::Independence => Kernel::Independence,
            CopulaFamily::Gaussian => {
                Kernel::Gaussian(elliptical::Elliptical::new(p.sigma.as_ref().unwrap())?)
            }
            CopulaFamily::StudentT => Kernel::StudentT(elliptical::StudentT::new(
                p.sigma.as_ref().unwrap(),
                p.nu.unwrap(),
            )?),
            CopulaFamily::Clayton => Kernel::Clayton(p.theta.unwrap()),
            CopulaFamily::Frank => Kernel::Frank(p.theta.unwrap()),
            CopulaFamily::Gumbel => Kernel::Gumbel(p.theta.unwrap()),
        };
        Ok(Copula {
            model: model.clone(),
            kernel,
        })
    }

    pub fn model(&self) -> &CopulaModel {
        &self.model
    }

    pub fn family(&self) -> CopulaFamily {
        self.model.family
    }

    pub fn dim(&self) -> usize {
        self.model.params.dim
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim() {
            return Err(Error::usage(format!(
                "expected a {}-dimensional point, got {}",
                self.dim(),
                u.len()
            )));
        }
        Ok(())
    }

    /// Copula CDF at `u` (inputs clamped into the open unit cube).
    pub fn cdf(&self, u: &[f64]) -> Result<f64> {
        self.check_len(u)?;
        let u: Vec<f64> = u.iter().copied().map(clamp_unit).collect();
        let value = match &self.kernel {
            Kernel::Independence => u.iter().product(),
            Kernel::Gaussian(e) => {
                if u.len() != 2 {
                    return Err(elliptical_cdf_unsupported(self.family(), u.len()));
                }
                e.gaussian_cdf2(u[0], u[1])
            }
            Kernel::StudentT(t) => {
                if u.len() != 2 {
                    return Err(elliptical_cdf_unsupported(self.family(), u.len()));
                }
                t.cdf2(u[0], u[1])
            }
            Kernel::Clayton(theta) => archimedean::clayton_cdf(*theta, &u),
            Kernel::Frank(theta) => archimedean::frank_cdf(*theta, &u),
            Kernel::Gumbel(theta) => archimedean::gumbel_cdf(*theta, &u),
        };
        Ok(value.clamp(0.0, 1.0))
    }

    pub fn density(&self, u: &[f64]) -> Result<f64> {
        Ok(self.log_density(u)?.exp())
    }

    pub fn log_density(&self, u: &[f64]) -> Result<f64> {
        self.check_len(u)?;
        if !self.family().supports_density(self.dim()) {
            return Err(Error::Capability(format!(
                "{} density is only available for dim 2 or 3, got {}",
                self.family(),
                self.dim()
            )));
        }
        Ok(self.log_density_unchecked(u))
    }

    /// Log-density without length/capability checks; `u.len()` must equal
    /// `dim()` and the family must support this dimension.
    pub(crate) fn log_density_unchecked(&self, u: &[f64]) -> f64 {
        let mut buf = [0.0f64; 8];
        let mut heap;
        let clamped: &mut [f64] = if u.len() <= buf.len() {
            &mut buf[..u.len()]
        } else {
            heap = vec![0.0; u.len()];
            &mut heap
        };
        for (c, &x) in clamped.iter_mut().zip(u) {
            *c = clamp_unit(x);
        }
        let u = &*clamped;
        match &self.kernel {
            Kernel::Independence => 0.0,
            Kernel::Gaussian(e) => e.gaussian_log_density(u),
            Kernel::StudentT(t) => t.log_density(u),
            Kernel::Clayton(theta) => archimedean::clayton_log_density(*theta, u),
            Kernel::Frank(theta) => archimedean::frank_log_density(*theta, u),
            Kernel::Gumbel(theta) => archimedean::gumbel_log_density(*theta, u),
        }
    }

    /// Sum of log-densities over the rows of `u`.
    pub fn log_likelihood(&self, u: &Array2<f64>) -> Result<f64> {
        if u.ncols() != self.dim() {
            return Err(Error::usage(format!(
                "expected {} columns, got {}",
                self.dim(),
                u.ncols()
            )));
        }
        if !self.family().supports_density(self.dim()) {
            return Err(Error::Capability(format!(
                "{} density is only available for dim 2 or 3, got {}",
                self.family(),
                self.dim()
            )));
        }
        Ok(self.log_likelihood_unchecked(u))
    }

    pub(crate) fn log_likelihood_unchecked(&self, u: &Array2<f64>) -> f64 {
        use rayon::prelude::*;
        // Per-row terms are collected in order and summed sequentially so
        // the total is bit-reproducible regardless of thread count.
        let d = self.dim();
        let owned;
        let flat = match u.as_slice() {
            Some(s) => s,
            None => {
                owned = u.as_standard_layout().into_owned();
                owned.as_slice().unwrap()
            }
        };
        let terms: Vec<f64> = flat
            .par_chunks(d)
            .map(|row| self.log_density_unchecked(row))
            .collect();
        terms.iter().sum()
    }

    /// Draw `n` points; rows are clamped into `[CLAMP_EPS, 1 - CLAMP_EPS]`.
    pub fn sample<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::<f64>::zeros((n, d));
        let mut row = vec![0.0; d];
        for mut target in out.outer_iter_mut() {
            match &self.kernel {
                Kernel::Independence => sample::independence(rng, &mut row),
                Kernel::Gaussian(e) => sample::gaussian(e, rng, &mut row),
                Kernel::StudentT(t) => sample::student_t(t, rng, &mut row),
                Kernel::Clayton(theta) => sample::clayton(*theta, rng, &mut row),
                Kernel::Frank(theta) => sample::frank(*theta, rng, &mut row),
                Kernel::Gumbel(theta) => sample::gumbel(*theta, rng, &mut row),
            }
            for (t, &v) in target.iter_mut().zip(&row) {
                *t = clamp_unit(v);
            }
        }
        out
    }
}

fn elliptical_cdf_unsupported(family: CopulaFamily, d: usize) -> Error {
    Error::Capability(format!(
        "{family} copula CDF is only provided for dim 2, got {d}"
    ))
}

pub fn copula_cdf(model: &CopulaModel, u: &[f64]) -> Result<f64> {
    Copula::new(model)?.cdf(u)
}

pub fn copula_density(model: &CopulaModel, u: &[f64]) -> Result<f64> {
    Copula::new(model)?.density(u)
}

pub fn copula_log_density(model: &CopulaModel, u: &[f64]) -> Result<f64> {
    Copula::new(model)?.log_density(u)
}

/// `n × d` matrix of draws, deterministic for a given seed.
pub fn sample_copula(model: &CopulaModel, n: usize, seed: u64) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::usage("sample size must be at least 1"));
    }
    let copula = Copula::new(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(copula.sample(n, &mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_round_trip() {
        for f in CopulaFamily::ALL {
            let json = serde_json::to_string(&f).unwrap();
            assert_eq!(json, format!("\"{}\"", f.name()));
            let back: CopulaFamily = serde_json::from_str(&json).unwrap();
            assert_eq!(back, f);
            assert_eq!(f.name().parse::<CopulaFamily>().unwrap(), f);
        }
        assert_eq!("student-t".parse::<CopulaFamily>().unwrap(), CopulaFamily::StudentT);
        assert!("vine".parse::<CopulaFamily>().is_err());
    }

    #[test]
    fn model_json_shape() {
        let m = CopulaModel::clayton(3, 2.0).unwrap();
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v, serde_json::json!({"family": "clayton", "dim": 3, "theta": 2.0}));

        let sigma = CorrelationMatrix::equicorrelated(2, 0.5).unwrap();
        let m = CopulaModel::student_t(sigma, 4.0).unwrap();
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"family": "studentt", "dim": 2, "nu": 4.0, "sigma": [1.0, 0.5, 0.5, 1.0]})
        );
        let back: CopulaModel = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn parameter_ranges() {
        assert!(CopulaModel::clayton(2, 0.0).is_err());
        assert!(CopulaModel::clayton(2, -0.5).is_err());
        assert!(CopulaModel::gumbel(2, 0.99).is_err());
        assert!(CopulaModel::gumbel(2, 1.0).is_ok());
        assert!(CopulaModel::frank(2, -3.0).is_ok());
        assert!(CopulaModel::frank(3, -3.0).is_err());
        assert!(CopulaModel::frank(2, 0.0).is_err());
        assert!(CopulaModel::independence(1).is_err());
        let sigma = CorrelationMatrix::equicorrelated(2, 0.3).unwrap();
        assert!(CopulaModel::student_t(sigma.clone(), 1.5).is_err());
        assert!(CopulaModel::student_t(sigma, f64::INFINITY).is_err());
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(CopulaFamily::Gaussian.parameter_count(3), 3);
        assert_eq!(CopulaFamily::StudentT.parameter_count(3), 4);
        assert_eq!(CopulaFamily::Clayton.parameter_count(5), 1);
        assert_eq!(CopulaFamily::Independence.parameter_count(3), 0);
    }

    #[test]
    fn cdf_examples() {
        let ind = CopulaModel::independence(2).unwrap();
        assert!((copula_cdf(&ind, &[0.3, 0.5]).unwrap() - 0.15).abs() < 1e-15);
        let gum = CopulaModel::gumbel(2, 1.0).unwrap();
        assert!((copula_cdf(&gum, &[0.4, 0.7]).unwrap() - 0.28).abs() < 1e-12);
        let clay = CopulaModel::clayton(2, 1.0).unwrap();
        assert!((copula_cdf(&clay, &[0.5, 0.5]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn clayton_cdf_matches_monte_carlo() {
        // Oracle: fraction of sampler draws in the lower-left quadrant.
        let clay = CopulaModel::clayton(2, 1.0).unwrap();
        let draws = sample_copula(&clay, 1_000_000, 7).unwrap();
        let hits = draws
            .outer_iter()
            .filter(|r| r[0] <= 0.5 && r[1] <= 0.5)
            .count();
        let mc = hits as f64 / 1e6;
        assert!((mc - 1.0 / 3.0).abs() < 0.002, "{mc}");
    }

    #[test]
    fn capability_errors() {
        let sigma = CorrelationMatrix::equicorrelated(3, 0.2).unwrap();
        let g = CopulaModel::gaussian(sigma).unwrap();
        assert!(matches!(
            copula_cdf(&g, &[0.3, 0.4, 0.5]),
            Err(Error::Capability(_))
        ));
        assert!(copula_density(&g, &[0.3, 0.4, 0.5]).is_ok());
        let f = CopulaModel::frank(4, 2.0).unwrap();
        assert!(matches!(
            copula_density(&f, &[0.3; 4]),
            Err(Error::Capability(_))
        ));
        assert!(copula_cdf(&f, &[0.3; 4]).is_ok());
        let c = CopulaModel::clayton(5, 2.0).unwrap();
        assert!(copula_density(&c, &[0.3; 5]).is_ok());
    }

    #[test]
    fn density_examples() {
        let ind = CopulaModel::independence(3).unwrap();
        assert_eq!(copula_density(&ind, &[0.1, 0.5, 0.9]).unwrap(), 1.0);
        assert_eq!(copula_log_density(&ind, &[0.1, 0.5, 0.9]).unwrap(), 0.0);
        let g0 = CopulaModel::gaussian(CorrelationMatrix::identity(2)).unwrap();
        assert!((copula_density(&g0, &[0.2, 0.7]).unwrap() - 1.0).abs() < 1e-14);
        let g = CopulaModel::gaussian(CorrelationMatrix::equicorrelated(2, 0.5).unwrap()).unwrap();
        let c = copula_density(&g, &[0.5, 0.5]).unwrap();
        assert!((c - 1.0 / 0.75f64.sqrt()).abs() < 1e-12, "{c}");
        assert!((c - 1.154701).abs() < 1e-6);
        let lc = copula_log_density(&g, &[0.5, 0.5]).unwrap();
        assert!((lc - 0.143841).abs() < 1e-6);
    }

    #[test]
    fn gaussian_density_matches_finite_difference_of_cdf() {
        let g = CopulaModel::gaussian(CorrelationMatrix::equicorrelated(2, 0.5).unwrap()).unwrap();
        let c = Copula::new(&g).unwrap();
        let h = 1e-3;
        let f = |a: f64, b: f64| c.cdf(&[a, b]).unwrap();
        let fd = (f(0.5 + h, 0.5 + h) - f(0.5 + h, 0.5 - h) - f(0.5 - h, 0.5 + h)
            + f(0.5 - h, 0.5 - h))
            / (4.0 * h * h);
        assert!((fd - 1.154701).abs() < 1e-5, "{fd}");
    }

    #[test]
    fn sampling_is_deterministic_and_rejects_bad_n() {
        let m = CopulaModel::frank(2, 3.0).unwrap();
        let a = sample_copula(&m, 100, 9).unwrap();
        let b = sample_copula(&m, 100, 9).unwrap();
        let c = sample_copula(&m, 100, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(sample_copula(&m, 0, 1).is_err());
    }
}
