//! Gaussian and Student-t copulas.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quadrature::{gl20, unit_interval_breaks};
use crate::special::{
    ndtri, std_normal_cdf, student_t_cdf, student_t_ln_norm, t_quantile_unchecked,
};

/// Symmetric positive-definite matrix with unit diagonal, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CorrelationMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl CorrelationMatrix {
    /// Validate a row-major `dim × dim` matrix.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(Error::domain(format!(
                "correlation matrix needs {} entries for dim {dim}, got {}",
                dim * dim,
                data.len()
            )));
        }
        for i in 0..dim {
            if data[i * dim + i] != 1.0 {
                return Err(Error::domain(format!(
                    "correlation matrix diagonal entry {i} is {}, expected 1",
                    data[i * dim + i]
                )));
            }
            for j in 0..i {
                let a = data[i * dim + j];
                let b = data[j * dim + i];
                if !a.is_finite() || (a - b).abs() > 1e-12 {
                    return Err(Error::domain(format!(
                        "correlation matrix is not symmetric at ({i}, {j})"
                    )));
                }
                if a.abs() >= 1.0 {
                    return Err(Error::domain(format!(
                        "correlation ({i}, {j}) = {a} is outside (-1, 1)"
                    )));
                }
            }
        }
        let m = CorrelationMatrix { dim, data };
        if m.cholesky().is_none() {
            return Err(Error::domain("correlation matrix is not positive definite"));
        }
        Ok(m)
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        CorrelationMatrix { dim, data }
    }

    /// All off-diagonal entries equal to `rho`.
    pub fn equicorrelated(dim: usize, rho: f64) -> Result<Self> {
        let mut data = vec![rho; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self::new(dim, data)
    }

    /// Build from strict-upper-triangle entries in row order
    /// `(0,1), (0,2), …, (1,2), …`.
    pub fn from_upper(dim: usize, upper: &[f64]) -> Result<Self> {
        if upper.len() != dim * dim.saturating_sub(1) / 2 {
            return Err(Error::domain(format!(
                "expected {} upper-triangle entries for dim {dim}, got {}",
                dim * dim.saturating_sub(1) / 2,
                upper.len()
            )));
        }
        let mut data = Self::identity(dim).data;
        let mut k = 0;
        for i in 0..dim {
            for j in i + 1..dim {
                data[i * dim + j] = upper[k];
                data[j * dim + i] = upper[k];
                k += 1;
            }
        }
        Self::new(dim, data)
    }

    /// Closest valid correlation matrix to a symmetric pseudo-correlation
    /// matrix: eigenvalues are clipped at `1e-6` and the result is rescaled
    /// to unit diagonal. The flag reports whether any change was needed.
    pub fn nearest(dim: usize, data: &[f64]) -> Result<(Self, bool)> {
        if data.len() != dim * dim || dim == 0 {
            return Err(Error::domain("matrix size does not match dimension"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("matrix has non-finite entries"));
        }
        let mut sym = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                sym[i * dim + j] = if i == j {
                    1.0
                } else {
                    0.5 * (data[i * dim + j] + data[j * dim + i])
                };
            }
        }
        if let Ok(m) = Self::new(dim, sym.clone()) {
            let min_eig = SymmetricEigen::new(DMatrix::from_row_slice(dim, dim, &sym))
                .eigenvalues
                .min();
            if min_eig >= 1e-6 {
                return Ok((m, false));
            }
        }
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(dim, dim, &sym));
        let clipped = eig.eigenvalues.map(|l| l.max(1e-6));
        let rebuilt = &eig.eigenvectors
            * DMatrix::from_diagonal(&clipped)
            * eig.eigenvectors.transpose();
        let mut out = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                out[i * dim + j] = if i == j {
                    1.0
                } else {
                    let v = rebuilt[(i, j)] / (rebuilt[(i, i)] * rebuilt[(j, j)]).sqrt();
                    v.clamp(-1.0 + 1e-9, 1.0 - 1e-9)
                };
            }
        }
        for i in 0..dim {
            for j in 0..i {
                out[i * dim + j] = out[j * dim + i];
            }
        }
        Ok((Self::new(dim, out)?, true))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Strict-upper-triangle entries in row order.
    pub fn upper(&self) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .flat_map(|i| (i + 1..d).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect()
    }

    fn cholesky(&self) -> Option<DMatrix<f64>> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
            .cholesky()
            .map(|c| c.l())
    }
}

impl TryFrom<Vec<f64>> for CorrelationMatrix {
    type Error = Error;

    fn try_from(data: Vec<f64>) -> Result<Self> {
        let dim = (data.len() as f64).sqrt().round() as usize;
        Self::new(dim, data)
    }
}

impl From<CorrelationMatrix> for Vec<f64> {
    fn from(m: CorrelationMatrix) -> Self {
        m.data
    }
}

/// Shared elliptical machinery: Cholesky factor and log-determinant.
#[derive(Debug, Clone)]
pub(crate) struct Elliptical {
    dim: usize,
    /// Lower Cholesky factor, row-major.
    chol: Vec<f64>,
    ln_det: f64,
    rho: f64,
}

impl Elliptical {
    pub(crate) fn new(sigma: &CorrelationMatrix) -> Result<Self> {
        let l = sigma
            .cholesky()
            .ok_or_else(|| Error::domain("correlation matrix is not positive definite"))?;
        let d = sigma.dim();
        let mut chol = vec![0.0; d * d];
        let mut ln_det = 0.0;
        for i in 0..d {
            for j in 0..=i {
                chol[i * d + j] = l[(i, j)];
            }
            ln_det += 2.0 * l[(i, i)].ln();
        }
        let rho = if d >= 2 { sigma.get(0, 1) } else { 0.0 };
        Ok(Elliptical {
            dim: d,
            chol,
            ln_det,
            rho,
        })
    }

    pub(crate) fn chol(&self) -> (&[f64], usize) {
        (&self.chol, self.dim)
    }

    /// `xᵀ Σ⁻¹ x` by forward substitution.
    fn mahalanobis(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut y = [0.0f64; 16];
        let mut heap;
        let y: &mut [f64] = if d <= 16 {
            &mut y[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut q = 0.0;
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i];
            let s: f64 = row.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
            y[i] = (x[i] - s) / self.chol[i * d + i];
            q += y[i] * y[i];
        }
        q
    }

    pub(crate) fn gaussian_log_density(&self, u: &[f64]) -> f64 {
        let mut q = [0.0f64; 16];
        let mut heap;
        let q: &mut [f64] = if u.len() <= 16 {
            &mut q[..u.len()]
        } else {
            heap = vec![0.0; u.len()];
            &mut heap
        };
        let mut sq = 0.0;
        for (qi, &ui) in q.iter_mut().zip(u) {
            *qi = ndtri(ui);
            sq += *qi * *qi;
        }
        -0.5 * self.ln_det - 0.5 * (self.mahalanobis(q) - sq)
    }

    /// Bivariate Gaussian copula CDF: `∫₀^{u1} Φ((q2 − ρ q(p)) / √(1−ρ²)) dp`.
    pub(crate) fn gaussian_cdf2(&self, u1: f64, u2: f64) -> f64 {
        let rho = self.rho;
        if rho == 0.0 {
            return u1 * u2;
        }
        let q2 = ndtri(u2);
        let s = (1.0 - rho * rho).sqrt();
        let h = |p: f64| std_normal_cdf((q2 - rho * ndtri(p)) / s);
        // the conditional CDF switches around q(p) = q2 / rho
        let centre = q2 / rho;
        let width = s / rho.abs();
        let knots: Vec<f64> = [-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0]
            .iter()
            .map(|k| std_normal_cdf(centre + k * width))
            .collect();
        integrate_conditional(h, u1, &knots)
    }
}

/// Student-t copula with precomputed normalizing constants.
#[derive(Debug, Clone)]
pub(crate) struct StudentT {
    base: Elliptical,
    nu: f64,
    /// `ln Γ((ν+d)/2) − ln Γ(ν/2) − (d/2) ln(νπ) − ½ ln|Σ| − d·ln_norm1`
    ln_const: f64,
}

impl StudentT {
    pub(crate) fn new(sigma: &CorrelationMatrix, nu: f64) -> Result<Self> {
        let base = Elliptical::new(sigma)?;
        let d = base.dim as f64;
        let ln_joint = ln_gamma(0.5 * (nu + d))
            - ln_gamma(0.5 * nu)
            - 0.5 * d * (nu * std::f64::consts::PI).ln();
        let ln_const = ln_joint - 0.5 * base.ln_det - d * student_t_ln_norm(nu);
        Ok(StudentT { base, nu, ln_const })
    }

    pub(crate) fn nu(&self) -> f64 {
        self.nu
    }

    pub(crate) fn chol(&self) -> (&[f64], usize) {
        self.base.chol()
    }

    pub(crate) fn log_density(&self, u: &[f64]) -> f64 {
        let nu = self.nu;
        let d = u.len() as f64;
        let mut x = [0.0f64; 16];
        let mut heap;
        let x: &mut [f64] = if u.len() <= 16 {
            &mut x[..u.len()]
        } else {
            heap = vec![0.0; u.len()];
            &mut heap
        };
        let mut marg = 0.0;
        for (xi, &ui) in x.iter_mut().zip(u) {
            *xi = t_quantile_unchecked(ui, nu);
            marg += (*xi * *xi / nu).ln_1p();
        }
        let q = self.base.mahalanobis(x);
        self.ln_const - 0.5 * (nu + d) * (q / nu).ln_1p() + 0.5 * (nu + 1.0) * marg
    }

    /// Bivariate t copula CDF by integrating the conditional distribution
    /// `F_{ν+1}((x2 − ρ x(p)) / √((ν + x(p)²)(1−ρ²)/(ν+1)))`.
    pub(crate) fn cdf2(&self, u1: f64, u2: f64) -> f64 {
        let rho = self.base.rho;
        let nu = self.nu;
        let x2 = t_quantile_unchecked(u2, nu);
        let one_m = 1.0 - rho * rho;
        let h = |p: f64| {
            let x1 = t_quantile_unchecked(p, nu);
            let scale = ((nu + x1 * x1) * one_m / (nu + 1.0)).sqrt();
            student_t_cdf((x2 - rho * x1) / scale, nu + 1.0)
        };
        let mut knots = Vec::new();
        if rho != 0.0 {
            let centre = x2 / rho;
            let width = (one_m * (nu + centre * centre) / (nu + 1.0)).sqrt() / rho.abs();
            for k in [-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0] {
                knots.push(student_t_cdf(centre + k * width, nu));
            }
        }
        integrate_conditional(h, u1, &knots)
    }
}

/// `∫₀^{u1} h(p) dp` with panels graded toward 0 and 1 plus extra knots
/// where `h` changes quickly.
fn integrate_conditional(h: impl Fn(f64) -> f64, u1: f64, knots: &[f64]) -> f64 {
    let mut breaks: Vec<f64> = std::iter::once(0.0)
        .chain(unit_interval_breaks(1e-12))
        .chain(knots.iter().copied())
        .filter(|&b| b >= 0.0 && b < u1)
        .collect();
    breaks.push(u1);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let rule = gl20();
    breaks
        .windows(2)
        .map(|w| rule.apply(&h, w[0], w[1]))
        .sum()
}
