//! Univariate special functions used by the copula families and the simulator.
//!
//! Gamma and incomplete-beta primitives come from `statrs` and `erfc` from
//! `libm` (statrs' erfc is only good to ~1e-11 relative); the
//! quantile functions are implemented here because the copula likelihoods
//! call them millions of times per fit and need both speed and ~1e-14
//! round-trip accuracy.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use statrs::function::beta::{beta_reg, inv_beta_reg, ln_beta};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn std_normal_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Inverse of the standard normal CDF (Wichura's AS 241, PPND16).
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "normal quantile needs 0 < p < 1, got {p}"
        )));
    }
    Ok(ndtri(p))
}

/// Unchecked AS 241; callers guarantee `0 < p < 1`.
pub(crate) fn ndtri(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2509.080_928_730_122_7 * r + 33430.575_583_588_13) * r
            + 67265.770_927_008_7)
            * r
            + 45921.953_931_549_87)
            * r
            + 13731.693_765_509_46)
            * r
            + 1971.590_950_306_551_4)
            * r
            + 133.141_667_891_784_38)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((5226.495_278_852_546 * r + 28729.085_735_721_943) * r
            + 39307.895_800_092_71)
            * r
            + 21213.794_301_586_597)
            * r
            + 5394.196_021_424_751)
            * r
            + 687.187_007_492_057_9)
            * r
            + 42.313_330_701_600_91)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_6)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 0.015_198_666_563_616_457)
            * r
            + 0.148_103_976_427_480_08)
            * r
            + 0.689_767_334_985_1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 0.014_875_361_290_850_615)
            * r
            + 0.136_929_880_922_735_8)
            * r
            + 0.599_832_206_555_887_9)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Natural log of the Student-t density with `nu` degrees of freedom.
pub fn student_t_ln_pdf(x: f64, nu: f64) -> f64 {
    student_t_ln_norm(nu) - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
}

/// Normalizing constant `ln Γ((ν+1)/2) − ln Γ(ν/2) − ½ ln(νπ)`.
pub fn student_t_ln_norm(nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln()
}

/// Student-t CDF.
pub fn student_t_cdf(x: f64, nu: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let lower = t_lower_tail(-x.abs(), nu);
    if x > 0.0 {
        1.0 - lower
    } else {
        lower
    }
}

/// `P(T <= x)` for `x <= 0`. The direct incomplete-beta form is used in
/// the tail and the complement form near the centre, so neither cancels.
fn t_lower_tail(x: f64, nu: f64) -> f64 {
    let x2 = x * x;
    let direct = 0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + x2));
    if direct < 0.25 {
        direct
    } else {
        0.5 - 0.5 * beta_reg(0.5, 0.5 * nu, x2 / (nu + x2))
    }
}

/// Inverse of the Student-t CDF.
///
/// Closed forms for ν ∈ {1, 2}, otherwise Hill's approximation (ACM 396)
/// polished by safeguarded Halley steps on the exact CDF.
pub fn student_t_quantile(p: f64, nu: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("t quantile needs 0 < p < 1, got {p}")));
    }
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::domain(format!(
            "t quantile needs finite nu > 0, got {nu}"
        )));
    }
    Ok(t_quantile_unchecked(p, nu))
}

pub(crate) fn t_quantile_unchecked(p: f64, nu: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    let (tail, sign) = if p < 0.5 { (p, -1.0) } else { (1.0 - p, 1.0) };
    sign * t_upper_quantile(tail, nu)
}

/// Positive `x` with `P(T > x) = tail`, `0 < tail < 0.5`.
fn t_upper_quantile(tail: f64, nu: f64) -> f64 {
    if nu == 1.0 {
        return 1.0 / (PI * tail).tan();
    }
    if nu == 2.0 {
        let a = 2.0 * tail;
        return (1.0 - a) * (2.0 / (a * (2.0 - a))).sqrt();
    }
    if nu > 1e7 {
        return -ndtri(tail);
    }
    let mut x = hill_t_quantile(2.0 * tail, nu);
    if !x.is_finite() || x <= 0.0 {
        x = -ndtri(tail);
    }
    let ln_norm = student_t_ln_norm(nu);
    // Work with y = -x < 0 so the lower tail is evaluated directly.
    let mut lo = 0.0_f64; // bracket on x: P(T > lo) >= tail
    let mut hi = f64::INFINITY;
    for _ in 0..50 {
        let y = -x;
        let err = t_lower_tail(y, nu) - tail;
        if err == 0.0 {
            break;
        }
        // err > 0 means the tail at x is too heavy, so x must grow.
        if err > 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let pdf = (ln_norm - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()).exp();
        // d/dx P(T > x) = -pdf; Halley on g(x) = P(T > x) - tail.
        let u = -err / pdf;
        let curvature = -(nu + 1.0) * x / (nu + x * x);
        let step = u / (1.0 - 0.5 * u * curvature);
        let mut next = x - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * x.max(1.0)
            };
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs() {
            x = next;
            break;
        }
        x = next;
    }
    x
}

/// Hill's (1970) approximation to the two-sided t quantile: returns `x > 0`
/// with `P(|T| > x) = two_sided`.
fn hill_t_quantile(two_sided: f64, n: f64) -> f64 {
    let a = 1.0 / (n - 0.5);
    let b = 48.0 / (a * a);
    let mut c = ((20700.0 * a / b - 98.0) * a - 16.0) * a + 96.36;
    let d = ((94.5 / (b + c) - 3.0) / b + 1.0) * (a * PI * 0.5).sqrt() * n;
    let mut y = (d * two_sided).powf(2.0 / n);
    if y > 0.05 + a {
        let x = ndtri(0.5 * two_sided);
        y = x * x;
        if n < 5.0 {
            c += 0.3 * (n - 4.5) * (x + 0.6);
        }
        c = (((0.05 * d * x - 5.0) * x - 7.0) * x - 2.0) * x + b + c;
        y = (((((0.4 * y + 6.3) * y + 36.0) * y + 94.5) / c - y - 3.0) / b + 1.0) * x;
        y = (a * y * y).exp_m1();
    } else {
        y = ((1.0 / (((n + 6.0) / (n * y) - 0.089 * d - 0.822) * (n + 2.0) * 3.0)
            + 0.5 / (n + 4.0))
            * y
            - 1.0)
            * (n + 1.0)
            / (n + 2.0)
            + 1.0 / y;
    }
    (n * y).sqrt()
}

/// Beta distribution quantile, polished with Newton steps on the exact CDF.
pub fn beta_quantile(p: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("beta quantile needs p in [0,1], got {p}")));
    }
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::domain(format!(
            "beta shape parameters must be positive, got ({a}, {b})"
        )));
    }
    if p == 0.0 || p == 1.0 {
        return Ok(p);
    }
    let ln_b = ln_beta(a, b);
    let mut x = inv_beta_reg(a, b, p).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    for _ in 0..3 {
        let err = beta_reg(a, b, x) - p;
        let ln_pdf = (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_b;
        let pdf = ln_pdf.exp();
        if !(pdf > 0.0) || !pdf.is_finite() {
            break;
        }
        let next = x - err / pdf;
        if !(next > 0.0 && next < 1.0) {
            break;
        }
        let done = (next - x).abs() <= 8.0 * f64::EPSILON * x;
        x = next;
        if done {
            break;
        }
    }
    Ok(x)
}

/// Debye function `D₁(x) = (1/x) ∫₀ˣ t/(eᵗ−1) dt` for `x > 0`.
pub fn debye1(x: f64) -> f64 {
    if x < 1e-4 {
        return 1.0 - x / 4.0 + x * x / 36.0;
    }
    let integral = crate::quadrature::integrate(
        |t| if t == 0.0 { 1.0 } else { t / t.exp_m1() },
        0.0,
        x,
        8,
    );
    integral / x
}
