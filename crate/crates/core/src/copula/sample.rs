//! Samplers. Elliptical families draw from the latent distribution and map
//! through its CDF; Archimedean families use the Marshall–Olkin frailty
//! construction `U_i = ψ(E_i / V)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, Gamma, OpenClosed01, StandardNormal};

use super::elliptical::{Elliptical, StudentT};
use crate::special::{std_normal_cdf, student_t_cdf};

pub(super) fn independence<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for u in out.iter_mut() {
        *u = rng.random::<f64>();
    }
}

/// `L z` for standard normal `z`.
fn correlated_normal<R: Rng + ?Sized>(chol: &[f64], d: usize, rng: &mut R, out: &mut [f64]) {
    let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    for i in 0..d {
        out[i] = chol[i * d..i * d + i + 1]
            .iter()
            .zip(&z)
            .map(|(a, b)| a * b)
            .sum();
    }
}

pub(super) fn gaussian<R: Rng + ?Sized>(e: &Elliptical, rng: &mut R, out: &mut [f64]) {
    let (chol, d) = e.chol();
    correlated_normal(chol, d, rng, out);
    for x in out.iter_mut() {
        *x = std_normal_cdf(*x);
    }
}

pub(super) fn student_t<R: Rng + ?Sized>(t: &StudentT, rng: &mut R, out: &mut [f64]) {
    let (chol, d) = t.chol();
    let nu = t.nu();
    correlated_normal(chol, d, rng, out);
    let w: f64 = ChiSquared::new(nu).expect("nu validated").sample(rng);
    let scale = (w / nu).sqrt();
    for x in out.iter_mut() {
        *x = student_t_cdf(*x / scale, nu);
    }
}

/// Gamma(1/θ) frailty, `ψ(s) = (1 + s)^{-1/θ}`.
pub(super) fn clayton<R: Rng + ?Sized>(theta: f64, rng: &mut R, out: &mut [f64]) {
    let v: f64 = Gamma::new(1.0 / theta, 1.0)
        .expect("theta validated")
        .sample(rng);
    for u in out.iter_mut() {
        let e: f64 = Exp1.sample(rng);
        *u = (-(e / v).ln_1p() / theta).exp();
    }
}

/// Positive α-stable frailty with `E[e^{-sV}] = e^{-s^α}`, α = 1/θ,
/// via Kanter's representation; `ψ(s) = exp(−s^α)`.
pub(super) fn gumbel<R: Rng + ?Sized>(theta: f64, rng: &mut R, out: &mut [f64]) {
    if theta == 1.0 {
        return independence(rng, out);
    }
    let alpha = 1.0 / theta;
    let r: f64 = OpenClosed01.sample(rng);
    let phi = (PI * r).min(PI * (1.0 - 1e-16));
    let w: f64 = Exp1.sample(rng);
    let v = (alpha * phi).sin() / phi.sin().powf(1.0 / alpha)
        * (((1.0 - alpha) * phi).sin() / w).powf((1.0 - alpha) / alpha);
    for u in out.iter_mut() {
        let e: f64 = Exp1.sample(rng);
        *u = (-(e / v).powf(alpha)).exp();
    }
}

/// Frank: logarithmic-series frailty for θ > 0; conditional inversion for
/// the bivariate negative-dependence case.
pub(super) fn frank<R: Rng + ?Sized>(theta: f64, rng: &mut R, out: &mut [f64]) {
    if theta < 0.0 {
        let u: f64 = rng.random();
        let w: f64 = rng.random();
        let k = (-theta).exp_m1();
        let a = (-theta * u).exp();
        out[0] = u;
        out[1] = -(w * k / (w + (1.0 - w) * a)).ln_1p() / theta;
        return;
    }
    let p = -(-theta).exp_m1();
    let v = logarithmic(theta, rng);
    for u in out.iter_mut() {
        let e: f64 = Exp1.sample(rng);
        *u = -(-p * (-e / v).exp()).ln_1p() / theta;
    }
}

/// Logarithmic-series variate with parameter `p = 1 − e^{−θ}` (Kemp's LK).
fn logarithmic<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> f64 {
    let p = -(-theta).exp_m1();
    let v: f64 = rng.random();
    if v > p {
        return 1.0;
    }
    let u: f64 = OpenClosed01.sample(rng);
    let q = -(-theta * u).exp_m1();
    if v < q * q {
        let k = 1.0 + (v.ln() / q.ln()).floor();
        return k.max(1.0);
    }
    if v > q {
        1.0
    } else {
        2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logarithmic_pmf() {
        let theta: f64 = 3.0;
        let p = -(-theta).exp_m1();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let k = logarithmic(theta, &mut rng) as usize;
            if k <= 3 {
                counts[k] += 1;
            }
        }
        for k in 1..=3 {
            let want = -p.powi(k as i32) / (k as f64 * (1.0 - p).ln());
            let got = counts[k] as f64 / n as f64;
            assert!((got - want).abs() < 0.005, "k={k}: {got} vs {want}");
        }
    }

    #[test]
    fn stable_frailty_laplace_transform() {
        let theta = 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut out = [0.0];
        // with d = 1, U = exp(−(E/V)^α) is uniform
        let n = 100_000;
        let mut below = 0;
        for _ in 0..n {
            gumbel(theta, &mut rng, &mut out);
            if out[0] < 0.3 {
                below += 1;
            }
        }
        let frac = below as f64 / n as f64;
        assert!((frac - 0.3).abs() < 0.006, "{frac}");
    }
}
