//! Clayton, Frank and Gumbel copulas.
//!
//! CDFs are `ψ(Σ φ(u_i))` for any dimension. Densities use
//! `c(u) = ψ^(d)(Σ φ(u_i)) · ∏ φ'(u_i)`; Clayton has a closed form for
//! every `d`, Frank and Gumbel are provided for `d ∈ {2, 3}`.

/// `(1 + Σ (u_i^{-θ} − 1))^{-1/θ}`
pub(crate) fn clayton_cdf(theta: f64, u: &[f64]) -> f64 {
    let s = 1.0 + u.iter().map(|&x| (-theta * x.ln()).exp_m1()).sum::<f64>();
    (-s.ln() / theta).exp()
}

pub(crate) fn clayton_log_density(theta: f64, u: &[f64]) -> f64 {
    let d = u.len();
    let mut sum_ln_u = 0.0;
    let mut s = 1.0;
    for &x in u {
        let l = x.ln();
        sum_ln_u += l;
        s += (-theta * l).exp_m1();
    }
    let mut head = 0.0;
    for k in 1..d {
        head += (k as f64 * theta).ln_1p();
    }
    head - (theta + 1.0) * sum_ln_u - (d as f64 + 1.0 / theta) * s.ln()
}

/// Log of `|x|` and the sign of `x = ∏(1 − e^{−θu_i}) / (1 − e^{−θ})^{d−1}`.
fn frank_x(theta: f64, u: &[f64]) -> (f64, f64) {
    let d = u.len() as f64;
    let num: f64 = u.iter().map(|&x| ln_abs_expm1_neg(theta * x)).sum();
    let ln_abs = num - (d - 1.0) * ln_abs_expm1_neg(theta);
    let sign = if theta > 0.0 { 1.0 } else { -1.0 };
    (ln_abs, sign)
}

/// `ln |1 − e^{−a}|`, switching forms so neither small nor large `a`
/// loses digits.
fn ln_abs_expm1_neg(a: f64) -> f64 {
    if a > std::f64::consts::LN_2 {
        (-(-a).exp()).ln_1p()
    } else {
        (-a).exp_m1().abs().ln()
    }
}

/// `1 − x`, accurate when `x` is close to one.
fn one_minus(ln_abs: f64, sign: f64) -> f64 {
    if sign > 0.0 {
        -ln_abs.exp_m1()
    } else {
        1.0 + ln_abs.exp()
    }
}

/// `−(1/θ) ln(1 − x)`
pub(crate) fn frank_cdf(theta: f64, u: &[f64]) -> f64 {
    let (ln_abs, sign) = frank_x(theta, u);
    let x = sign * ln_abs.exp();
    let l = if x.abs() < 0.5 {
        (-x).ln_1p()
    } else {
        one_minus(ln_abs, sign).ln()
    };
    -l / theta
}

pub(crate) fn frank_log_density(theta: f64, u: &[f64]) -> f64 {
    let (ln_abs, sign) = frank_x(theta, u);
    let ln_1mx = one_minus(ln_abs, sign).ln();
    // |Li_{1−d}(x)|: Li_{−1}(x) = x/(1−x)², Li_{−2}(x) = x(1+x)/(1−x)³
    let ln_poly = match u.len() {
        2 => ln_abs - 2.0 * ln_1mx,
        3 => ln_abs + (sign * ln_abs.exp()).ln_1p() - 3.0 * ln_1mx,
        d => unreachable!("frank density requested at dim {d}"),
    };
    let ln_theta = theta.abs().ln();
    let generator: f64 = u
        .iter()
        .map(|&x| ln_theta - (theta * x).exp_m1().abs().ln())
        .sum();
    ln_poly - ln_theta + generator
}

/// `exp(−(Σ(−ln u_i)^θ)^{1/θ})`
pub(crate) fn gumbel_cdf(theta: f64, u: &[f64]) -> f64 {
    let s: f64 = u.iter().map(|&x| (-x.ln()).powf(theta)).sum();
    (-s.powf(1.0 / theta)).exp()
}

pub(crate) fn gumbel_log_density(theta: f64, u: &[f64]) -> f64 {
    let d = u.len();
    let alpha = 1.0 / theta;
    let mut lt = [0.0f64; 3];
    let mut tail = 0.0;
    for (k, &x) in u.iter().enumerate() {
        let t = -x.ln();
        lt[k] = t.ln();
        tail += theta.ln() + (theta - 1.0) * lt[k] + t;
    }
    // ln s with s = Σ t_i^θ, by log-sum-exp
    let lt = &lt[..d];
    let m = lt.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(theta * b));
    let ln_s = m + lt.iter().map(|&l| (theta * l - m).exp()).sum::<f64>().ln();
    let ln_w = alpha * ln_s;
    let w = ln_w.exp();
    let ln_poly = match d {
        2 => alpha.ln() + ln_w + (alpha * w + 1.0 - alpha).ln(),
        3 => {
            let poly = alpha * alpha * w * w
                + 3.0 * alpha * (1.0 - alpha) * w
                + (1.0 - alpha) * (2.0 - alpha);
            alpha.ln() + ln_w + poly.ln()
        }
        d => unreachable!("gumbel density requested at dim {d}"),
    };
    -w - d as f64 * ln_s + ln_poly + tail
}
