//! Kendall's tau as a function of the dependence parameter, and inverses
//! used to initialize the likelihood search.

use crate::optimize::invert_increasing;
use crate::special::debye1;

pub fn clayton_tau(theta: f64) -> f64 {
    theta / (theta + 2.0)
}

pub fn clayton_theta(tau: f64) -> f64 {
    2.0 * tau / (1.0 - tau)
}

pub fn gumbel_tau(theta: f64) -> f64 {
    1.0 - 1.0 / theta
}

pub fn gumbel_theta(tau: f64) -> f64 {
    1.0 / (1.0 - tau)
}

/// `1 − 4/θ + 4 D₁(θ)/θ`, odd in θ.
pub fn frank_tau(theta: f64) -> f64 {
    let a = theta.abs();
    let t = if a < 1e-2 {
        a / 9.0 - a.powi(3) / 900.0 + a.powi(5) / 52_920.0
    } else {
        1.0 - 4.0 / a + 4.0 * debye1(a) / a
    };
    t.copysign(theta)
}

/// Inverse of [`frank_tau`]; `|θ|` is capped at 200.
pub fn frank_theta(tau: f64) -> f64 {
    if tau == 0.0 {
        return 0.0;
    }
    let a = invert_increasing(frank_tau, tau.abs(), 0.0, 200.0);
    a.copysign(tau)
}

/// Elliptical families: `ρ = sin(πτ/2)`.
pub fn elliptical_rho(tau: f64) -> f64 {
    (std::f64::consts::FRAC_PI_2 * tau).sin()
}

pub fn elliptical_tau(rho: f64) -> f64 {
    2.0 / std::f64::consts::PI * rho.asin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;

    /// τ = 1 + 4∫₀¹ φ(t)/φ'(t) dt for an Archimedean generator.
    fn tau_by_generator(ratio: impl Fn(f64) -> f64) -> f64 {
        let mut breaks = vec![0.0];
        breaks.extend(crate::quadrature::unit_interval_breaks(1e-12));
        breaks.push(1.0);
        let total: f64 = breaks.windows(2).map(|w| integrate(&ratio, w[0], w[1], 2)).sum();
        1.0 + 4.0 * total
    }

    #[test]
    fn closed_forms_match_generator_integral() {
        let theta: f64 = 2.0;
        // Clayton: φ = (t^{-θ} − 1)/θ, φ/φ' = (t^{θ+1} − t)/θ
        let c = tau_by_generator(|t| (t.powf(theta + 1.0) - t) / theta);
        assert!((c - clayton_tau(theta)).abs() < 1e-12);
        assert!((clayton_tau(2.0) - 0.5).abs() < 1e-15);
        // Gumbel: φ = (−ln t)^θ, φ/φ' = t ln t / θ
        let g = tau_by_generator(|t| t * t.ln() / theta);
        assert!((g - gumbel_tau(theta)).abs() < 1e-10);
        // Frank: φ = −ln((e^{−θt}−1)/(e^{−θ}−1)), φ' = θ e^{−θt}/(e^{−θt}−1)... ratio:
        for th in [-4.0f64, 0.5, 4.0, 15.0] {
            let f = tau_by_generator(|t| {
                let phi = -(((-th * t).exp_m1()) / (-th).exp_m1()).ln();
                let dphi = th / (th * t).exp_m1();
                -phi / dphi
            });
            assert!((f - frank_tau(th)).abs() < 1e-9, "{th}: {f} vs {}", frank_tau(th));
        }
    }

    #[test]
    fn inverses_round_trip() {
        for tau in [-0.6, -0.1, 0.001, 0.2, 0.5, 0.8] {
            assert!((frank_tau(frank_theta(tau)) - tau).abs() < 1e-10);
            assert!((elliptical_tau(elliptical_rho(tau)) - tau).abs() < 1e-12);
            if tau > 0.0 {
                assert!((clayton_tau(clayton_theta(tau)) - tau).abs() < 1e-12);
                assert!((gumbel_tau(gumbel_theta(tau)) - tau).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn frank_series_joins_smoothly() {
        let below = frank_tau(0.0099999);
        let above = frank_tau(0.0100001);
        assert!((above - below).abs() < 1e-7);
        assert_eq!(frank_tau(-3.0), -frank_tau(3.0));
    }
}
