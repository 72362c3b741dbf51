//! Bounded one-dimensional minimization (Brent's method) and root bracketing.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
    /// The minimizer sits within a few tolerances of `lo` or `hi`.
    pub at_boundary: bool,
}

/// Minimize `f` on `[lo, hi]` with Brent's golden-section/parabolic method.
///
/// `start`, when given, replaces the initial golden-section point so a good
/// initial guess is evaluated first. `tol` is an absolute tolerance on `x`.
pub fn minimize_bounded(
    mut f: impl FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    start: Option<f64>,
    tol: f64,
) -> Minimum {
    assert!(lo < hi, "empty search interval [{lo}, {hi}]");
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let mut a = lo;
    let mut b = hi;
    let mut x = start
        .filter(|s| s.is_finite())
        .map(|s| s.clamp(lo + 0.01 * (hi - lo), hi - 0.01 * (hi - lo)))
        .unwrap_or(a + GOLDEN * (b - a));
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut evaluations = 1;
    if fx.is_nan() {
        fx = f64::INFINITY;
    }
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;

    for _ in 0..500 {
        let m = 0.5 * (a + b);
        let tol1 = 1e-12 * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            // parabola through (v, fv), (w, fw), (x, fx)
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let mut fu = f(u);
        evaluations += 1;
        if fu.is_nan() {
            fu = f64::INFINITY;
        }
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    let edge = 4.0 * tol + 1e-10 * (hi - lo);
    Minimum {
        x,
        value: fx,
        evaluations,
        at_boundary: (x - lo) <= edge || (hi - x) <= edge,
    }
}

/// Root of a monotone increasing function by bisection on `[lo, hi]`.
/// Returns the nearer endpoint if the target is not bracketed.
pub fn invert_increasing(f: impl Fn(f64) -> f64, target: f64, lo: f64, hi: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    if f(a) >= target {
        return a;
    }
    if f(b) <= target {
        return b;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if f(m) < target {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_parabola_minimum() {
        let m = minimize_bounded(|x| (x - 1.3).powi(2) + 2.0, -5.0, 5.0, None, 1e-10);
        assert!((m.x - 1.3).abs() < 1e-8);
        assert!((m.value - 2.0).abs() < 1e-14);
        assert!(!m.at_boundary);
    }

    #[test]
    fn reports_boundary_minimum() {
        let m = minimize_bounded(|x| x, 0.0, 1.0, None, 1e-8);
        assert!(m.x < 1e-6);
        assert!(m.at_boundary);
    }

    #[test]
    fn start_point_is_honoured_and_converges() {
        let mut calls = Vec::new();
        let m = minimize_bounded(
            |x| {
                calls.push(x);
                (x.ln() - 0.5).powi(2)
            },
            0.01,
            50.0,
            Some(1.6),
            1e-9,
        );
        assert_eq!(calls[0], 1.6);
        assert!((m.x - 0.5f64.exp()).abs() < 1e-7);
    }

    #[test]
    fn non_smooth_function() {
        let m = minimize_bounded(|x| (x - 0.25).abs(), -1.0, 1.0, None, 1e-9);
        assert!((m.x - 0.25).abs() < 1e-7);
    }

    #[test]
    fn bisection_inverts_monotone_map() {
        let x = invert_increasing(|x| x.powi(3), 8.0, 0.0, 10.0);
        assert!((x - 2.0).abs() < 1e-12);
        assert_eq!(invert_increasing(|x| x, 20.0, 0.0, 10.0), 10.0);
    }
}
