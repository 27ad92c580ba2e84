//! Exponential integral `E1` and its inverse.

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_606_512_090_082;

/// `E1(x) = ∫_x^∞ e^{-u} / u du` for `x > 0`.
///
/// Power series for `x <= 1`, modified Lentz continued fraction otherwise.
pub fn exp_integral_e1(x: f64) -> f64 {
    if x.is_nan() || x < 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return f64::INFINITY;
    }
    if x <= 1.0 {
        let mut sum = -x.ln() - EULER_GAMMA;
        let mut fact = 1.0;
        for i in 1..200 {
            let k = i as f64;
            fact *= -x / k;
            let del = -fact / k;
            sum += del;
            if del.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        sum
    } else {
        if x > 745.0 {
            return 0.0;
        }
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

/// Solves `E1(x) = y` for `x > 0` by safeguarded Newton iteration on
/// `ln E1(x) - ln y` inside a bracket, to relative tolerance 1e-12 in `x`.
pub fn exp_integral_e1_inv(y: f64) -> Result<f64> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(Error::domain(format!(
            "E1 inverse needs a finite positive argument, got {y}"
        )));
    }
    let target = y.ln();
    let phi = |x: f64| exp_integral_e1(x).ln() - target;

    // Asymptotic starting points: E1(x) ~ -γ - ln x near 0 and ~ e^{-x}/x at infinity.
    let guess = if y > 1.0 {
        (-EULER_GAMMA - y).exp()
    } else {
        let l = -y.ln();
        (l - l.max(1.0).ln()).max(0.1)
    };
    let mut lo = guess;
    let mut hi = guess;
    while phi(lo) < 0.0 {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::domain(format!("E1 inverse underflow for y={y}")));
        }
    }
    while phi(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::domain(format!("E1 inverse overflow for y={y}")));
        }
    }

    let mut x = guess.clamp(lo, hi);
    for _ in 0..200 {
        let fx = phi(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        // d/dx ln E1(x) = -e^{-x} / (x E1(x))
        let e1 = exp_integral_e1(x);
        let slope = -(-x).exp() / (x * e1);
        let mut next = x - fx / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if lo > 0.0 && hi / lo > 4.0 {
                (lo * hi).sqrt()
            } else {
                0.5 * (lo + hi)
            };
        }
        if (next - x).abs() <= 1e-13 * x || (hi - lo) <= 1e-13 * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}
