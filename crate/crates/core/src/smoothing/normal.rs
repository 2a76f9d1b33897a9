//! Standard-normal interval probabilities and truncated-Gaussian means that
//! stay accurate far into the tails.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::{erf, erfc};

/// Floor applied to probabilities before taking logarithms.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// `P(x > t)` for a standard normal.
fn upper_tail(t: f64) -> f64 {
    0.5 * erfc(t * FRAC_1_SQRT_2)
}

/// Mills ratio `R(t) = Q(t)/φ(t)` for `t ≥ 0`.
fn mills_ratio(t: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    if t < 5.0 {
        return upper_tail(t) / std_normal_pdf(t);
    }
    // Lentz evaluation of R(t) = 1/(t + 1/(t + 2/(t + 3/(t + …))))
    let tiny = 1e-300;
    let mut f = t;
    let mut c = t;
    let mut d = 0.0;
    for j in 1..500 {
        let aj = j as f64;
        d = t + aj * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = t + aj / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        let step = c * d;
        f *= step;
        if (step - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// `Φ(β) − Φ(α)` for standardized bounds `α < β`.
pub fn std_interval_probability(alpha: f64, beta: f64) -> f64 {
    if alpha >= beta {
        return 0.0;
    }
    if alpha >= 0.0 {
        upper_tail(alpha) - upper_tail(beta)
    } else if beta <= 0.0 {
        upper_tail(-beta) - upper_tail(-alpha)
    } else {
        0.5 * (erf(beta * FRAC_1_SQRT_2) - erf(alpha * FRAC_1_SQRT_2))
    }
}

/// `P(a ≤ m + ε v ≤ b)` for `v ~ N(0, 1)`.
pub fn interval_likelihood(mean: f64, eps: f64, a: f64, b: f64) -> f64 {
    std_interval_probability((a - mean) / eps, (b - mean) / eps)
}

/// `ln Q(t)` for `t ≥ 0`, finite for every finite `t`.
fn log_upper_tail(t: f64) -> f64 {
    if t < 5.0 {
        upper_tail(t).ln()
    } else if t.is_infinite() {
        f64::NEG_INFINITY
    } else {
        -0.5 * t * t - 0.5 * (2.0 * PI).ln() + mills_ratio(t).ln()
    }
}

/// `ln(Φ(β) − Φ(α))` without underflow in either tail.
pub fn log_std_interval_probability(alpha: f64, beta: f64) -> f64 {
    if alpha >= beta {
        return f64::NEG_INFINITY;
    }
    let (lo, hi) = if alpha >= 0.0 {
        (alpha, beta)
    } else if beta <= 0.0 {
        (-beta, -alpha)
    } else {
        return std_interval_probability(alpha, beta).ln();
    };
    let (la, lb) = (log_upper_tail(lo), log_upper_tail(hi));
    la + (-(lb - la).exp()).ln_1p()
}

/// Unclamped `ln P(a ≤ m + ε v ≤ b)`.
pub fn exact_log_interval_likelihood(mean: f64, eps: f64, a: f64, b: f64) -> f64 {
    log_std_interval_probability((a - mean) / eps, (b - mean) / eps)
}

/// `ln max(P, 1e-300)` of [`interval_likelihood`].
pub fn log_interval_likelihood(mean: f64, eps: f64, a: f64, b: f64) -> f64 {
    interval_likelihood(mean, eps, a, b).max(PROBABILITY_FLOOR).ln()
}

/// `(φ(α) − φ(β)) / (Φ(β) − Φ(α))`, the standardized mean shift under truncation.
fn truncation_shift(alpha: f64, beta: f64) -> f64 {
    if beta <= 0.0 {
        return -truncation_shift(-beta, -alpha);
    }
    if alpha >= 0.0 {
        // Factor φ(α) out of numerator and denominator
        let r = if beta.is_infinite() { 0.0 } else { (-(beta - alpha) * (beta + alpha) * 0.5).exp() };
        let num = if beta.is_infinite() { 1.0 } else { -(-(beta - alpha) * (beta + alpha) * 0.5).exp_m1() };
        let den = mills_ratio(alpha) - if r == 0.0 { 0.0 } else { r * mills_ratio(beta) };
        return num / den;
    }
    (std_normal_pdf(alpha) - std_normal_pdf(beta)) / std_interval_probability(alpha, beta)
}

/// Mean of `N(m, ε²)` truncated to `[a, b]`.
pub fn truncated_gaussian_mean(mean: f64, eps: f64, a: f64, b: f64) -> f64 {
    let alpha = (a - mean) / eps;
    let beta = (b - mean) / eps;
    let shifted = mean + eps * truncation_shift(alpha, beta);
    if shifted.is_finite() {
        shifted.clamp(a, b)
    } else {
        // Numerically degenerate intervals collapse to the midpoint or finite end.
        match (a.is_finite(), b.is_finite()) {
            (true, true) => 0.5 * (a + b),
            (true, false) => a,
            (false, true) => b,
            (false, false) => mean,
        }
    }
}
