//! Standard normal tail, CDF and density, with log-space variants that stay
//! finite far beyond the underflow point of `f64`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Above this point `ln Q` switches from `ln(erfc)` to the continued fraction.
const LOG_TAIL_SWITCH: f64 = 20.0;

/// Upper tail `Q(delta) = P(X >= delta)` of a standard normal.
pub fn q_function(delta: f64) -> f64 {
    0.5 * libm::erfc(delta * FRAC_1_SQRT_2)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    q_function(-z)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn log_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Mills ratio `Q(x) / phi(x)` for large positive `x` by the Laplace
/// continued fraction `1 / (x + 1/(x + 2/(x + 3/(x + ...))))`.
fn mills_ratio_cf(x: f64) -> f64 {
    let mut tail = x;
    for k in (1..=60).rev() {
        tail = x + k as f64 / tail;
    }
    1.0 / tail
}

/// `ln Q(delta)`, accurate for any finite `delta`.
pub fn log_q(delta: f64) -> f64 {
    if delta < 0.0 {
        (-q_function(-delta)).ln_1p()
    } else if delta < LOG_TAIL_SWITCH {
        q_function(delta).ln()
    } else if delta.is_infinite() {
        f64::NEG_INFINITY
    } else {
        log_normal_pdf(delta) + mills_ratio_cf(delta).ln()
    }
}

/// `ln Phi(z)`.
pub fn log_normal_cdf(z: f64) -> f64 {
    log_q(-z)
}

/// `phi(z) / Phi(z)`, finite for very negative `z`.
pub fn inverse_mills(z: f64) -> f64 {
    if z > -LOG_TAIL_SWITCH {
        normal_pdf(z) / normal_cdf(z)
    } else {
        1.0 / mills_ratio_cf(-z)
    }
}
