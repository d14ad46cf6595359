//! Principal branch of the Lambert-W function on nonnegative arguments.
//!
//! `lambert_w0(x)` solves `w·e^w = x`. `lambert_w0_exp(l)` solves the same
//! equation for `x = e^l` without forming `x`, which is how the implicit
//! solver evaluates arguments such as `c·e^{800}`.

use thiserror::Error;

const MAX_ITERS: usize = 50;
const REL_TOL: f64 = 1e-12;

/// Above this log-argument `e^l` is no longer safely representable.
const LOG_DIRECT_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambertWResult {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum LambertWError {
    #[error("lambert_w0 domain error: argument {0} is not a finite nonnegative number")]
    Domain(f64),
}

/// `W₀(x)` for finite `x ≥ 0`, refined with Halley iterations.
pub fn lambert_w0(x: f64) -> Result<LambertWResult, LambertWError> {
    if !x.is_finite() || x < 0.0 {
        return Err(LambertWError::Domain(x));
    }
    if x == 0.0 {
        return Ok(LambertWResult { value: 0.0, iterations: 0, converged: true });
    }
    let mut w = if x <= std::f64::consts::E {
        x.ln_1p()
    } else {
        let l = x.ln();
        l - l.ln()
    };
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERS {
        iterations += 1;
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        // Halley: w -= f / (e^w (w+1) - (w+2) f / (2w+2))
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        w -= step;
        if step.abs() <= REL_TOL * 0.25 * w.abs().max(f64::MIN_POSITIVE) || step == 0.0 {
            converged = true;
            break;
        }
    }
    Ok(LambertWResult { value: w.max(0.0), iterations, converged })
}

/// `W₀(e^{log_x})`, valid for any finite `log_x` including values whose
/// exponential overflows.
pub fn lambert_w0_exp(log_x: f64) -> Result<LambertWResult, LambertWError> {
    if log_x.is_nan() || log_x == f64::INFINITY {
        return Err(LambertWError::Domain(log_x));
    }
    if log_x <= LOG_DIRECT_LIMIT {
        // e^{-inf} = 0 and deep underflow both map to W = 0.
        return lambert_w0(log_x.exp());
    }
    // Newton on h(w) = w + ln w - log_x, which is concave and increasing, so
    // iterates starting left of the root stay left and converge monotonically.
    let mut w = log_x - log_x.ln();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERS {
        iterations += 1;
        let h = w + w.ln() - log_x;
        let step = h / (1.0 + 1.0 / w);
        w -= step;
        if step.abs() <= f64::EPSILON * w {
            converged = true;
            break;
        }
    }
    Ok(LambertWResult { value: w, iterations, converged })
}

/// Value-only convenience wrapper; panics are impossible for the arguments the
/// solvers produce, so callers that already validated finiteness use this.
pub(crate) fn w0_exp(log_x: f64) -> f64 {
    lambert_w0_exp(log_x).map(|r| r.value).unwrap_or(f64::NAN)
}
