use crate::error::{Error, Result};

/// Polynomial decay `base · (1 − iter/max_iters)^power`.
pub fn poly_lr(base: f64, iter: usize, max_iters: usize, power: f64) -> Result<f64> {
    if power <= 0.0 || !power.is_finite() {
        return Err(Error::Range(format!("poly power must be positive, got {power}")));
    }
    if iter > max_iters {
        return Err(Error::Range(format!("iteration {iter} exceeds max_iters {max_iters}")));
    }
    if max_iters == 0 {
        return Ok(base);
    }
    Ok(base * (1.0 - iter as f64 / max_iters as f64).powf(power))
}
