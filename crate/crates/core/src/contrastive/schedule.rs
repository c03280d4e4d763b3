use crate::error::{Result, XconError};

/// Cosine-annealed learning rate: `base · ½(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if step > total_steps {
        return Err(XconError::InvalidArgument(format!(
            "step {step} beyond schedule length {total_steps}"
        )));
    }
    if total_steps == 0 {
        return Ok(base_lr);
    }
    let frac = step as f64 / total_steps as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}
