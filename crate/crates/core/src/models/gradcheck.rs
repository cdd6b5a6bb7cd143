//! Central finite-difference check of parameter gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Differentiable, OutputHead};
use crate::space::State;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    /// `max |g - fd| / max(|g|, |fd|, 1e-6)` over the checked coordinates.
    pub max_rel_error: f64,
}

/// Compares the analytic gradient with central differences of step `h` at
/// `coords` randomly chosen free parameters. Meaningful for `f64` models only.
pub fn gradient_check<R: Rng + ?Sized>(
    model: &mut dyn Differentiable,
    xs: &[State],
    ts: &[f64],
    head: &mut OutputHead<'_>,
    coords: usize,
    h: f64,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let (_, grad) = model.value_and_grad(xs, ts, head)?;
    let free: Vec<usize> = (0..grad.len()).filter(|&i| model.parameters().is_free(i)).collect();
    if free.is_empty() {
        return Err(Error::config("model has no free parameters"));
    }
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let i = free[rng.random_range(0..free.len())];
        let orig = model.parameters().values[i];
        model.parameters_mut().values[i] = orig + h;
        let (up, _) = model.value_and_grad(xs, ts, head)?;
        model.parameters_mut().values[i] = orig - h;
        let (down, _) = model.value_and_grad(xs, ts, head)?;
        model.parameters_mut().values[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(GradCheckReport {
        checked: coords,
        max_rel_error: worst,
    })
}
