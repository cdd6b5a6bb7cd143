//! Perturbation probe for the leak-freedom constraint.

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ConditionalModel, ModelMode};
use crate::space::{State, StateSpace};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakReport {
    pub trials: usize,
    /// Largest absolute change of the probed logit vector.
    pub max_deviation: f64,
    /// Trials whose probed logits were not bitwise identical.
    pub violations: usize,
}

impl LeakReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Draws `trials` random `(x, t, d, c')`, sets `x^d = c'` and compares the
/// `d`-th logit vectors bit for bit.
pub fn leak_check<M, R>(model: &M, trials: usize, rng: &mut R) -> Result<LeakReport>
where
    M: ConditionalModel + ?Sized,
    R: Rng + ?Sized,
{
    let space = model.space();
    let (dims, c) = (space.dims(), space.vocab());
    let mut report = LeakReport {
        trials,
        max_deviation: 0.0,
        violations: 0,
    };
    for _ in 0..trials {
        let x = State((0..dims).map(|_| rng.random_range(0..c)).collect());
        let t = model.horizon() * rng.random_range(1e-3..1.0);
        let d = rng.random_range(0..dims);
        let other = (x.0[d] + rng.random_range(1..c)) % c;
        let y = x.with(d, other);
        let logits = model.logits_batch(&[x, y], &[t, t])?;
        let mut leaked = false;
        for v in 0..c {
            let (a, b) = (logits[[0, d, v]], logits[[1, d, v]]);
            if a.to_bits() != b.to_bits() {
                leaked = true;
                let dev = (a - b).abs();
                report.max_deviation = report.max_deviation.max(if dev.is_nan() { f64::INFINITY } else { dev });
            }
        }
        report.violations += usize::from(leaked);
    }
    Ok(report)
}

/// Deliberately broken model whose `d`-th logits reveal `x^d`; the negative
/// control for [`leak_check`].
#[derive(Debug, Clone)]
pub struct LeakingModel {
    pub space: StateSpace,
}

impl ConditionalModel for LeakingModel {
    fn space(&self) -> StateSpace {
        self.space
    }

    fn mode(&self) -> ModelMode {
        ModelMode::NoisyMarginal
    }

    fn logits_batch(&self, xs: &[State], ts: &[f64]) -> Result<Array3<f64>> {
        super::check_batch(&self.space, xs, ts)?;
        let (dims, c) = (self.space.dims(), self.space.vocab());
        Ok(Array3::from_shape_fn((xs.len(), dims, c), |(n, d, v)| {
            if xs[n].0[d] == v {
                1.0
            } else {
                0.0
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn broken_model_is_caught() {
        let m = LeakingModel {
            space: StateSpace::new(4, 3).unwrap(),
        };
        let r = leak_check(&m, 50, &mut seeded(0)).unwrap();
        assert_eq!(r.violations, 50);
        assert_eq!(r.max_deviation, 1.0);
        assert!(!r.passed());
    }
}
