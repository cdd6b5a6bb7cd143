//! Score matching for ordinal variables under a discretized Gaussian kernel.

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::space::State;
use crate::{Error, Result};

/// `q_{t|0}(y | x) ∝ exp(-(y - x)^2 / (corrupt_rate * t))` on `0..support`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrdinalKernelSpec {
    pub corrupt_rate: f64,
    /// Number of integer values; the support is `0..support`.
    pub support: usize,
}

impl OrdinalKernelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.corrupt_rate > 0.0 && self.corrupt_rate.is_finite()) {
            return Err(Error::config(format!("corrupt rate {} must be positive", self.corrupt_rate)));
        }
        if self.support < 2 {
            return Err(Error::config("ordinal support needs at least two values"));
        }
        Ok(())
    }

    /// Unnormalized log kernel.
    #[inline]
    pub fn log_kernel(&self, y: usize, x: usize, t: f64) -> f64 {
        let diff = y as f64 - x as f64;
        -diff * diff / (self.corrupt_rate * t)
    }

    /// Normalized kernel row `q_{t|0}(. | x)`.
    pub fn row(&self, x: usize, t: f64) -> Vec<f64> {
        let logs: Vec<f64> = (0..self.support).map(|y| self.log_kernel(y, x, t)).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        p
    }

    pub fn sample<R: Rng + ?Sized>(&self, x0: &State, t: f64, rng: &mut R) -> State {
        State(
            x0.0.iter()
                .map(|&x| crate::rng::categorical(&self.row(x, t), rng))
                .collect(),
        )
    }

    /// Regression target for the score at `x_t` given `x_0`.
    ///
    /// Interior: `1/2 [log q(x_t + 1 | x_0) - log q(x_t - 1 | x_0)]`. At an edge
    /// only the existing neighbour's log-ratio against `x_t` is used, without
    /// the half.
    pub fn score_target(&self, xt: usize, x0: usize, t: f64) -> f64 {
        let here = self.log_kernel(xt, x0, t);
        let up = (xt + 1 < self.support).then(|| self.log_kernel(xt + 1, x0, t));
        let down = (xt > 0).then(|| self.log_kernel(xt - 1, x0, t));
        match (up, down) {
            (Some(u), Some(d)) => 0.5 * (u - d),
            (Some(u), None) => u - here,
            (None, Some(d)) => here - d,
            (None, None) => 0.0,
        }
    }
}

/// Squared error between scores (`N x D x 1`) and the kernel targets.
pub fn ordinal_score_head(
    scores: &Array3<f64>,
    x0: &[State],
    xt: &[State],
    ts: &[f64],
    weights: &[f64],
    kernel: &OrdinalKernelSpec,
) -> Result<(f64, Array3<f64>)> {
    let (n, dims, k) = scores.dim();
    if k != 1 || n != xt.len() || n != x0.len() {
        return Err(Error::shape("score head needs N x D x 1 outputs matching the batch"));
    }
    let mut grad = Array3::zeros(scores.dim());
    let mut loss = 0.0;
    for i in 0..n {
        for d in 0..dims {
            let diff = scores[[i, d, 0]] - kernel.score_target(xt[i].0[d], x0[i].0[d], ts[i]);
            loss += weights[i] * diff * diff;
            grad[[i, d, 0]] = 2.0 * weights[i] * diff;
        }
    }
    if !loss.is_finite() {
        return Err(Error::numeric("ordinal score loss", format!("loss is {loss}")));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn interior_target_closed_form() {
        let k = OrdinalKernelSpec {
            corrupt_rate: 3.0,
            support: 20,
        };
        for (xt, x0, t) in [(5usize, 5usize, 0.4), (7, 3, 0.2), (2, 9, 1.0)] {
            let want = -2.0 * (xt as f64 - x0 as f64) / (3.0 * t);
            assert!((k.score_target(xt, x0, t) - want).abs() < 1e-10);
        }
        assert_eq!(k.score_target(5, 5, 0.4), 0.0);
    }

    #[test]
    fn edge_targets_are_one_sided() {
        let k = OrdinalKernelSpec {
            corrupt_rate: 1.0,
            support: 4,
        };
        let t = 0.5;
        assert!((k.score_target(0, 2, t) - (k.log_kernel(1, 2, t) - k.log_kernel(0, 2, t))).abs() < 1e-15);
        assert!((k.score_target(3, 0, t) - (k.log_kernel(3, 0, t) - k.log_kernel(2, 0, t))).abs() < 1e-15);
    }

    #[test]
    fn samples_follow_the_kernel_row() {
        let k = OrdinalKernelSpec {
            corrupt_rate: 2.0,
            support: 6,
        };
        let row = k.row(2, 0.7);
        let mut counts = [0usize; 6];
        let mut rng = seeded(5);
        let n = 100_000;
        for _ in 0..n {
            counts[k.sample(&State(vec![2]), 0.7, &mut rng).0[0]] += 1;
        }
        for y in 0..6 {
            let p = counts[y] as f64 / n as f64;
            assert!((p - row[y]).abs() < 4.0 * (row[y] * (1.0 - row[y]) / n as f64).sqrt() + 1e-9);
        }
    }
}
