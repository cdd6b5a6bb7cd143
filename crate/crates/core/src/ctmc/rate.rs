//! Per-dimension base rate matrices and their transition kernels.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Taylor order of the truncated exponential series.
const EXPM_ORDER: usize = 12;

/// `(stay, move)` probabilities of the uniform rate `11^T - C I` after
/// cumulative rate `tau`: `stay = 1/C + (1 - 1/C) e^{-C tau}`,
/// `move = (1 - e^{-C tau}) / C` to each other value.
pub fn uniform_transition_row(vocab: usize, tau: f64) -> (f64, f64) {
    let c = vocab as f64;
    let decay = (-c * tau).exp();
    let mv = -(-c * tau).exp_m1() / c;
    (1.0 / c + (1.0 - 1.0 / c) * decay, mv)
}

/// `exp(a)` by scaling and squaring with a degree-12 Taylor polynomial,
/// scaled until the 1-norm of `a / 2^k` is at most 0.5.
pub fn expm(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::shape(format!("expm of a {}x{} matrix", n, a.ncols())));
    }
    let norm = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if !norm.is_finite() {
        return Err(Error::numeric("expm", "non-finite matrix entries"));
    }
    let mut squarings = 0u32;
    let mut scaled_norm = norm;
    while scaled_norm > 0.5 {
        scaled_norm *= 0.5;
        squarings += 1;
        if squarings > 200 {
            return Err(Error::numeric("expm", "scaling did not converge"));
        }
    }
    let scaled = a / 2f64.powi(squarings as i32);
    // Horner form of sum_{k<=12} A^k / k!.
    let eye = Array2::<f64>::eye(n);
    let mut result = eye.clone();
    for k in (1..=EXPM_ORDER).rev() {
        result = &eye + &(scaled.dot(&result) / k as f64);
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    if result.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("expm", "non-finite result"));
    }
    Ok(result)
}

/// Base generator `Q` of one dimension; `Q_t = beta(t) Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
    vocab: usize,
    matrix: Vec<f64>,
    uniform: bool,
}

impl RateSpec {
    /// `Q = 11^T - C I`.
    pub fn uniform(vocab: usize) -> Result<Self> {
        if vocab < 2 {
            return Err(Error::domain(format!("vocabulary size {vocab} < 2")));
        }
        let c = vocab as f64;
        let mut matrix = vec![1.0; vocab * vocab];
        for i in 0..vocab {
            matrix[i * vocab + i] = 1.0 - c;
        }
        Ok(Self {
            vocab,
            matrix,
            uniform: true,
        })
    }

    /// A general generator; rows must sum to zero with non-negative
    /// off-diagonal entries.
    pub fn general(matrix: Array2<f64>) -> Result<Self> {
        let c = matrix.nrows();
        if matrix.ncols() != c || c < 2 {
            return Err(Error::shape(format!(
                "rate matrix must be square with size >= 2, got {}x{}",
                c,
                matrix.ncols()
            )));
        }
        for i in 0..c {
            let row = matrix.row(i);
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("row {i} has non-finite entries")));
            }
            if (0..c).any(|j| j != i && row[j] < 0.0) {
                return Err(Error::domain(format!("row {i} has a negative off-diagonal rate")));
            }
            let sum: f64 = row.sum();
            if sum.abs() > 1e-12 {
                return Err(Error::domain(format!("row {i} sums to {sum}, not 0")));
            }
        }
        Ok(Self {
            vocab: c,
            matrix: matrix.iter().copied().collect(),
            uniform: false,
        })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Base rate of jumping from value `from` to value `to`.
    #[inline]
    pub fn entry(&self, from: usize, to: usize) -> f64 {
        self.matrix[from * self.vocab + to]
    }

    /// Total base rate of leaving `from`.
    #[inline]
    pub fn exit_rate(&self, from: usize) -> f64 {
        -self.entry(from, from)
    }

    pub fn matrix(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.vocab, self.vocab), self.matrix.clone())
            .expect("stored row-major C x C")
    }

    /// Transition matrix `exp(tau Q)`; row `a` is the law of the value after
    /// cumulative rate `tau` starting from `a`.
    pub fn kernel(&self, tau: f64) -> Result<Array2<f64>> {
        if !(tau >= 0.0) {
            return Err(Error::domain(format!("cumulative rate {tau} must be >= 0")));
        }
        let c = self.vocab;
        if self.uniform {
            let (stay, mv) = uniform_transition_row(c, tau);
            return Ok(Array2::from_shape_fn((c, c), |(i, j)| if i == j { stay } else { mv }));
        }
        if tau.is_infinite() {
            return Err(Error::domain("infinite cumulative rate for a general generator"));
        }
        expm(&(self.matrix() * tau))
    }

    /// Checks the generator fits a space with vocabulary `vocab`.
    pub fn validate_for(&self, vocab: usize) -> Result<()> {
        if vocab != self.vocab {
            return Err(Error::config(format!(
                "rate matrix is {0}x{0} but the space has vocabulary {1}",
                self.vocab, vocab
            )));
        }
        Ok(())
    }
}
