//! Ratio-matching objectives over per-dimension conditional logits.
//!
//! The batch losses are written as heads on model outputs, so any
//! [`Differentiable`] model gets exact parameter gradients from them. Each head
//! takes per-row weights; batch training passes `lambda(t) / N`, exact
//! expectations pass `q_t(x)`.

use ndarray::{Array2, Array3};

use crate::ctmc::{RateSpec, TabularDistribution};
use crate::models::{log_softmax, tabular_conditionals, ConditionalModel, Differentiable, ModelMode};
use crate::space::State;
use crate::{Error, Result};

fn check_rows(logits: &Array3<f64>, rows: usize) -> Result<()> {
    if logits.dim().0 != rows {
        return Err(Error::shape(format!("{} logit rows for {rows} targets", logits.dim().0)));
    }
    Ok(())
}

fn finite(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::numeric(what, format!("loss is {loss}")))
    }
}

/// `sum_n w_n sum_d -log softmax(l[n, d])[x_n^d]`.
pub fn ce_observed(logits: &Array3<f64>, targets: &[State], weights: &[f64]) -> Result<(f64, Array3<f64>)> {
    check_rows(logits, targets.len())?;
    let (n, dims, _) = logits.dim();
    let mut grad = Array3::zeros(logits.dim());
    let mut loss = 0.0;
    for i in 0..n {
        for d in 0..dims {
            let lp = log_softmax(logits.slice(ndarray::s![i, d, ..]).as_slice().expect("contiguous"));
            let x = targets[i].0[d];
            loss -= weights[i] * lp[x];
            for (c, l) in lp.iter().enumerate() {
                grad[[i, d, c]] = weights[i] * (l.exp() - if c == x { 1.0 } else { 0.0 });
            }
        }
    }
    Ok((finite(loss, "cross-entropy loss")?, grad))
}

/// `sum_n w_n sum_d sum_c -target[n, d, c] log softmax(l[n, d])[c]`.
pub fn ce_soft(logits: &Array3<f64>, target: &Array3<f64>, weights: &[f64]) -> Result<(f64, Array3<f64>)> {
    if logits.dim() != target.dim() {
        return Err(Error::shape("soft targets and logits differ in shape"));
    }
    check_rows(logits, weights.len())?;
    let (n, dims, vocab) = logits.dim();
    let mut grad = Array3::zeros(logits.dim());
    let mut loss = 0.0;
    for i in 0..n {
        for d in 0..dims {
            let lp = log_softmax(logits.slice(ndarray::s![i, d, ..]).as_slice().expect("contiguous"));
            let mass: f64 = (0..vocab).map(|c| target[[i, d, c]]).sum();
            for c in 0..vocab {
                let q = target[[i, d, c]];
                if q > 0.0 {
                    loss -= weights[i] * q * lp[c];
                }
                grad[[i, d, c]] = weights[i] * (mass * lp[c].exp() - q);
            }
        }
    }
    Ok((finite(loss, "cross-entropy loss")?, grad))
}

/// Gradient with respect to logits of a loss with gradient `g` with respect to
/// the softmax probabilities `p`.
fn softmax_pullback(p: &[f64], g: &[f64], out: &mut [f64]) {
    let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, &pc), &gc) in out.iter_mut().zip(p).zip(g) {
        *o = pc * (gc - inner);
    }
}

/// Simplified squared-ratio loss `sum_n w_n sum_d [sum_c p_c^2 - 2 p_{x^d}]`.
pub fn l2_observed(logits: &Array3<f64>, targets: &[State], weights: &[f64]) -> Result<(f64, Array3<f64>)> {
    check_rows(logits, targets.len())?;
    let (n, dims, vocab) = logits.dim();
    let mut grad = Array3::zeros(logits.dim());
    let mut loss = 0.0;
    let mut g = vec![0.0; vocab];
    let mut out = vec![0.0; vocab];
    for i in 0..n {
        for d in 0..dims {
            let p: Vec<f64> = log_softmax(logits.slice(ndarray::s![i, d, ..]).as_slice().expect("contiguous"))
                .iter()
                .map(|l| l.exp())
                .collect();
            let x = targets[i].0[d];
            loss += weights[i] * l2_term(&p, x);
            for c in 0..vocab {
                g[c] = 2.0 * p[c] - if c == x { 2.0 } else { 0.0 };
            }
            softmax_pullback(&p, &g, &mut out);
            for c in 0..vocab {
                grad[[i, d, c]] = weights[i] * out[c];
            }
        }
    }
    Ok((finite(loss, "squared-ratio loss")?, grad))
}

/// One term of the simplified squared-ratio loss, `sum_c p_c^2 - 2 p_x`.
pub fn l2_term(p: &[f64], x: usize) -> f64 {
    p.iter().map(|v| v * v).sum::<f64>() - 2.0 * p[x]
}

/// Unsimplified squared-ratio loss `sum_n w_n sum_d ||softmax(l[n, d]) - target[n, d]||^2`.
pub fn l2_soft(logits: &Array3<f64>, target: &Array3<f64>, weights: &[f64]) -> Result<(f64, Array3<f64>)> {
    if logits.dim() != target.dim() {
        return Err(Error::shape("soft targets and logits differ in shape"));
    }
    check_rows(logits, weights.len())?;
    let (n, dims, vocab) = logits.dim();
    let mut grad = Array3::zeros(logits.dim());
    let mut loss = 0.0;
    let mut g = vec![0.0; vocab];
    let mut out = vec![0.0; vocab];
    for i in 0..n {
        for d in 0..dims {
            let p: Vec<f64> = log_softmax(logits.slice(ndarray::s![i, d, ..]).as_slice().expect("contiguous"))
                .iter()
                .map(|l| l.exp())
                .collect();
            for c in 0..vocab {
                let diff = p[c] - target[[i, d, c]];
                loss += weights[i] * diff * diff;
                g[c] = 2.0 * diff;
            }
            softmax_pullback(&p, &g, &mut out);
            for c in 0..vocab {
                grad[[i, d, c]] = weights[i] * out[c];
            }
        }
    }
    Ok((finite(loss, "squared-ratio loss")?, grad))
}

/// Noisy conditional from a clean-value posterior:
/// `p_t(c) = sum_{c0} p0(c0) K(c0, c)` with `K` the per-dimension kernel.
pub fn x0_marginal_transform(p0: &[f64], kernel: &Array2<f64>) -> Vec<f64> {
    let c = p0.len();
    let mut out: Vec<f64> = (0..c).map(|v| (0..c).map(|a| p0[a] * kernel[[a, v]]).sum()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Cross-entropy of the transformed noisy conditionals at the observed
/// values; `kernels[n]` is the forward kernel from time 0 to row `n`'s time.
pub fn x0_ce_observed(
    logits: &Array3<f64>,
    targets: &[State],
    kernels: &[&Array2<f64>],
    weights: &[f64],
) -> Result<(f64, Array3<f64>)> {
    check_rows(logits, targets.len())?;
    let (n, dims, vocab) = logits.dim();
    let mut grad = Array3::zeros(logits.dim());
    let mut loss = 0.0;
    for i in 0..n {
        let k = kernels[i];
        for d in 0..dims {
            let p0: Vec<f64> = log_softmax(logits.slice(ndarray::s![i, d, ..]).as_slice().expect("contiguous"))
                .iter()
                .map(|l| l.exp())
                .collect();
            let x = targets[i].0[d];
            let pt: f64 = (0..vocab).map(|a| p0[a] * k[[a, x]]).sum();
            loss -= weights[i] * pt.ln();
            // d(-log pt)/dl_j = p0_j (1 - K(j, x) / pt).
            for j in 0..vocab {
                grad[[i, d, j]] = weights[i] * p0[j] * (1.0 - k[[j, x]] / pt);
            }
        }
    }
    Ok((finite(loss, "denoising cross-entropy loss")?, grad))
}

/// All states of a table with their probabilities as weights.
fn enumerate(q: &TabularDistribution) -> Result<(Vec<State>, Vec<f64>)> {
    let states: Vec<State> = q.space().states()?.collect();
    Ok((states, q.probs().to_vec()))
}

/// Exact conditionals of `q` laid out as soft targets for every state.
fn conditional_targets(q: &TabularDistribution, states: &[State]) -> Result<Array3<f64>> {
    let table = tabular_conditionals(q)?;
    let space = q.space();
    let mut out = Array3::zeros((states.len(), space.dims(), space.vocab()));
    for (i, x) in states.iter().enumerate() {
        for d in 0..space.dims() {
            if let Some(cond) = table.conditional(&x.0, d) {
                for (c, &p) in cond.iter().enumerate() {
                    out[[i, d, c]] = p;
                }
            }
        }
    }
    Ok(out)
}

/// Which exact-expectation objective to evaluate at a fixed time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExactObjective {
    /// `sum_x q_t(x) sum_d -log p(x^d | x^{\d})`.
    CeSimplified,
    /// `sum_x q_t(x) sum_d sum_c -q_t(c | x^{\d}) log p(c | x^{\d})`.
    CeOriginal,
    /// `sum_x q_t(x) sum_d [||p||^2 - 2 p(x^d | x^{\d})]`.
    L2Simplified,
    /// `sum_x q_t(x) sum_d ||p - q_t(. | x^{\d})||^2`.
    L2Original,
}

/// Exact expectation of an objective under `q_t` and its parameter gradient.
pub fn exact_objective<M>(model: &M, q_t: &TabularDistribution, t: f64, which: ExactObjective) -> Result<(f64, Vec<f64>)>
where
    M: ConditionalModel + Differentiable + ?Sized,
{
    if *q_t.space() != model.space() {
        return Err(Error::config("table and model spaces differ"));
    }
    let (states, weights) = enumerate(q_t)?;
    let ts = vec![t; states.len()];
    let soft = match which {
        ExactObjective::CeOriginal | ExactObjective::L2Original => Some(conditional_targets(q_t, &states)?),
        _ => None,
    };
    let mut head = |l: &Array3<f64>| match which {
        ExactObjective::CeSimplified => ce_observed(l, &states, &weights),
        ExactObjective::CeOriginal => ce_soft(l, soft.as_ref().expect("targets"), &weights),
        ExactObjective::L2Simplified => l2_observed(l, &states, &weights),
        ExactObjective::L2Original => l2_soft(l, soft.as_ref().expect("targets"), &weights),
    };
    model.value_and_grad(&states, &ts, &mut head)
}

/// `sum_x q_t(x) sum_d H(q_t(. | x^{\d}))`, the floor of both cross-entropy losses.
pub fn conditional_entropy(q_t: &TabularDistribution) -> Result<f64> {
    let (states, weights) = enumerate(q_t)?;
    let targets = conditional_targets(q_t, &states)?;
    let mut total = 0.0;
    for (i, w) in weights.iter().enumerate() {
        for p in targets.slice(ndarray::s![i, .., ..]).iter() {
            if *p > 0.0 {
                total -= w * p * p.ln();
            }
        }
    }
    Ok(total)
}

/// Expected KL from exact to model conditionals under `q_t`.
pub fn conditional_kl(model: &dyn ConditionalModel, q_t: &TabularDistribution, t: f64) -> Result<f64> {
    let (states, weights) = enumerate(q_t)?;
    let targets = conditional_targets(q_t, &states)?;
    let logits = model.logits_batch(&states, &vec![t; states.len()])?;
    let (_, dims, vocab) = logits.dim();
    let mut total = 0.0;
    for (i, w) in weights.iter().enumerate() {
        for d in 0..dims {
            let lp = log_softmax(logits.slice(ndarray::s![i, d, ..]).as_slice().expect("contiguous"));
            for c in 0..vocab {
                let q = targets[[i, d, c]];
                if q > 0.0 {
                    total += w * q * (q.ln() - lp[c]);
                }
            }
        }
    }
    Ok(total)
}

/// Floor on log-probabilities inside the path objective.
pub const PATH_LOG_FLOOR: f64 = -27.631_021_115_928_547; // ln 1e-12

/// Result of one time slice of the path objective.
#[derive(Debug, Clone)]
pub struct PathSlice {
    pub value: f64,
    pub grad: Array3<f64>,
    /// Log-probabilities raised to the floor.
    pub clamped: usize,
}

/// Time-`t` integrand of the path-space objective,
/// `sum_x q_t(x) sum_d sum_{z != x^d} [r_z Q_t(x^d -> z) + Q_t(z -> x^d) log r_z]`
/// with `r_z = p(z | x^{\d}) / p(x^d | x^{\d})` read from `logits` (rows in
/// state-index order).
pub fn path_kl_slice(logits: &Array3<f64>, q_t: &TabularDistribution, beta: f64, rate: &RateSpec) -> Result<PathSlice> {
    let (n, dims, vocab) = logits.dim();
    check_rows(logits, q_t.probs().len())?;
    let space = q_t.space();
    let mut grad = Array3::zeros(logits.dim());
    let mut value = 0.0;
    let mut clamped = 0;
    let mut digits = vec![0; dims];
    for i in 0..n {
        let w = q_t.probs()[i];
        space.digits_into(i, &mut digits);
        for d in 0..dims {
            let raw = log_softmax(logits.slice(ndarray::s![i, d, ..]).as_slice().expect("contiguous"));
            let lp: Vec<f64> = raw
                .iter()
                .map(|&l| {
                    if l < PATH_LOG_FLOOR {
                        clamped += 1;
                        PATH_LOG_FLOOR
                    } else {
                        l
                    }
                })
                .collect();
            let live: Vec<bool> = raw.iter().map(|&l| l >= PATH_LOG_FLOOR).collect();
            let x = digits[d];
            // Gradient with respect to the clamped log-probabilities.
            let mut dlp = vec![0.0; vocab];
            for z in (0..vocab).filter(|&z| z != x) {
                let log_r = lp[z] - lp[x];
                let r = log_r.exp();
                let out_rate = beta * rate.entry(x, z);
                let in_rate = beta * rate.entry(z, x);
                value += w * (r * out_rate + in_rate * log_r);
                let g = w * (r * out_rate + in_rate);
                dlp[z] += g;
                dlp[x] -= g;
            }
            // Pull back through log-softmax, skipping clamped entries.
            let total: f64 = (0..vocab).filter(|&c| live[c]).map(|c| dlp[c]).sum();
            for c in 0..vocab {
                let own = if live[c] { dlp[c] } else { 0.0 };
                grad[[i, d, c]] = own - raw[c].exp() * total;
            }
        }
    }
    if !value.is_finite() {
        return Err(Error::numeric("path objective", format!("value is {value}")));
    }
    Ok(PathSlice { value, grad, clamped })
}

/// Checks a model's declared mode against what a loss needs.
pub(crate) fn require_mode(mode: ModelMode, want: ModelMode, loss: &str) -> Result<()> {
    if mode != want {
        return Err(Error::config(format!("{loss} needs a {want:?} model, got {mode:?}")));
    }
    Ok(())
}
