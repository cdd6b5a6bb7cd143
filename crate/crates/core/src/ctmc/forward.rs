//! Forward corruption: per-dimension sampling, exact event simulation and
//! exact marginal propagation.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NoiseSchedule, RateSpec, TabularDistribution};
use crate::rng::{categorical, unit_exponential};
use crate::space::{State, StateSpace};
use crate::{Error, Result};

/// One jump of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub dim: usize,
    pub value: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial: State,
    pub events: Vec<JumpEvent>,
}

impl Trajectory {
    /// State after all events.
    pub fn terminal(&self) -> State {
        self.state_at(f64::INFINITY)
    }

    /// State holding at time `t` (events at exactly `t` included).
    pub fn state_at(&self, t: f64) -> State {
        let mut x = self.initial.clone();
        for e in self.events.iter().take_while(|e| e.time <= t) {
            x.0[e.dim] = e.value;
        }
        x
    }

    /// Checks increasing times and that every event changes its dimension.
    pub fn is_consistent(&self) -> bool {
        let mut x = self.initial.clone();
        let mut last = f64::NEG_INFINITY;
        for e in &self.events {
            if e.time <= last || e.dim >= x.len() || x.0[e.dim] == e.value {
                return false;
            }
            x.0[e.dim] = e.value;
            last = e.time;
        }
        true
    }
}

/// Draws `x_t` given `x_s` by independent per-dimension transitions.
pub fn forward_sample<R: Rng + ?Sized>(
    x: &State,
    s: f64,
    t: f64,
    sched: &NoiseSchedule,
    rate: &RateSpec,
    rng: &mut R,
) -> Result<State> {
    let tau = sched.cumulative(s, t)?;
    if tau == 0.0 {
        return Ok(x.clone());
    }
    let kernel = rate.kernel(tau)?;
    Ok(forward_sample_with_kernel(x, &kernel, rate.is_uniform(), rng))
}

/// Per-dimension transition under a precomputed kernel.
pub fn forward_sample_with_kernel<R: Rng + ?Sized>(
    x: &State,
    kernel: &Array2<f64>,
    uniform: bool,
    rng: &mut R,
) -> State {
    let c = kernel.nrows();
    let values = x
        .values()
        .iter()
        .map(|&v| {
            if uniform {
                // Move with total probability (C-1) * move to a uniformly chosen other value.
                let leave = 1.0 - kernel[[v, v]];
                if rng.random::<f64>() < leave {
                    let other = rng.random_range(0..c - 1);
                    if other >= v {
                        other + 1
                    } else {
                        other
                    }
                } else {
                    v
                }
            } else {
                categorical(kernel.row(v).as_slice().expect("contiguous row"), rng)
            }
        })
        .collect();
    State(values)
}

/// Exact event-driven simulation of the forward chain on `[0, horizon]`.
///
/// Waiting times are drawn in the cumulative-rate clock and mapped back to
/// wall time by inverting the schedule integral.
pub fn gillespie_forward<R: Rng + ?Sized>(
    x0: &State,
    sched: &NoiseSchedule,
    rate: &RateSpec,
    horizon: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    if horizon > sched.horizon + 1e-12 {
        return Err(Error::domain("simulation horizon past the schedule horizon"));
    }
    let c = rate.vocab();
    let mut x = x0.clone();
    let mut events = Vec::new();
    let mut t = 0.0;
    loop {
        let exit: Vec<f64> = x.values().iter().map(|&v| rate.exit_rate(v)).collect();
        let total: f64 = exit.iter().sum();
        if total <= 0.0 {
            break;
        }
        let target = unit_exponential(rng) / total;
        let next = match sched.advance(t, target)? {
            Some(next) if next <= horizon => next,
            _ => break,
        };
        if next <= t {
            // Bisection resolution reached; a further event cannot be ordered.
            break;
        }
        t = next;
        let d = categorical(&exit, rng);
        let from = x.0[d];
        let weights: Vec<f64> = (0..c)
            .map(|to| if to == from { 0.0 } else { rate.entry(from, to) })
            .collect();
        let to = categorical(&weights, rng);
        x.0[d] = to;
        events.push(JumpEvent { time: t, dim: d, value: to });
    }
    Ok(Trajectory {
        initial: x0.clone(),
        events,
    })
}

/// Applies a per-dimension kernel along every dimension listed in `dims`:
/// `out[.., b, ..] = sum_a p[.., a, ..] K[a, b]`.
pub fn apply_kernel_dims(probs: &[f64], space: &StateSpace, kernel: &Array2<f64>, dims: &[usize]) -> Vec<f64> {
    let c = space.vocab();
    let mut cur = probs.to_vec();
    let mut next = vec![0.0; cur.len()];
    let mut column = vec![0.0; c];
    for &d in dims {
        let stride = space.stride(d);
        let block = stride * c;
        for base in (0..cur.len()).step_by(block) {
            for offset in 0..stride {
                let start = base + offset;
                for (a, slot) in column.iter_mut().enumerate() {
                    *slot = cur[start + a * stride];
                }
                for b in 0..c {
                    let mut acc = 0.0;
                    for (a, &pa) in column.iter().enumerate() {
                        acc += pa * kernel[[a, b]];
                    }
                    next[start + b * stride] = acc;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Exact `q_t = sum_{x0} pi0(x0) q_{t|0}(. | x0)`.
pub fn exact_marginal(
    pi0: &TabularDistribution,
    t: f64,
    sched: &NoiseSchedule,
    rate: &RateSpec,
) -> Result<TabularDistribution> {
    propagate(pi0, 0.0, t, sched, rate)
}

/// Exact law at time `t` of a chain with law `p` at time `s`.
pub fn propagate(
    p: &TabularDistribution,
    s: f64,
    t: f64,
    sched: &NoiseSchedule,
    rate: &RateSpec,
) -> Result<TabularDistribution> {
    let space = *p.space();
    rate.validate_for(space.vocab())?;
    let tau = sched.cumulative(s, t)?;
    let kernel = rate.kernel(tau)?;
    let dims: Vec<usize> = (0..space.dims()).collect();
    let mut probs = apply_kernel_dims(p.probs(), &space, &kernel, &dims);
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|v| *v = (*v / total).max(0.0));
    TabularDistribution::new(space, probs)
}

/// Dense product-space transition matrix `q_{t|s}(y | x)`, rows indexed by `x`.
pub fn product_kernel(space: &StateSpace, kernel: &Array2<f64>) -> Result<Array2<f64>> {
    let n = space.enumerable_size()?;
    if n > 1 << 12 {
        return Err(Error::Capacity(format!(
            "dense {n}x{n} transition matrix exceeds 4096 states"
        )));
    }
    let mut xd = vec![0; space.dims()];
    let mut yd = vec![0; space.dims()];
    Ok(Array2::from_shape_fn((n, n), |(x, y)| {
        space.digits_into(x, &mut xd);
        space.digits_into(y, &mut yd);
        xd.iter().zip(&yd).map(|(&a, &b)| kernel[[a, b]]).product()
    }))
}

/// Dense product-space generator `sum_d I x .. x Q x .. x I` (without `beta`).
pub fn product_generator(space: &StateSpace, rate: &RateSpec) -> Result<Array2<f64>> {
    let n = space.enumerable_size()?;
    if n > 1 << 12 {
        return Err(Error::Capacity(format!("dense {n}x{n} generator exceeds 4096 states")));
    }
    let mut g = Array2::zeros((n, n));
    let mut xd = vec![0; space.dims()];
    for x in 0..n {
        space.digits_into(x, &mut xd);
        for d in 0..space.dims() {
            let stride = space.stride(d);
            let from = xd[d];
            for to in 0..space.vocab() {
                let y = x + to * stride - from * stride;
                g[[x, y]] += rate.entry(from, to);
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn tv(a: &[f64], b: &[f64]) -> f64 {
        0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }

    #[test]
    fn zero_interval_is_identity() {
        let sched = NoiseSchedule::default();
        let rate = RateSpec::uniform(3).unwrap();
        let x = State(vec![2, 0, 1]);
        let y = forward_sample(&x, 0.4, 0.4, &sched, &rate, &mut seeded(1)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn flip_frequency_matches_closed_form() {
        let sched = NoiseSchedule::default();
        let rate = RateSpec::uniform(2).unwrap();
        let x = State(vec![0]);
        let mut rng = seeded(2);
        let n = 100_000;
        let flips = (0..n)
            .filter(|_| forward_sample(&x, 0.0, 0.3, &sched, &rate, &mut rng).unwrap().0[0] == 1)
            .count();
        let (_, mv) = super::super::uniform_transition_row(2, 0.3);
        let sd = (mv * (1.0 - mv) / n as f64).sqrt();
        assert!((flips as f64 / n as f64 - mv).abs() < 3.0 * sd);
    }

    #[test]
    fn kernel_application_matches_dense_product() {
        let space = StateSpace::new(3, 3).unwrap();
        let p = TabularDistribution::random_positive(space, 0.0, &mut seeded(5)).unwrap();
        let rate = RateSpec::uniform(3).unwrap();
        let k = rate.kernel(0.35).unwrap();
        let fast = apply_kernel_dims(p.probs(), &space, &k, &[0, 1, 2]);
        let dense = product_kernel(&space, &k).unwrap();
        let slow = ndarray::Array1::from(p.probs().to_vec()).dot(&dense);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn marginal_at_zero_and_at_saturation() {
        let space = StateSpace::new(2, 3).unwrap();
        let p = TabularDistribution::random_positive(space, 0.0, &mut seeded(6)).unwrap();
        let rate = RateSpec::uniform(3).unwrap();
        let q0 = exact_marginal(&p, 0.0, &NoiseSchedule::default(), &rate).unwrap();
        assert!(tv(q0.probs(), p.probs()) < 1e-15);
        let q = exact_marginal(&p, 1.0, &NoiseSchedule::constant(50.0), &rate).unwrap();
        assert!(q.probs().iter().all(|v| (v - 1.0 / 9.0).abs() < 1e-6));
    }

    #[test]
    fn uniform_law_is_stationary() {
        let space = StateSpace::new(2, 4).unwrap();
        let u = TabularDistribution::uniform(space).unwrap();
        let rate = RateSpec::uniform(4).unwrap();
        for t in [0.01, 0.3, 1.0] {
            let q = exact_marginal(&u, t, &NoiseSchedule::cosine(), &rate).unwrap();
            assert!(tv(q.probs(), u.probs()) < 1e-14);
        }
    }

    #[test]
    fn gillespie_without_rate_has_no_events() {
        let traj = gillespie_forward(
            &State(vec![1, 0]),
            &NoiseSchedule::constant(0.0),
            &RateSpec::uniform(3).unwrap(),
            1.0,
            &mut seeded(3),
        )
        .unwrap();
        assert!(traj.events.is_empty());
    }

    #[test]
    fn gillespie_paths_are_consistent() {
        let sched = NoiseSchedule::cosine();
        let rate = RateSpec::uniform(3).unwrap();
        let mut rng = seeded(9);
        for _ in 0..200 {
            let traj = gillespie_forward(&State(vec![0, 2]), &sched, &rate, 1.0, &mut rng).unwrap();
            assert!(traj.is_consistent());
            assert!(traj.events.iter().all(|e| e.time > 0.0 && e.time <= 1.0));
        }
    }

    #[test]
    fn gillespie_terminal_law_matches_exact_marginal() {
        let space = StateSpace::new(2, 3).unwrap();
        let sched = NoiseSchedule::cosine();
        let rate = RateSpec::uniform(3).unwrap();
        let x0 = State(vec![0, 2]);
        let t = 0.6;
        let exact = exact_marginal(
            &TabularDistribution::point_mass(space, &x0).unwrap(),
            t,
            &sched,
            &rate,
        )
        .unwrap();
        let mut counts = vec![0.0; 9];
        let mut rng = seeded(10);
        let n = 100_000;
        for _ in 0..n {
            let traj = gillespie_forward(&x0, &sched, &rate, t, &mut rng).unwrap();
            counts[space.index_of(traj.terminal().values())] += 1.0 / n as f64;
        }
        assert!(tv(&counts, exact.probs()) < 0.02);
    }
}
