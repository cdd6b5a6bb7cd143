//! Exact time reversal of the forward chain.

use ndarray::Array2;

use super::forward::product_kernel;
use super::{exact_marginal, NoiseSchedule, RateSpec, TabularDistribution};
use crate::space::State;
use crate::{Error, Result};

/// Marginals below this are treated as unreachable.
pub const UNREACHABLE: f64 = 1e-300;

/// Which way round the marginal ratio enters the reverse rate.
///
/// `Inverted` is a deliberately wrong variant used as a negative control by
/// the verification suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RatioOrientation {
    #[default]
    Correct,
    Inverted,
}

/// Reverse-time rate `R_t(x, y) = q_t(y) / q_t(x) * Q_t(y, x)`.
///
/// Zero unless `x` and `y` differ in exactly one dimension.
pub fn reverse_rate(
    q_t: &TabularDistribution,
    rate: &RateSpec,
    sched: &NoiseSchedule,
    t: f64,
    x: &State,
    y: &State,
) -> Result<f64> {
    reverse_rate_oriented(q_t, rate, sched, t, x, y, RatioOrientation::Correct)
}

pub fn reverse_rate_oriented(
    q_t: &TabularDistribution,
    rate: &RateSpec,
    sched: &NoiseSchedule,
    t: f64,
    x: &State,
    y: &State,
    orientation: RatioOrientation,
) -> Result<f64> {
    let space = q_t.space();
    space.validate(x)?;
    space.validate(y)?;
    let qx = q_t.prob(x);
    if qx < UNREACHABLE {
        return Err(Error::Singular(format!("q_t(x) = {qx} at x = {:?}", x.values())));
    }
    if x.hamming(y) != 1 {
        return Ok(0.0);
    }
    let d = (0..x.len()).find(|&d| x.0[d] != y.0[d]).expect("one differing dim");
    let qy = q_t.prob(y);
    let ratio = match orientation {
        RatioOrientation::Correct => qy / qx,
        RatioOrientation::Inverted if qy < UNREACHABLE => 0.0,
        RatioOrientation::Inverted => qx / qy,
    };
    Ok(ratio * sched.beta(t)? * rate.entry(y.0[d], x.0[d]))
}

/// Reverse transition table `q_{s|t}(x | y)` with rows indexed by `y`.
#[derive(Debug, Clone)]
pub struct ReverseTable {
    pub matrix: Array2<f64>,
    /// `false` where `q_t(y)` is below the unreachable threshold; those rows are zero.
    pub reachable: Vec<bool>,
}

impl ReverseTable {
    /// Pushes a law at time `t` back to time `s`.
    pub fn apply(&self, q_t: &[f64]) -> Vec<f64> {
        let n = self.matrix.ncols();
        let mut out = vec![0.0; n];
        for (y, row) in self.matrix.rows().into_iter().enumerate() {
            if q_t[y] == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(row.iter()) {
                *o += q_t[y] * v;
            }
        }
        out
    }
}

/// `q_{s|t}(x | y) = q_s(x) q_{t|s}(y | x) / q_t(y)` for `s <= t`.
pub fn reverse_transition_exact(
    pi0: &TabularDistribution,
    s: f64,
    t: f64,
    sched: &NoiseSchedule,
    rate: &RateSpec,
) -> Result<ReverseTable> {
    if s > t {
        return Err(Error::domain(format!("reverse transition needs s <= t, got {s} > {t}")));
    }
    let space = *pi0.space();
    let q_s = exact_marginal(pi0, s, sched, rate)?;
    let forward = product_kernel(&space, &rate.kernel(sched.cumulative(s, t)?)?)?;
    let n = forward.nrows();
    let mut matrix = Array2::zeros((n, n));
    let mut reachable = vec![false; n];
    for y in 0..n {
        // q_t(y) recomputed from the same kernel so rows normalize exactly.
        let q_ty: f64 = (0..n).map(|x| q_s.probs()[x] * forward[[x, y]]).sum();
        if q_ty < UNREACHABLE {
            continue;
        }
        reachable[y] = true;
        for x in 0..n {
            matrix[[y, x]] = q_s.probs()[x] * forward[[x, y]] / q_ty;
        }
    }
    Ok(ReverseTable { matrix, reachable })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::forward::product_generator;
    use crate::rng::seeded;
    use crate::space::StateSpace;

    #[test]
    fn uniform_marginal_gives_beta() {
        let space = StateSpace::new(2, 3).unwrap();
        let u = TabularDistribution::uniform(space).unwrap();
        let rate = RateSpec::uniform(3).unwrap();
        let sched = NoiseSchedule::constant(1.7);
        let x = State(vec![0, 1]);
        for y in [State(vec![2, 1]), State(vec![0, 0])] {
            let r = reverse_rate(&u, &rate, &sched, 0.4, &x, &y).unwrap();
            assert!((r - 1.7).abs() < 1e-15);
        }
        assert_eq!(reverse_rate(&u, &rate, &sched, 0.4, &x, &State(vec![1, 2])).unwrap(), 0.0);
    }

    #[test]
    fn two_state_hand_case() {
        let space = StateSpace::binary(1).unwrap();
        let q = TabularDistribution::new(space, vec![0.8, 0.2]).unwrap();
        let rate = RateSpec::general(ndarray::array![[-1.0, 1.0], [1.0, -1.0]]).unwrap();
        let r = reverse_rate(&q, &rate, &NoiseSchedule::constant(1.0), 0.5, &State(vec![0]), &State(vec![1]))
            .unwrap();
        assert!((r - 0.25).abs() < 1e-15);
    }

    #[test]
    fn singular_state_rejected() {
        let space = StateSpace::binary(1).unwrap();
        let q = TabularDistribution::new(space, vec![1.0, 0.0]).unwrap();
        let rate = RateSpec::uniform(2).unwrap();
        let e = reverse_rate(&q, &rate, &NoiseSchedule::default(), 0.5, &State(vec![1]), &State(vec![0]));
        assert!(matches!(e, Err(Error::Singular(_))));
    }

    #[test]
    fn reverse_flow_balances_forward_flow() {
        let space = StateSpace::new(2, 3).unwrap();
        let q = TabularDistribution::random_positive(space, 0.05, &mut seeded(12)).unwrap();
        let mut g = product_generator(&space, &RateSpec::uniform(3).unwrap()).unwrap();
        g *= 0.9;
        let rate = RateSpec::uniform(3).unwrap();
        let sched = NoiseSchedule::constant(0.9);
        for x in space.states().unwrap() {
            let ix = space.index_of(x.values());
            let mut out_flow = 0.0;
            let mut in_flow = 0.0;
            for y in space.states().unwrap() {
                if y == x {
                    continue;
                }
                let iy = space.index_of(y.values());
                out_flow += q.prob(&x) * reverse_rate(&q, &rate, &sched, 0.3, &x, &y).unwrap();
                in_flow += q.prob(&y) * g[[iy, ix]];
            }
            assert!((out_flow - in_flow).abs() < 1e-14);
        }
    }

    #[test]
    fn reverse_table_rows_and_chapman_kolmogorov() {
        let space = StateSpace::new(2, 3).unwrap();
        let pi = TabularDistribution::random_positive(space, 0.0, &mut seeded(13)).unwrap();
        let sched = NoiseSchedule::cosine();
        let rate = RateSpec::uniform(3).unwrap();
        let (s, t) = (0.2, 0.65);
        let table = reverse_transition_exact(&pi, s, t, &sched, &rate).unwrap();
        for row in table.matrix.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        let q_t = exact_marginal(&pi, t, &sched, &rate).unwrap();
        let q_s = exact_marginal(&pi, s, &sched, &rate).unwrap();
        let back = table.apply(q_t.probs());
        for (a, b) in back.iter().zip(q_s.probs()) {
            assert!((a - b).abs() < 1e-12);
        }
        let same = reverse_transition_exact(&pi, t, t, &sched, &rate).unwrap();
        for ((i, j), v) in same.matrix.indexed_iter() {
            assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }

    #[test]
    fn binary_bayes_hand_case() {
        let space = StateSpace::binary(1).unwrap();
        let pi = TabularDistribution::new(space, vec![0.7, 0.3]).unwrap();
        let sched = NoiseSchedule::default();
        let rate = RateSpec::uniform(2).unwrap();
        let table = reverse_transition_exact(&pi, 0.0, 0.4, &sched, &rate).unwrap();
        let (stay, mv) = crate::ctmc::uniform_transition_row(2, 0.4);
        // P(x0 = 0 | x_t = 1) = 0.7 mv / (0.7 mv + 0.3 stay)
        let expected = 0.7 * mv / (0.7 * mv + 0.3 * stay);
        assert!((table.matrix[[1, 0]] - expected).abs() < 1e-15);
    }
}
