use ndarray::{Array2, Array3};
use rand::Rng;

use super::{Ctx, Measured};
use crate::ctmc::forward::{product_generator, product_kernel};
use crate::ctmc::{
    exact_marginal, reverse_rate_oriented, reverse_transition_exact, NoiseSchedule, RateSpec, TabularDistribution,
};
use crate::eval::{empirical_distribution, mmd_exp_hamming, tv_distance, MmdConfig, MmdEstimator};
use crate::models::{
    gradient_check, leak_check, reconstruct_from_conditionals, tabular_conditionals, Architecture, ConditionalModel,
    Differentiable, ExactModel, ModelDescriptor, ModelMode, NetworkModel, TabularModel,
};
use crate::rng::{seeded, stream, SimRng};
use crate::samplers::{
    analytical_rows, draw_from_rows, euler_rows, exact_reverse_simulate, lb_corrector_rows,
    ordinal_birth_death_batch, BalanceFunction, ExactReverseConfig, TableRatios,
};
use crate::space::gray::{gray_decode, gray_encode};
use crate::space::{context_index, State, StateSpace};
use crate::training::losses::{ce_observed, l2_observed, l2_term, x0_ce_observed};
use crate::training::{
    exact_objective, path_kl_tabular, uniform_time_grid, ExactObjective, ForwardProcess, OrdinalKernelSpec,
    PATH_GRID_POINTS,
};
use crate::Result;

fn rng(ctx: &Ctx, index: u64) -> SimRng {
    stream(ctx.seed, index)
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random table with pronounced structure: weights `u^4`.
fn peaked_table(space: StateSpace, rng: &mut SimRng) -> Result<TabularDistribution> {
    let n = space.enumerable_size()?;
    TabularDistribution::from_weights(space, (0..n).map(|_| 0.01 + rng.random::<f64>().powi(4)).collect())
}

fn random_generator(c: usize, rng: &mut SimRng) -> Result<RateSpec> {
    let mut m = Array2::zeros((c, c));
    for i in 0..c {
        let mut total = 0.0;
        for j in (0..c).filter(|&j| j != i) {
            m[[i, j]] = rng.random_range(0.2..1.5);
            total += m[[i, j]];
        }
        m[[i, i]] = -total;
    }
    RateSpec::general(m)
}

pub(super) fn gray_codec(_: &Ctx) -> Result<Measured> {
    let mut failures = 0;
    for n in 0..256u64 {
        if gray_decode(&gray_encode(n, 8)?)? != n {
            failures += 1;
        }
        if n < 255 {
            let a = gray_encode(n, 8)?;
            let b = gray_encode(n + 1, 8)?;
            if a.iter().zip(&b).filter(|(x, y)| x != y).count() != 1 {
                failures += 1;
            }
        }
    }
    Ok(Measured::at_most(failures as f64, 0.0, "8-bit roundtrip and one-bit adjacency"))
}

/// Central differences of `K(0, t)` against `K(0, t) beta(t) G` converge at
/// second order.
pub(super) fn kolmogorov_forward(ctx: &Ctx) -> Result<Measured> {
    let mut r = rng(ctx, 1);
    let space = StateSpace::new(2, 3)?;
    let rate = random_generator(3, &mut r)?;
    let sched = NoiseSchedule::cosine();
    let gen = product_generator(&space, &rate)?;
    let kernel_at = |t: f64| -> Result<Array2<f64>> { product_kernel(&space, &rate.kernel(sched.cumulative(0.0, t)?)?) };
    let t = 0.5;
    let rhs = kernel_at(t)?.dot(&gen) * sched.beta(t)?;
    let residual = |h: f64| -> Result<f64> {
        let fd = (kernel_at(t + h)? - kernel_at(t - h)?) / (2.0 * h);
        Ok(max_abs_diff(&fd, &rhs))
    };
    let (coarse, fine) = (residual(1e-3)?, residual(5e-4)?);
    let ratio = coarse / fine;
    Ok(Measured {
        metric: ratio,
        threshold: 0.5,
        passed: (ratio - 4.0).abs() <= 0.5,
        detail: format!("residuals {coarse:.3e} at h=1e-3, {fine:.3e} at h=5e-4; ratio must be 4 +- 0.5"),
    })
}

/// Reverse transitions are distributions, carry `q_t` back to `q_s`, and
/// compose over an intermediate time.
pub(super) fn transition_reversal(ctx: &Ctx) -> Result<Measured> {
    let mut r = rng(ctx, 2);
    let space = StateSpace::new(2, 3)?;
    let data = peaked_table(space, &mut r)?;
    let rate = random_generator(3, &mut r)?;
    let sched = NoiseSchedule::constant(1.3);
    let (s, u, t) = (0.2, 0.45, 0.7);
    let st = reverse_transition_exact(&data, s, t, &sched, &rate)?;
    let su = reverse_transition_exact(&data, s, u, &sched, &rate)?;
    let ut = reverse_transition_exact(&data, u, t, &sched, &rate)?;
    let q_t = exact_marginal(&data, t, &sched, &rate)?;
    let q_s = exact_marginal(&data, s, &sched, &rate)?;
    let mut worst: f64 = 0.0;
    for row in st.matrix.rows() {
        worst = worst.max((row.sum() - 1.0).abs());
    }
    for (a, b) in st.apply(q_t.probs()).iter().zip(q_s.probs()) {
        worst = worst.max((a - b).abs());
    }
    worst = worst.max(max_abs_diff(&ut.matrix.dot(&su.matrix), &st.matrix));
    Ok(Measured::at_most(worst, 1e-12, "row sums, pushback of q_t, Chapman-Kolmogorov"))
}

/// The reverse rates transport `q_t` backwards: `-d/dt q_t = q_t R_t`.
pub(super) fn rate_reversal_flow(ctx: &Ctx) -> Result<Measured> {
    let mut r = rng(ctx, 3);
    let space = StateSpace::new(2, 3)?;
    let data = peaked_table(space, &mut r)?;
    let rate = random_generator(3, &mut r)?;
    let sched = NoiseSchedule::cosine();
    let (t, h) = (0.4, 1e-4);
    let q_t = exact_marginal(&data, t, &sched, &rate)?;
    let up = exact_marginal(&data, t + h, &sched, &rate)?;
    let down = exact_marginal(&data, t - h, &sched, &rate)?;
    let states: Vec<State> = space.states()?.collect();
    let mut worst: f64 = 0.0;
    for (xi, x) in states.iter().enumerate() {
        // Net reverse-time inflow at x.
        let mut flow = 0.0;
        for y in states.iter().filter(|y| y.hamming(x) == 1) {
            flow += q_t.prob(y) * reverse_rate_oriented(&q_t, &rate, &sched, t, y, x, ctx.faults.orientation)?;
            flow -= q_t.prob(x) * reverse_rate_oriented(&q_t, &rate, &sched, t, x, y, ctx.faults.orientation)?;
        }
        let dq = (up.probs()[xi] - down.probs()[xi]) / (2.0 * h);
        worst = worst.max((flow + dq).abs());
    }
    Ok(Measured::at_most(worst, 1e-7, "reverse Kolmogorov residual at t = 0.4"))
}

/// Reverse simulation from `q_T` lands on the data law.
pub(super) fn reverse_simulation_tv(ctx: &Ctx) -> Result<Measured> {
    let mut r = rng(ctx, 4);
    let space = StateSpace::new(ctx.pick(3, 4), 3)?;
    let data = peaked_table(space, &mut r)?;
    let process = ForwardProcess::uniform(3, NoiseSchedule::constant(2.0))?;
    let paths = ctx.pick(20_000, 100_000);
    let cfg = ExactReverseConfig {
        orientation: ctx.faults.orientation,
        ..Default::default()
    };
    let samples = exact_reverse_simulate(&data, &process, paths, &cfg, ctx.seed)?;
    let tv = tv_distance(&empirical_distribution(&samples, &space)?, &data)?;
    Ok(Measured::at_most(tv, 0.05, format!("{paths} paths on {} states", space.enumerable_size()?)))
}

/// Singleton conditionals determine the joint.
pub(super) fn conditional_reconstruction(ctx: &Ctx) -> Result<Measured> {
    let mut r = rng(ctx, 5);
    let space = StateSpace::new(3, 3)?;
    let table = peaked_table(space, &mut r)?;
    let rebuilt = reconstruct_from_conditionals(&tabular_conditionals(&table)?)?;
    let err = table
        .probs()
        .iter()
        .zip(rebuilt.probs())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(Measured::at_most(err, 1e-9, "joint rebuilt from conditionals"))
}

/// Original and simplified objectives share gradients and value differences.
pub(super) fn loss_equivalence(ctx: &Ctx) -> Result<Measured> {
    let mut r = rng(ctx, 6);
    let space = StateSpace::new(4, 3)?;
    let q_t = TabularDistribution::random_positive(space, 0.0, &mut r)?;
    let desc = ModelDescriptor::new(Architecture::Masked, space)
        .with_hidden(vec![16])
        .with_time_features(4);
    let mut model = NetworkModel::new(desc, ctx.seed)?;
    let t = 0.4;
    let mut worst: f64 = 0.0;
    for (orig, simple) in [
        (ExactObjective::CeOriginal, ExactObjective::CeSimplified),
        (ExactObjective::L2Original, ExactObjective::L2Simplified),
    ] {
        model.parameters_mut().randomize(0.5, &mut r);
        let (o1, go) = exact_objective(&model, &q_t, t, orig)?;
        let (s1, gs) = exact_objective(&model, &q_t, t, simple)?;
        worst = worst.max(go.iter().zip(&gs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        model.parameters_mut().randomize(0.5, &mut r);
        let (o2, _) = exact_objective(&model, &q_t, t, orig)?;
        let (s2, _) = exact_objective(&model, &q_t, t, simple)?;
        worst = worst.max(((o1 - o2) - (s1 - s2)).abs());
    }
    Ok(Measured::at_most(worst, 1e-8, "gradient and value-difference gaps, cross-entropy and l2"))
}

/// Joint transition of one Euler step, rows indexed by the current state.
fn euler_joint(model: &dyn ConditionalModel, t: f64, eps: f64, process: &ForwardProcess) -> Result<Array2<f64>> {
    let space = model.space();
    let states: Vec<State> = space.states()?.collect();
    let rows = euler_rows(model, &states, t, eps, process)?;
    Ok(Array2::from_shape_fn((states.len(), states.len()), |(i, j)| {
        (0..space.dims()).map(|d| rows[[i, d, states[j].0[d]]]).product()
    }))
}

pub(super) fn euler_local_order(ctx: &Ctx) -> Result<Measured> {
    let mut r = rng(ctx, 7);
    let space = StateSpace::new(2, 3)?;
    let data = peaked_table(space, &mut r)?;
    let process = ForwardProcess::uniform(3, NoiseSchedule::constant(1.0))?;
    let t = 0.5;
    let q_t = exact_marginal(&data, t, &process.schedule, &process.rate)?;
    let model = TabularModel::from_table(&tabular_conditionals(&q_t)?, ModelMode::NoisyMarginal)?;
    let errors = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&eps| {
            let exact = reverse_transition_exact(&data, t - eps, t, &process.schedule, &process.rate)?;
            Ok(max_abs_diff(&euler_joint(&model, t, eps, &process)?, &exact.matrix))
        })
        .collect::<Result<Vec<f64>>>()?;
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let off = ratios.iter().map(|q| (q - 4.0).abs()).fold(0.0, f64::max);
    Ok(Measured::at_most(off, 1.0, format!("error ratios {ratios:.3?}, must be 4 +- 1")))
}

/// Factorized analytical rows equal per-dimension marginals of the joint
/// reverse transition.
pub(super) fn analytical_exactness(ctx: &Ctx) -> Result<Measured> {
    let mut r = rng(ctx, 8);
    let space = StateSpace::new(3, 3)?;
    let data = peaked_table(space, &mut r)?;
    let process = ForwardProcess::uniform(3, NoiseSchedule::constant(1.0))?;
    let model = ExactModel::new(data.clone(), process.schedule, process.rate.clone(), ModelMode::Denoising)?;
    let states: Vec<State> = space.states()?.collect();
    let mut worst: f64 = 0.0;
    for (t, eps) in [(0.6, 0.2), (0.3, 0.3), (0.9, 0.01)] {
        let rows = analytical_rows(&model, &states, t, eps, &process)?;
        let joint = reverse_transition_exact(&data, t - eps, t, &process.schedule, &process.rate)?;
        for (i, _) in states.iter().enumerate() {
            for d in 0..space.dims() {
                let mut law = vec![0.0; 3];
                for (j, prev) in states.iter().enumerate() {
                    law[prev.0[d]] += joint.matrix[[i, j]];
                }
                for v in 0..3 {
                    worst = worst.max((rows[[i, d, v]] - law[v]).abs());
                }
            }
        }
    }
    Ok(Measured::at_most(worst, 1e-9, "per-dimension laws at three (t, eps) pairs"))
}

/// Balance identity of both weightings, detailed balance of the exact
/// corrector, and convergence of a corrector-only chain.
pub(super) fn corrector_balance(ctx: &Ctx) -> Result<Measured> {
    let mut identity: f64 = 0.0;
    for g in [BalanceFunction::Sqrt, BalanceFunction::RatioOverOnePlus] {
        for u in [0.1, 0.5, 1.0, 2.0, 10.0] {
            identity = identity.max((g.apply(u) - u * g.apply(1.0 / u)).abs());
        }
    }
    let mut r = rng(ctx, 9);
    let space = StateSpace::new(3, 3)?;
    let data = TabularDistribution::random_positive(space, 0.0, &mut r)?;
    let process = ForwardProcess::uniform(3, NoiseSchedule::constant(1.0))?;
    let t = 0.2;
    let q_t = exact_marginal(&data, t, &process.schedule, &process.rate)?;
    let model = ExactModel::new(data, process.schedule, process.rate.clone(), ModelMode::NoisyMarginal)?;
    let states: Vec<State> = space.states()?.collect();
    let h = 1e-3;
    let rows = lb_corrector_rows(&model, &states, t, h, BalanceFunction::Sqrt, &process)?;
    let mut balance: f64 = 0.0;
    for (i, x) in states.iter().enumerate() {
        for d in 0..3 {
            for v in (0..3).filter(|&v| v != x.0[d]) {
                let y = x.with(d, v);
                let j = space.index_of(&y.0);
                let forward = q_t.probs()[i] * rows[[i, d, v]];
                let back = q_t.probs()[j] * rows[[j, d, x.0[d]]];
                balance = balance.max((forward - back).abs() / forward.max(back));
            }
        }
    }
    let chains = ctx.pick(10_000, 20_000);
    let mut xs: Vec<State> = (0..chains)
        .map(|_| State((0..3).map(|_| r.random_range(0..3)).collect()))
        .collect();
    for _ in 0..500 {
        let rows = lb_corrector_rows(&model, &xs, t, 1e-2, BalanceFunction::Sqrt, &process)?;
        xs = draw_from_rows(&rows, &mut r);
    }
    let tv = tv_distance(&empirical_distribution(&xs, &space)?, &q_t)?;
    Ok(Measured {
        metric: tv,
        threshold: 0.05,
        passed: identity <= 1e-12 && balance <= 1e-12 && tv <= 0.05,
        detail: format!(
            "identity gap {identity:.2e}, relative flow gap {balance:.2e}, TV {tv:.4} after 500 steps of {chains} chains"
        ),
    })
}

pub(super) fn binary_reduction(_: &Ctx) -> Result<Measured> {
    let mut worst: f64 = 0.0;
    for k in 0..=1000 {
        let p = k as f64 / 1000.0;
        for x in 0..2 {
            let probs = if x == 0 { [p, 1.0 - p] } else { [1.0 - p, p] };
            worst = worst.max((l2_term(&probs, x) - (2.0 * (1.0 - p) * (1.0 - p) - 1.0)).abs());
        }
    }
    Ok(Measured::at_most(worst, 4.0 * f64::EPSILON, "1001 grid values of p"))
}

/// Analytic gradients of every network against central differences.
pub(super) fn gradient_engine(ctx: &Ctx) -> Result<Measured> {
    let mut r = rng(ctx, 10);
    let space = StateSpace::new(3, 3)?;
    let process = ForwardProcess::uniform(3, NoiseSchedule::constant(1.0))?;
    let xs: Vec<State> = (0..5)
        .map(|_| State((0..3).map(|_| r.random_range(0..3)).collect()))
        .collect();
    let ts: Vec<f64> = (0..5).map(|_| r.random_range(0.05..1.0)).collect();
    let ws = vec![0.2; 5];
    let kernels = ts.iter().map(|&t| process.kernel(t)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Array2<f64>> = kernels.iter().collect();
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for (arch, hidden) in [
        (Architecture::Ebm, vec![12, 12]),
        (Architecture::Masked, vec![12, 10]),
        (Architecture::Hollow, vec![4, 4, 4]),
    ] {
        for loss in ["ce", "l2", "x0"] {
            let mode = if loss == "x0" { ModelMode::Denoising } else { ModelMode::NoisyMarginal };
            let desc = ModelDescriptor::new(arch, space)
                .with_hidden(hidden.clone())
                .with_time_features(4)
                .with_mode(mode);
            let mut model = NetworkModel::new(desc, ctx.seed)?;
            model.parameters_mut().randomize(0.5, &mut r);
            let report = match loss {
                "ce" => gradient_check(&mut model, &xs, &ts, &mut |l| ce_observed(l, &xs, &ws), 20, 1e-5, &mut r)?,
                "l2" => gradient_check(&mut model, &xs, &ts, &mut |l| l2_observed(l, &xs, &ws), 20, 1e-5, &mut r)?,
                _ => gradient_check(
                    &mut model,
                    &xs,
                    &ts,
                    &mut |l: &Array3<f64>| x0_ce_observed(l, &xs, &refs, &ws),
                    20,
                    1e-5,
                    &mut r,
                )?,
            };
            worst = worst.max(report.max_rel_error);
            details.push(format!("{arch:?}/{loss} {:.1e}", report.max_rel_error));
        }
    }
    Ok(Measured::at_most(worst, 1e-4, details.join(", ")))
}

pub(super) fn leak_freedom(ctx: &Ctx) -> Result<Measured> {
    let mut r = rng(ctx, 11);
    let space = StateSpace::new(5, 3)?;
    let trials = ctx.pick(1_000, 10_000);
    let mut violations = 0;
    for (arch, hidden) in [(Architecture::Masked, vec![16, 16]), (Architecture::Hollow, vec![4, 4, 4])] {
        let desc = ModelDescriptor::new(arch, space).with_hidden(hidden).with_time_features(4);
        let mut model = NetworkModel::new(desc, ctx.seed)?;
        model.parameters_mut().randomize(0.5, &mut r);
        violations += leak_check(&model, trials, &mut r)?.violations;
    }
    Ok(Measured::at_most(
        violations as f64,
        0.0,
        format!("{trials} perturbation trials per architecture"),
    ))
}

/// Exact conditionals shifted by fixed per-context noise.
struct PerturbedModel<'a> {
    base: &'a ExactModel,
    noise: Vec<Vec<f64>>,
}

impl ConditionalModel for PerturbedModel<'_> {
    fn space(&self) -> StateSpace {
        self.base.space()
    }

    fn mode(&self) -> ModelMode {
        self.base.mode()
    }

    fn logits_batch(&self, xs: &[State], ts: &[f64]) -> Result<Array3<f64>> {
        let mut out = self.base.logits_batch(xs, ts)?;
        let space = self.space();
        let c = space.vocab();
        for (i, x) in xs.iter().enumerate() {
            for d in 0..space.dims() {
                let ctx = context_index(&space, &x.0, d);
                for v in 0..c {
                    out[[i, d, v]] += self.noise[d][ctx * c + v];
                }
            }
        }
        Ok(out)
    }
}

/// The path objective with ratios read straight from the marginal table.
fn path_objective_direct(data: &TabularDistribution, process: &ForwardProcess, grid: &[f64]) -> Result<f64> {
    let space = *data.space();
    let states: Vec<State> = space.states()?.collect();
    let mut values = Vec::new();
    for &t in grid {
        let q = exact_marginal(data, t, &process.schedule, &process.rate)?;
        let beta = process.schedule.beta(t)?;
        let mut v = 0.0;
        for x in &states {
            let qx = q.prob(x);
            for d in 0..space.dims() {
                for z in (0..space.vocab()).filter(|&z| z != x.0[d]) {
                    let ratio = q.prob(&x.with(d, z)) / qx;
                    v += qx
                        * (ratio * beta * process.rate.entry(x.0[d], z) + beta * process.rate.entry(z, x.0[d]) * ratio.ln());
                }
            }
        }
        values.push(v);
    }
    Ok(grid
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum())
}

pub(super) fn path_kl_optimality(ctx: &Ctx) -> Result<Measured> {
    let mut r = rng(ctx, 12);
    let space = StateSpace::new(2, 3)?;
    let data = TabularDistribution::random_positive(space, 0.05, &mut r)?;
    let process = ForwardProcess::uniform(3, NoiseSchedule::constant(1.0))?;
    let grid = uniform_time_grid(1e-3, 1.0, PATH_GRID_POINTS)?;
    let exact = ExactModel::new(data.clone(), process.schedule, process.rate.clone(), ModelMode::NoisyMarginal)?;
    let at_exact = path_kl_tabular(&exact, &data, &process.schedule, &process.rate, &grid)?.value;
    let direct = path_objective_direct(&data, &process, &grid)?;
    let gap = (at_exact - direct).abs();
    let contexts = 3usize;
    let mut decreases = 0;
    let mut smallest_rise = f64::INFINITY;
    for _ in 0..20 {
        let noise = (0..2)
            .map(|_| (0..contexts * 3).map(|_| r.random_range(-0.3..0.3)).collect())
            .collect();
        let perturbed = PerturbedModel { base: &exact, noise };
        let v = path_kl_tabular(&perturbed, &data, &process.schedule, &process.rate, &grid)?.value;
        smallest_rise = smallest_rise.min(v - at_exact);
        if v < at_exact {
            decreases += 1;
        }
    }
    Ok(Measured {
        metric: gap,
        threshold: 1e-8,
        passed: gap <= 1e-8 && decreases == 0,
        detail: format!("value {at_exact:.17e} vs direct {direct:.17e}, gap {gap:.2e}; {decreases} of 20 perturbations decreased it (smallest rise {smallest_rise:.3e})"),
    })
}

pub(super) fn ordinal_score(ctx: &Ctx) -> Result<Measured> {
    let kernel = OrdinalKernelSpec {
        corrupt_rate: 2.5,
        support: 32,
    };
    let mut target_err: f64 = 0.0;
    for xt in 1..31 {
        for x0 in (0..32).step_by(3) {
            for t in [0.05, 0.3, 1.0] {
                let want = -2.0 * (xt as f64 - x0 as f64) / (kernel.corrupt_rate * t);
                target_err = target_err.max((kernel.score_target(xt, x0, t) - want).abs());
            }
        }
    }
    let space = StateSpace::ordinal(1, 10)?;
    let table = TabularDistribution::from_weights(space, (0..10).map(|k| 0.75f64.powi(k)).collect())?;
    let ratios = TableRatios { table: table.clone() };
    let mut r = rng(ctx, 13);
    let sampler = table.sampler();
    let chains = ctx.pick(10_000, 20_000);
    let mut xs: Vec<State> = (0..chains).map(|_| space.state_at(sampler.sample_index(&mut r))).collect();
    for _ in 0..50 {
        xs = ordinal_birth_death_batch(&ratios, &xs, 0.5, 0.05, BalanceFunction::Sqrt, &mut r)?;
    }
    let tv = tv_distance(&empirical_distribution(&xs, &space)?, &table)?;
    Ok(Measured {
        metric: tv,
        threshold: 0.05,
        passed: target_err <= 1e-10 && tv <= 0.05,
        detail: format!("interior target error {target_err:.2e}; geometric law TV {tv:.4} after 50 steps"),
    })
}

pub(super) fn mmd_kernel(ctx: &Ctx) -> Result<Measured> {
    let mut r = seeded(ctx.seed ^ 0x5eed);
    let space = StateSpace::binary(32)?;
    let draw = |r: &mut SimRng, n: usize| -> Vec<State> {
        (0..n).map(|_| State((0..32).map(|_| r.random_range(0..2)).collect())).collect()
    };
    let xs = draw(&mut r, 200);
    let ys = draw(&mut r, 150);
    let cfg = MmdConfig::default();
    let mut worst: f64 = 0.0;
    // k(x, x) = 1 makes a set indistinguishable from itself.
    worst = worst.max(mmd_exp_hamming(&xs, &xs, &space, &cfg)?.abs());
    let ab = mmd_exp_hamming(&xs, &ys, &space, &cfg)?;
    let ba = mmd_exp_hamming(&ys, &xs, &space, &cfg)?;
    worst = worst.max((ab - ba).abs());
    worst = worst.max((-ab).max(0.0));
    let unbiased = MmdConfig {
        estimator: MmdEstimator::Unbiased,
        ..cfg
    };
    let u = mmd_exp_hamming(&xs, &ys, &space, &unbiased)?;
    worst = worst.max((-2.0 / 150.0 - u).max(0.0));
    Ok(Measured::at_most(worst, 1e-12, "self-distance, symmetry and estimator bounds"))
}
