//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line to stderr (written past the test harness capture).
//!
//! Reference values are computed here from first principles: closed-form
//! uniform-rate kernels, brute-force enumeration of joints and reverse
//! kernels, direct finite differences and plain histograms.

use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::Rng;

use catdiff::ctmc::forward::product_kernel;
use catdiff::ctmc::{NoiseSchedule, RateSpec, TabularDistribution};
use catdiff::eval::{evaluate_run, mmd_exp_hamming, EvalConfig, MmdConfig, MmdEstimator};
use catdiff::models::{
    AnyModel, Architecture, ConditionalModel, Differentiable, ExactModel, ModelDescriptor, ModelMode, NetworkModel,
};
use catdiff::rng::{seeded, SimRng};
use catdiff::samplers::{
    analytical_rows, draw_from_rows, euler_rows, exact_reverse_simulate, lb_corrector_rows, ordinal_birth_death_batch,
    sample_reverse, BalanceFunction, ExactReverseConfig, SamplerConfig, SamplerKind, TableRatios,
};
use catdiff::space::toy::ToySource;
use catdiff::space::{ToyDataset, ToyDatasetSpec};
use catdiff::training::losses::{ce_observed, l2_observed, l2_term, x0_ce_observed};
use catdiff::training::{
    exact_objective, path_kl_tabular, train, uniform_time_grid, AdamConfig, DataSource, ExactObjective,
    ForwardProcess, OrdinalKernelSpec, TrainConfig, PATH_GRID_POINTS,
};
use catdiff::{State, StateSpace};

fn report(id: usize, name: &str, passed: bool, detail: String) {
    let mut err = std::io::stderr().lock();
    let verdict = if passed { "PASS" } else { "FAIL" };
    let _ = writeln!(err, "criterion {id:>2} [{verdict}] {name}: {detail}");
}

fn all_states(space: &StateSpace) -> Vec<State> {
    (0..space.enumerable_size().unwrap()).map(|i| space.state_at(i)).collect()
}

/// `exp(tau (11^T - C I))` for one dimension.
fn uniform_kernel(c: usize, tau: f64) -> Array2<f64> {
    let decay = (-(c as f64) * tau).exp();
    let off = (1.0 - decay) / c as f64;
    Array2::from_shape_fn((c, c), |(a, b)| if a == b { decay + off } else { off })
}

/// Joint kernel as a product over dimensions, rows and columns in state-index order.
fn joint_kernel(states: &[State], k: &Array2<f64>) -> Array2<f64> {
    let n = states.len();
    Array2::from_shape_fn((n, n), |(i, j)| {
        states[i].0.iter().zip(&states[j].0).map(|(&a, &b)| k[[a, b]]).product()
    })
}

/// `pi K` under a constant-rate uniform process.
fn marginal(pi: &[f64], states: &[State], c: usize, tau: f64) -> Vec<f64> {
    let k = joint_kernel(states, &uniform_kernel(c, tau));
    (0..states.len()).map(|j| (0..states.len()).map(|i| pi[i] * k[[i, j]]).sum()).collect()
}

/// `q_{s|t}(y | x) = q_s(y) K_{s->t}(y, x) / q_t(x)`, rows indexed by `x`.
fn reverse_kernel(pi: &[f64], states: &[State], c: usize, rate: f64, s: f64, t: f64) -> Array2<f64> {
    let q_s = marginal(pi, states, c, rate * s);
    let q_t = marginal(pi, states, c, rate * t);
    let k = joint_kernel(states, &uniform_kernel(c, rate * (t - s)));
    let n = states.len();
    Array2::from_shape_fn((n, n), |(x, y)| q_s[y] * k[[y, x]] / q_t[x])
}

fn histogram_tv(samples: &[State], space: &StateSpace, target: &[f64]) -> f64 {
    let mut counts = vec![0.0; target.len()];
    for s in samples {
        counts[space.index_of(&s.0)] += 1.0;
    }
    let n = samples.len() as f64;
    0.5 * counts.iter().zip(target).map(|(c, p)| (c / n - p).abs()).sum::<f64>()
}

fn peaked(n: usize, rng: &mut SimRng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| 0.01 + rng.random::<f64>().powi(4)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

fn max_abs(a: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().map(f64::abs).fold(0.0, f64::max)
}

#[test]
fn criterion_01_loss_equivalence() {
    let start = Instant::now();
    let mut rng = seeded(101);
    let space = StateSpace::new(4, 3).unwrap();
    let states = all_states(&space);
    let q_t = TabularDistribution::random_positive(space, 0.0, &mut rng).unwrap();
    let q = q_t.probs().to_vec();
    let desc = ModelDescriptor::new(Architecture::Masked, space)
        .with_hidden(vec![16])
        .with_time_features(4);
    let mut model = NetworkModel::new(desc, 7).unwrap();
    let t = 0.4;

    // Both objectives by enumeration, with conditionals read off the joint.
    let direct = |model: &NetworkModel| -> (f64, f64) {
        let logits = model.logits_batch(&states, &vec![t; states.len()]).unwrap();
        let (mut original, mut simplified) = (0.0, 0.0);
        for (i, x) in states.iter().enumerate() {
            for d in 0..4 {
                let row: Vec<f64> = (0..3).map(|c| logits[[i, d, c]]).collect();
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
                let joint: Vec<f64> = (0..3).map(|c| q[space.index_of(&x.with(d, c).0)]).collect();
                let z: f64 = joint.iter().sum();
                for c in 0..3 {
                    original -= q[i] * joint[c] / z * (row[c] - lse);
                }
                simplified -= q[i] * (row[x.0[d]] - lse);
            }
        }
        (original, simplified)
    };

    model.parameters_mut().randomize(0.5, &mut rng);
    let (o1, g_orig) = exact_objective(&model, &q_t, t, ExactObjective::CeOriginal).unwrap();
    let (s1, g_simple) = exact_objective(&model, &q_t, t, ExactObjective::CeSimplified).unwrap();
    let (ro1, rs1) = direct(&model);
    model.parameters_mut().randomize(0.5, &mut rng);
    let (o2, _) = exact_objective(&model, &q_t, t, ExactObjective::CeOriginal).unwrap();
    let (s2, _) = exact_objective(&model, &q_t, t, ExactObjective::CeSimplified).unwrap();
    let (ro2, rs2) = direct(&model);

    let grad_gap = max_abs(g_orig.iter().zip(&g_simple).map(|(a, b)| a - b));
    let diff_gap = ((o1 - o2) - (s1 - s2)).abs();
    let value_gap = max_abs([o1 - ro1, s1 - rs1, o2 - ro2, s2 - rs2]);
    let secs = start.elapsed().as_secs_f64();
    let passed = grad_gap <= 1e-8 && diff_gap <= 1e-8 && value_gap <= 1e-10 && secs < 10.0;
    report(
        1,
        "original vs simplified cross-entropy",
        passed,
        format!(
            "gradient gap {grad_gap:.2e} over {} coords, value-difference gap {diff_gap:.2e}, enumeration gap {value_gap:.2e}, {secs:.2}s",
            g_orig.len()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_02_reverse_simulation_recovers_data() {
    let start = Instant::now();
    let mut rng = seeded(202);
    let space = StateSpace::new(4, 3).unwrap();
    let pi = peaked(81, &mut rng);
    let data = TabularDistribution::new(space, pi.clone()).unwrap();
    let process = ForwardProcess::uniform(3, NoiseSchedule::constant(2.0)).unwrap();
    let samples = exact_reverse_simulate(&data, &process, 100_000, &ExactReverseConfig::default(), 5).unwrap();
    let tv = histogram_tv(&samples, &space, &pi);
    let secs = start.elapsed().as_secs_f64();
    let passed = tv <= 0.05 && secs < 120.0;
    report(2, "exact reverse simulation", passed, format!("TV {tv:.4} on 81 states from 1e5 paths, {secs:.1}s"));
    assert!(passed);
}

/// Random generator with off-diagonal rates in `[0.2, 1.5)`.
fn random_generator(c: usize, rng: &mut SimRng) -> Array2<f64> {
    let mut m = Array2::zeros((c, c));
    for i in 0..c {
        for j in (0..c).filter(|&j| j != i) {
            m[[i, j]] = rng.random_range(0.2..1.5);
        }
        m[[i, i]] = -(0..c).filter(|&j| j != i).map(|j| m[[i, j]]).sum::<f64>();
    }
    m
}

/// Sum of per-dimension generators acting on the product space.
fn product_generator(states: &[State], g: &Array2<f64>) -> Array2<f64> {
    let n = states.len();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let diff: Vec<usize> = (0..states[i].len()).filter(|&d| states[i].0[d] != states[j].0[d]).collect();
        match diff.len() {
            0 => (0..states[i].len()).map(|d| g[[states[i].0[d], states[i].0[d]]]).sum(),
            1 => g[[states[i].0[diff[0]], states[j].0[diff[0]]]],
            _ => 0.0,
        }
    })
}

/// Taylor series with scaling and squaring.
fn expm(a: &Array2<f64>) -> Array2<f64> {
    let norm = a.iter().map(|v| v.abs()).fold(0.0, f64::max) * a.nrows() as f64;
    let squarings = norm.max(1.0).log2().ceil() as u32 + 4;
    let scaled = a / 2f64.powi(squarings as i32);
    let mut term = Array2::eye(a.nrows());
    let mut sum = term.clone();
    for k in 1..30 {
        term = term.dot(&scaled) / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = sum.dot(&sum);
    }
    sum
}

#[test]
fn criterion_03_kolmogorov_forward_residual() {
    let mut rng = seeded(303);
    let space = StateSpace::new(2, 3).unwrap();
    let states = all_states(&space);
    let g = random_generator(3, &mut rng);
    let rate = RateSpec::general(g.clone()).unwrap();
    let sched = NoiseSchedule::cosine();
    let gen = product_generator(&states, &g);
    let kernel_at = |t: f64| product_kernel(&space, &rate.kernel(sched.cumulative(0.0, t).unwrap()).unwrap()).unwrap();
    let t = 0.5;
    // The kernel itself against an independent matrix exponential.
    let reference = expm(&(&gen * sched.cumulative(0.0, t).unwrap()));
    let kernel_gap = max_abs((&kernel_at(t) - &reference).iter().copied());
    let rhs = kernel_at(t).dot(&gen) * sched.beta(t).unwrap();
    let residual = |h: f64| max_abs(((kernel_at(t + h) - kernel_at(t - h)) / (2.0 * h) - &rhs).iter().copied());
    let (coarse, fine) = (residual(1e-3), residual(5e-4));
    let ratio = coarse / fine;
    let passed = (ratio - 4.0).abs() <= 0.5 && kernel_gap <= 1e-10;
    report(
        3,
        "Kolmogorov forward residual",
        passed,
        format!("residuals {coarse:.3e} / {fine:.3e}, Richardson ratio {ratio:.4}; kernel vs expm {kernel_gap:.1e}"),
    );
    assert!(passed);
}

#[test]
fn criterion_04_euler_local_order() {
    let mut rng = seeded(404);
    let space = StateSpace::new(2, 3).unwrap();
    let states = all_states(&space);
    let pi = peaked(9, &mut rng);
    let data = TabularDistribution::new(space, pi.clone()).unwrap();
    let process = ForwardProcess::uniform(3, NoiseSchedule::constant(1.0)).unwrap();
    let model = ExactModel::new(data, process.schedule, process.rate.clone(), ModelMode::NoisyMarginal).unwrap();
    let t = 0.5;
    let mut errors = Vec::new();
    for eps in [1e-2, 5e-3, 2.5e-3] {
        let rows = euler_rows(&model, &states, t, eps, &process).unwrap();
        let exact = reverse_kernel(&pi, &states, 3, 1.0, t - eps, t);
        let mut worst: f64 = 0.0;
        for (i, _) in states.iter().enumerate() {
            for (j, y) in states.iter().enumerate() {
                let p: f64 = (0..2).map(|d| rows[[i, d, y.0[d]]]).product();
                worst = worst.max((p - exact[[i, j]]).abs());
            }
        }
        errors.push(worst);
    }
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let passed = ratios.iter().all(|r| (r - 4.0).abs() <= 1.0);
    report(
        4,
        "Euler local order",
        passed,
        format!(
            "errors {}, ratios {}",
            errors.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(" / "),
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(" / ")
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_05_analytical_sampler_exactness() {
    let mut rng = seeded(505);
    let space = StateSpace::new(3, 3).unwrap();
    let states = all_states(&space);
    let pi = peaked(27, &mut rng);
    let data = TabularDistribution::new(space, pi.clone()).unwrap();
    let process = ForwardProcess::uniform(3, NoiseSchedule::constant(1.0)).unwrap();
    let model = ExactModel::new(data, process.schedule, process.rate.clone(), ModelMode::Denoising).unwrap();
    let mut worst: f64 = 0.0;
    for (t, eps) in [(0.6, 0.2), (0.3, 0.3), (0.9, 0.01), (1.0, 0.5)] {
        let rows = analytical_rows(&model, &states, t, eps, &process).unwrap();
        let joint = reverse_kernel(&pi, &states, 3, 1.0, t - eps, t);
        for i in 0..states.len() {
            for d in 0..3 {
                let mut law = [0.0; 3];
                for (j, y) in states.iter().enumerate() {
                    law[y.0[d]] += joint[[i, j]];
                }
                for v in 0..3 {
                    worst = worst.max((rows[[i, d, v]] - law[v]).abs());
                }
            }
        }
    }

    // One step from T to 0 on a product law; q_T is uniform to ~1e-5 at rate 4.
    let marginals = [[0.7, 0.2, 0.1], [0.1, 0.1, 0.8], [0.3, 0.4, 0.3]];
    let product: Vec<f64> = states.iter().map(|x| (0..3).map(|d| marginals[d][x.0[d]]).product()).collect();
    let data = TabularDistribution::new(space, product.clone()).unwrap();
    let fast = ForwardProcess::uniform(3, NoiseSchedule::constant(4.0)).unwrap();
    let model = ExactModel::new(data, fast.schedule, fast.rate.clone(), ModelMode::Denoising).unwrap();
    let cfg = SamplerConfig {
        kind: SamplerKind::Analytical,
        steps: 1,
        seed: 9,
        ..Default::default()
    };
    let samples = sample_reverse(&model, &cfg, &fast, 100_000).unwrap();
    let tv = histogram_tv(&samples, &space, &product);
    let passed = worst <= 1e-9 && tv <= 0.05;
    report(
        5,
        "analytical sampler exactness",
        passed,
        format!("max entry gap {worst:.2e}; single full-denoise step TV {tv:.4} from 1e5 samples"),
    );
    assert!(passed);
}

#[test]
fn criterion_06_locally_balanced_corrector() {
    let mut identity: f64 = 0.0;
    let by_hand: [fn(f64) -> f64; 2] = [f64::sqrt, |u| u / (1.0 + u)];
    for (g, reference) in [BalanceFunction::Sqrt, BalanceFunction::RatioOverOnePlus].into_iter().zip(by_hand) {
        for u in [0.1, 0.5, 1.0, 2.0, 10.0] {
            identity = identity.max((g.apply(u) - u * g.apply(1.0 / u)).abs());
            identity = identity.max((g.apply(u) - reference(u)).abs());
        }
    }

    let mut rng = seeded(606);
    let space = StateSpace::new(3, 3).unwrap();
    let states = all_states(&space);
    let pi = peaked(27, &mut rng);
    let data = TabularDistribution::new(space, pi.clone()).unwrap();
    let process = ForwardProcess::uniform(3, NoiseSchedule::constant(1.0)).unwrap();
    let model = ExactModel::new(data, process.schedule, process.rate.clone(), ModelMode::NoisyMarginal).unwrap();
    let t = 0.2;
    let q_t = marginal(&pi, &states, 3, t);
    let mut xs: Vec<State> = (0..20_000)
        .map(|_| State((0..3).map(|_| rng.random_range(0..3)).collect()))
        .collect();
    for _ in 0..500 {
        let rows = lb_corrector_rows(&model, &xs, t, 1e-2, BalanceFunction::Sqrt, &process).unwrap();
        xs = draw_from_rows(&rows, &mut rng);
    }
    let tv = histogram_tv(&xs, &space, &q_t);
    let passed = identity <= 1e-12 && tv <= 0.05;
    report(
        6,
        "locally balanced corrector",
        passed,
        format!("balance identity gap {identity:.1e}; corrector-only TV to q_t {tv:.4} (20000 chains, 500 steps)"),
    );
    assert!(passed);
}

#[test]
fn criterion_07_binary_reduction() {
    let mut worst: f64 = 0.0;
    for k in 0..=1000 {
        let p = k as f64 / 1000.0;
        for x in 0..2 {
            let probs = if x == 0 { [p, 1.0 - p] } else { [1.0 - p, p] };
            worst = worst.max((l2_term(&probs, x) - (2.0 * (1.0 - p).powi(2) - 1.0)).abs());
        }
    }
    let passed = worst <= 4.0 * f64::EPSILON;
    report(7, "binary reduction of the squared loss", passed, format!("max gap {worst:.1e} over 1001 p values"));
    assert!(passed);
}

#[test]
fn criterion_08_gradient_engine() {
    let mut rng = seeded(808);
    let space = StateSpace::new(3, 3).unwrap();
    let xs: Vec<State> = (0..5)
        .map(|_| State((0..3).map(|_| rng.random_range(0..3)).collect()))
        .collect();
    let ts: Vec<f64> = (0..5).map(|_| rng.random_range(0.05..1.0)).collect();
    let ws = vec![0.2; 5];
    let kernels: Vec<Array2<f64>> = ts.iter().map(|&t| uniform_kernel(3, t)).collect();
    let refs: Vec<&Array2<f64>> = kernels.iter().collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
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
            let mut model = NetworkModel::new(desc, 1).unwrap();
            model.parameters_mut().randomize(0.5, &mut rng);
            let mut head = |l: &Array3<f64>| match loss {
                "ce" => ce_observed(l, &xs, &ws),
                "l2" => l2_observed(l, &xs, &ws),
                _ => x0_ce_observed(l, &xs, &refs, &ws),
            };
            let (_, grad) = model.value_and_grad(&xs, &ts, &mut head).unwrap();
            let free = model.parameters().free_indices();
            let mut arch_worst: f64 = 0.0;
            for _ in 0..20 {
                let i = free[rng.random_range(0..free.len())];
                let base = model.parameters().values[i];
                model.parameters_mut().values[i] = base + h;
                let up = model.value_and_grad(&xs, &ts, &mut head).unwrap().0;
                model.parameters_mut().values[i] = base - h;
                let down = model.value_and_grad(&xs, &ts, &mut head).unwrap().0;
                model.parameters_mut().values[i] = base;
                let fd = (up - down) / (2.0 * h);
                let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
                arch_worst = arch_worst.max(rel);
            }
            worst = worst.max(arch_worst);
            parts.push(format!("{arch:?}/{loss} {arch_worst:.1e}"));
        }
    }
    let passed = worst <= 1e-4;
    report(8, "gradient engine vs finite differences", passed, format!("max rel error {worst:.2e} ({})", parts.join(", ")));
    assert!(passed);
}

#[test]
fn criterion_09_leak_freedom() {
    let mut rng = seeded(909);
    let space = StateSpace::new(5, 3).unwrap();
    let trials = 10_000;
    let mut violations = 0;
    let mut deviation: f64 = 0.0;
    for (arch, hidden) in [(Architecture::Masked, vec![16, 16]), (Architecture::Hollow, vec![4, 4, 4])] {
        let desc = ModelDescriptor::new(arch, space).with_hidden(hidden).with_time_features(4);
        let mut model = NetworkModel::new(desc, 2).unwrap();
        model.parameters_mut().randomize(0.5, &mut rng);
        let mut xs = Vec::with_capacity(trials);
        let mut ys = Vec::with_capacity(trials);
        let mut ds = Vec::with_capacity(trials);
        let mut ts = Vec::with_capacity(trials);
        for _ in 0..trials {
            let x = State((0..5).map(|_| rng.random_range(0..3)).collect());
            let d = rng.random_range(0..5);
            let y = x.with(d, (x.0[d] + rng.random_range(1..3)) % 3);
            xs.push(x);
            ys.push(y);
            ds.push(d);
            ts.push(rng.random_range(1e-3..1.0));
        }
        let lx = model.logits_batch(&xs, &ts).unwrap();
        let ly = model.logits_batch(&ys, &ts).unwrap();
        for (i, &d) in ds.iter().enumerate() {
            let gap = max_abs((0..3).map(|v| lx[[i, d, v]] - ly[[i, d, v]]));
            if (0..3).any(|v| lx[[i, d, v]].to_bits() != ly[[i, d, v]].to_bits()) {
                violations += 1;
            }
            deviation = deviation.max(gap);
        }
    }
    let passed = violations == 0;
    report(
        9,
        "leak freedom of masked and hollow networks",
        passed,
        format!("{violations} violations, max deviation {deviation:.1e} over {trials} trials per architecture"),
    );
    assert!(passed);
}

struct MmdGates {
    model: f64,
    null: f64,
    untrained: f64,
}

impl MmdGates {
    fn below_null_multiple(&self) -> bool {
        self.model < 10.0 * self.null
    }

    fn below_untrained(&self) -> bool {
        10.0 * self.model <= self.untrained
    }
}

/// Trains an EBM on 2spirals and measures mean MMD over 10 repeats of 4000
/// samples for the trained model, the data itself and the untrained model.
fn toy_mmd_run(bits: u32, hidden: Vec<usize>, steps: usize, sampler_steps: usize, estimator: MmdEstimator) -> MmdGates {
    let spec = ToyDatasetSpec::new(ToyDataset::TwoSpirals, bits).unwrap();
    let source = ToySource { spec };
    let process = ForwardProcess::uniform(2, NoiseSchedule::constant(4.0)).unwrap();
    let desc = ModelDescriptor::new(Architecture::Ebm, spec.space())
        .with_hidden(hidden)
        .with_time_features(16);
    let untrained = AnyModel::build(&desc, 11).unwrap();
    let mut model = AnyModel::build(&desc, 11).unwrap();
    let cfg = TrainConfig {
        steps,
        batch_size: 128,
        optimizer: AdamConfig::new(1e-3),
        seed: 12,
        eval_every: 1000,
        ..Default::default()
    };
    train(&cfg, &process, &source, &mut model).unwrap();

    let eval = EvalConfig {
        mmd: MmdConfig {
            estimator,
            ..Default::default()
        },
        seed: 13,
        ..Default::default()
    };
    let mean_for = |m: Option<&AnyModel>| -> f64 {
        let mut generate = |n: usize, seed: u64| -> catdiff::Result<Vec<State>> {
            match m {
                Some(m) => {
                    let sampler = SamplerConfig {
                        steps: sampler_steps,
                        seed,
                        ..Default::default()
                    };
                    sample_reverse(m.as_conditional().unwrap(), &sampler, &process, n)
                }
                None => {
                    let mut rng = seeded(seed);
                    Ok((0..n).map(|_| source.sample(&mut rng)).collect())
                }
            }
        };
        evaluate_run(&mut generate, &source, &eval).unwrap().metrics["mmd_mean"]
    };
    MmdGates {
        model: mean_for(Some(&model)),
        null: mean_for(None),
        untrained: mean_for(Some(&untrained)),
    }
}

fn criterion_10(bits: u32, steps: usize, budget_secs: f64) {
    let start = Instant::now();
    let g = toy_mmd_run(bits, vec![64, 64], steps, 100, MmdEstimator::Biased);
    let secs = start.elapsed().as_secs_f64();
    let passed = g.below_null_multiple() && g.below_untrained() && secs <= budget_secs;
    report(
        10,
        &format!("2spirals EBM at {bits} bits per axis, {steps} steps"),
        passed,
        format!(
            "MMD x1e-4: model {:.3}, data null {:.3}, untrained {:.3}; model < 10x null: {}; untrained/model = {:.2} (needs >= 10); {secs:.0}s",
            g.model * 1e4,
            g.null * 1e4,
            g.untrained * 1e4,
            g.below_null_multiple(),
            g.untrained / g.model
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_10_toy_mmd_six_bits() {
    criterion_10(6, 40_000, 20.0 * 60.0);
}

/// Full-size run; takes hours on one core.
#[test]
#[ignore]
fn criterion_10_toy_mmd_sixteen_bits() {
    criterion_10(16, 50_000, 4.0 * 3600.0);
}

/// Exact conditionals shifted by noise that depends on `(d, x^{\d})` only.
struct Perturbed<'a> {
    base: &'a ExactModel,
    noise: HashMap<(usize, usize), [f64; 3]>,
}

impl ConditionalModel for Perturbed<'_> {
    fn space(&self) -> StateSpace {
        self.base.space()
    }

    fn mode(&self) -> ModelMode {
        self.base.mode()
    }

    fn logits_batch(&self, xs: &[State], ts: &[f64]) -> catdiff::Result<Array3<f64>> {
        let space = self.space();
        let mut out = self.base.logits_batch(xs, ts)?;
        for (i, x) in xs.iter().enumerate() {
            for d in 0..space.dims() {
                let shift = self.noise[&(d, space.index_of(&x.with(d, 0).0))];
                for v in 0..3 {
                    out[[i, d, v]] += shift[v];
                }
            }
        }
        Ok(out)
    }
}

#[test]
fn criterion_11_path_objective() {
    let mut rng = seeded(1111);
    let space = StateSpace::new(2, 3).unwrap();
    let states = all_states(&space);
    let pi = peaked(9, &mut rng);
    let data = TabularDistribution::new(space, pi.clone()).unwrap();
    let process = ForwardProcess::uniform(3, NoiseSchedule::constant(1.0)).unwrap();
    let grid = uniform_time_grid(1e-3, 1.0, PATH_GRID_POINTS).unwrap();
    let exact = ExactModel::new(data.clone(), process.schedule, process.rate.clone(), ModelMode::NoisyMarginal).unwrap();
    let at_exact = path_kl_tabular(&exact, &data, &process.schedule, &process.rate, &grid).unwrap().value;

    // Same functional with ratios taken straight from enumerated marginals;
    // uniform rate: every off-diagonal entry is 1 and beta = 1.
    let slices: Vec<f64> = grid
        .iter()
        .map(|&t| {
            let q = marginal(&pi, &states, 3, t);
            let mut v = 0.0;
            for (i, x) in states.iter().enumerate() {
                for d in 0..2 {
                    for z in (0..3).filter(|&z| z != x.0[d]) {
                        let r = q[space.index_of(&x.with(d, z).0)] / q[i];
                        v += q[i] * (r + r.ln());
                    }
                }
            }
            v
        })
        .collect();
    let direct: f64 = grid
        .windows(2)
        .zip(slices.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum();
    let gap = (at_exact - direct).abs();

    let mut decreases = 0;
    let mut smallest_rise = f64::INFINITY;
    for _ in 0..20 {
        let mut noise = HashMap::new();
        for d in 0..2 {
            for x in &states {
                noise
                    .entry((d, space.index_of(&x.with(d, 0).0)))
                    .or_insert_with(|| [0; 3].map(|_| rng.random_range(-0.3..0.3)));
            }
        }
        let perturbed = Perturbed { base: &exact, noise };
        let v = path_kl_tabular(&perturbed, &data, &process.schedule, &process.rate, &grid).unwrap().value;
        smallest_rise = smallest_rise.min(v - at_exact);
        decreases += usize::from(v < at_exact);
    }
    let passed = gap <= 1e-8 && decreases == 0;
    report(
        11,
        "path objective at the exact model",
        passed,
        format!("gap to direct evaluation {gap:.2e}; {decreases}/20 perturbations decreased it (smallest rise {smallest_rise:.2e})"),
    );
    assert!(passed);
}

#[test]
fn criterion_12_ordinal_score_matching() {
    let kernel = OrdinalKernelSpec {
        corrupt_rate: 2.5,
        support: 32,
    };
    let mut target_gap: f64 = 0.0;
    for xt in 1..31 {
        for x0 in 0..32 {
            for t in [0.05, 0.3, 1.0, 2.0] {
                let closed = -2.0 * (xt as f64 - x0 as f64) / (kernel.corrupt_rate * t);
                target_gap = target_gap.max((kernel.score_target(xt, x0, t) - closed).abs());
            }
        }
    }

    let space = StateSpace::ordinal(1, 10).unwrap();
    let weights: Vec<f64> = (0..10).map(|k| 0.75f64.powi(k)).collect();
    let z: f64 = weights.iter().sum();
    let geometric: Vec<f64> = weights.iter().map(|w| w / z).collect();
    let table = TabularDistribution::new(space, geometric.clone()).unwrap();
    let ratios = TableRatios { table };
    let mut rng = seeded(1212);
    let mut xs: Vec<State> = (0..20_000)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let k = geometric.iter().position(|p| {
                acc += p;
                u < acc
            });
            State(vec![k.unwrap_or(9)])
        })
        .collect();
    let start_tv = histogram_tv(&xs, &space, &geometric);
    for _ in 0..50 {
        xs = ordinal_birth_death_batch(&ratios, &xs, 0.5, 0.05, BalanceFunction::Sqrt, &mut rng).unwrap();
    }
    let tv = histogram_tv(&xs, &space, &geometric);
    let passed = target_gap <= 1e-10 && tv <= 0.05;
    report(
        12,
        "ordinal score target and birth/death corrector",
        passed,
        format!("interior target gap {target_gap:.1e}; geometric law TV {start_tv:.4} -> {tv:.4} after 50 steps"),
    );
    assert!(passed);
}

#[test]
fn mmd_conventions_are_reported_consistently() {
    // Sanity check for the metric used by criterion 10: biased MMD of a set
    // against itself is zero, the unbiased estimate of a set against a copy is negative.
    let space = StateSpace::binary(8).unwrap();
    let mut rng = seeded(3);
    let xs: Vec<State> = (0..50).map(|_| State((0..8).map(|_| rng.random_range(0..2)).collect())).collect();
    let biased = MmdConfig::default();
    let unbiased = MmdConfig {
        estimator: MmdEstimator::Unbiased,
        ..biased
    };
    assert_eq!(mmd_exp_hamming(&xs, &xs, &space, &biased).unwrap(), 0.0);
    assert!(mmd_exp_hamming(&xs, &xs, &space, &unbiased).unwrap() < 0.0);
}
