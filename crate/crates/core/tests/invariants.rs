//! Property tests for the structural invariants of the engine.

use ndarray::Array2;
use proptest::prelude::*;

use catdiff::ctmc::forward::product_kernel;
use catdiff::ctmc::{NoiseSchedule, RateSpec, TabularDistribution};
use catdiff::eval::{mmd_exp_hamming, tv_distance, MmdConfig, MmdEstimator};
use catdiff::models::{ExactModel, ModelMode};
use catdiff::rng::seeded;
use catdiff::samplers::{euler_rows, lb_corrector_rows, BalanceFunction};
use catdiff::space::{dequantize2d, gray_decode, gray_encode, quantize2d, ToyDataset, ToyDatasetSpec};
use catdiff::training::ForwardProcess;
use catdiff::{State, StateSpace};

fn rate_matrix(c: usize, entries: &[f64]) -> Array2<f64> {
    let mut m = Array2::zeros((c, c));
    let mut it = entries.iter();
    for i in 0..c {
        for j in (0..c).filter(|&j| j != i) {
            m[[i, j]] = *it.next().unwrap();
        }
        m[[i, i]] = -(0..c).filter(|&j| j != i).map(|j| m[[i, j]]).sum::<f64>();
    }
    m
}

fn states_strategy(dims: usize, vocab: usize, n: usize) -> impl Strategy<Value = Vec<State>> {
    prop::collection::vec(prop::collection::vec(0..vocab, dims).prop_map(State), 1..n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gray_code_round_trips_and_neighbours_differ_in_one_bit(bits in 1u32..20, raw in any::<u64>()) {
        let n = raw % ((1u64 << bits) - 1);
        let a = gray_encode(n, bits).unwrap();
        let b = gray_encode(n + 1, bits).unwrap();
        prop_assert_eq!(gray_decode(&a).unwrap(), n);
        prop_assert_eq!(a.iter().zip(&b).filter(|(x, y)| x != y).count(), 1);
    }

    #[test]
    fn state_index_round_trips(dims in 1usize..6, vocab in 2usize..6, raw in any::<usize>()) {
        let space = StateSpace::new(dims, vocab).unwrap();
        let i = raw % space.enumerable_size().unwrap();
        let s = space.state_at(i);
        prop_assert_eq!(space.index_of(&s.0), i);
        prop_assert_eq!(State::decode(&s.encode(vocab), &space).unwrap(), s);
    }

    #[test]
    fn toy_cells_survive_dequantization(bits in 2u32..12, seed in any::<u64>()) {
        let spec = ToyDatasetSpec::new(ToyDataset::Checkerboard, bits).unwrap();
        let s = spec.sample_state(&mut seeded(seed));
        prop_assert_eq!(quantize2d(dequantize2d(&s, &spec).unwrap(), &spec).unwrap(), s);
    }

    #[test]
    fn kernels_are_stochastic_and_form_a_semigroup(
        entries in prop::collection::vec(0.05f64..2.0, 6),
        s in 0.0f64..1.5,
        t in 0.0f64..1.5,
    ) {
        let rate = RateSpec::general(rate_matrix(3, &entries)).unwrap();
        let ks = rate.kernel(s).unwrap();
        let kt = rate.kernel(t).unwrap();
        let kst = rate.kernel(s + t).unwrap();
        for row in kst.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= -1e-15));
        }
        let gap = (&ks.dot(&kt) - &kst).iter().map(|v| v.abs()).fold(0.0, f64::max);
        prop_assert!(gap < 1e-11, "semigroup gap {}", gap);
        let space = StateSpace::new(2, 3).unwrap();
        let joint = product_kernel(&space, &kst).unwrap();
        for row in joint.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampler_rows_are_distributions(seed in any::<u64>(), t in 0.05f64..1.0, frac in 0.01f64..0.9) {
        let space = StateSpace::new(3, 3).unwrap();
        let mut rng = seeded(seed);
        let data = TabularDistribution::random_positive(space, 0.0, &mut rng).unwrap();
        let process = ForwardProcess::uniform(3, NoiseSchedule::constant(1.0)).unwrap();
        let model = ExactModel::new(data, process.schedule, process.rate.clone(), ModelMode::NoisyMarginal).unwrap();
        let xs: Vec<State> = space.states().unwrap().collect();
        let predictor = euler_rows(&model, &xs, t, t * frac, &process).unwrap();
        let corrector = lb_corrector_rows(&model, &xs, t, 0.05, BalanceFunction::Sqrt, &process).unwrap();
        for rows in [predictor, corrector] {
            for i in 0..xs.len() {
                for d in 0..3 {
                    let row: Vec<f64> = (0..3).map(|v| rows[[i, d, v]]).collect();
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    prop_assert!(row.iter().all(|&p| (0.0..=1.0 + 1e-12).contains(&p)));
                }
            }
        }
    }

    #[test]
    fn balance_functions_satisfy_their_identity(u in 1e-6f64..1e6) {
        for g in [BalanceFunction::Sqrt, BalanceFunction::RatioOverOnePlus] {
            let lhs = g.apply(u);
            prop_assert!((lhs - u * g.apply(1.0 / u)).abs() <= 1e-12 * lhs.max(1.0));
        }
    }

    #[test]
    fn mmd_matches_pairwise_sums(xs in states_strategy(5, 3, 12), ys in states_strategy(5, 3, 12), bw in 0.05f64..2.0) {
        let space = StateSpace::new(5, 3).unwrap();
        let k = |a: &State, b: &State| (-(a.hamming(b) as f64) / 5.0 / bw).exp();
        let mean = |a: &[State], b: &[State], skip_diag: bool| {
            let mut sum = 0.0;
            let mut count = 0.0;
            for (i, x) in a.iter().enumerate() {
                for (j, y) in b.iter().enumerate() {
                    if !(skip_diag && i == j) {
                        sum += k(x, y);
                        count += 1.0;
                    }
                }
            }
            sum / count
        };
        let biased = MmdConfig { bandwidth: bw, estimator: MmdEstimator::Biased, normalized: true, ..Default::default() };
        let direct = mean(&xs, &xs, false) + mean(&ys, &ys, false) - 2.0 * mean(&xs, &ys, false);
        let got = mmd_exp_hamming(&xs, &ys, &space, &biased).unwrap();
        prop_assert!((got - direct).abs() < 1e-12);
        prop_assert!(got >= -1e-12);
        let flipped = mmd_exp_hamming(&ys, &xs, &space, &biased).unwrap();
        prop_assert!((got - flipped).abs() < 1e-12);
        if xs.len() > 1 && ys.len() > 1 {
            let unbiased = MmdConfig { estimator: MmdEstimator::Unbiased, ..biased };
            let direct = mean(&xs, &xs, true) + mean(&ys, &ys, true) - 2.0 * mean(&xs, &ys, false);
            prop_assert!((mmd_exp_hamming(&xs, &ys, &space, &unbiased).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn total_variation_is_a_bounded_metric(a in any::<u64>(), b in any::<u64>()) {
        let space = StateSpace::new(2, 4).unwrap();
        let p = TabularDistribution::random_positive(space, 0.0, &mut seeded(a)).unwrap();
        let q = TabularDistribution::random_positive(space, 0.0, &mut seeded(b)).unwrap();
        let d = tv_distance(&p, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((d - tv_distance(&q, &p).unwrap()).abs() < 1e-15);
        prop_assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
    }
}
