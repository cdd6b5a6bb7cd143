//! The forward continuous-time Markov chain and its exact reversal.
//!
//! Every dimension is corrupted independently by `Q_t = beta(t) Q`; the
//! per-dimension kernel after cumulative rate `tau` is `exp(tau Q)`.

pub mod forward;
pub mod rate;
pub mod reverse;
pub mod schedule;
pub mod tabular;

pub use forward::{
    apply_kernel_dims, exact_marginal, forward_sample, gillespie_forward, propagate, JumpEvent, Trajectory,
};
pub use rate::{expm, uniform_transition_row, RateSpec};
pub use reverse::{reverse_rate, reverse_rate_oriented, reverse_transition_exact, RatioOrientation, ReverseTable};
pub use schedule::{NoiseSchedule, ScheduleKind};
pub use tabular::{TableSampler, TabularDistribution};

/// Convenience for `sched.cumulative(s, t)`.
pub fn cumulative_rate(sched: &NoiseSchedule, s: f64, t: f64) -> crate::Result<f64> {
    sched.cumulative(s, t)
}
