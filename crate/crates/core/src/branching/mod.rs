//! Particle simulation of the branching system and Monte Carlo estimators.

mod counts;
mod estimators;
mod particles;

use serde::{Deserialize, Serialize};

pub use counts::{birth_death_transition, simulate_counts, BirthDeathLaw};
pub use estimators::{
    count_table, cutoff_diagnostics, jackknife_ratio, jackknife_se, martingale_means, mc_moments, mc_survival, qprocess_weight,
    run_replicas, sample_table, stabilization_spread, CutoffRow, Estimate, MomentRow, QWeight, SampleTable,
    SurvivalRow,
};
pub use particles::{
    simulate, simulate_coupled_yule, Event, HistoricalForest, Lineage, SimConfig, Snapshot, Trajectory,
    MAX_EVENT_PROBABILITY,
};

/// Truncation level `m` of the death rate, `d^(m)(x) = d(clamp(x, -m, m))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub m: f64,
}

impl CutoffSpec {
    pub fn new(m: f64) -> Self {
        Self { m }
    }

    /// No truncation (`m = inf`).
    pub fn none() -> Self {
        Self { m: f64::INFINITY }
    }

    pub fn truncated_death(&self, model: &crate::model::RateModel, x: f64) -> f64 {
        model.death(x.clamp(-self.m, self.m))
    }
}

/// `n! e^{n b* t}`, the moment ceiling of the dominating Yule process;
/// `+inf` when it overflows.
pub fn yule_moment_bound(n: u32, t: f64, b_star: f64) -> f64 {
    let factorial: f64 = (1..=n).map(f64::from).product();
    let v = factorial * (f64::from(n) * b_star * t).exp();
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}
