//! Regime-specific verification: the critical `(r, Psi)` system, limit-law
//! tests, supercritical `W` diagnostics and the Q-process comparison.

mod calibration;
mod critical;
mod laws;
mod report;
mod stats;

pub use calibration::{calibration_suite, constant_spectral, null_calibration, CalibrationResult};
pub use critical::{critical_ode_residual, critical_survival_check, CriticalDecomposition};
pub use laws::{
    atom_threshold, lln_ratio_test, qprocess_law_test, subcritical_yaglom_test, upsilon_test, w_infty_diagnostics,
    yaglom_test_critical, ConditionalSample, MIN_CONDITIONAL, MIN_SURVIVORS,
};
pub use report::{Status, TestReport};
pub use stats::{
    exponential_cdf, kolmogorov_q, ks_slack, ks_slack_constant, ks_statistic, ks_test, ks_test_with_slack, moment_z_test,
    power_moments, upsilon_h, upsilon_law, KsResult, MIN_KS_SAMPLE,
};
