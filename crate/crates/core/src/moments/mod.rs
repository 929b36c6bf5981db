//! Moment, survival and Laplace-functional equations and the regime limits.

mod calibrate;
mod field;
mod h;
mod laplace;
mod limits;
mod solve;

pub use calibrate::{calibrate_criticality, Calibration};
pub use field::{normalization, simpson_uniform, FieldInvariants, MomentField};
pub use h::{q_resolvent, solve_h, solve_h_with, HSettings, HSolution};
pub use laplace::{laplace_derivatives, laplace_functional, laplace_radius, LaplaceField};
pub use limits::{
    carleman_partial_sums, critical_extrapolation, critical_limits, critical_limits_f, extrapolate_inverse_time,
    hamburger_bound, hamburger_check, hamburger_recursion, integrate_with_tail, subcritical_betas, subcritical_limits,
    supercritical_betas, supercritical_limits, supercritical_quadrature, CriticalLimits, HamburgerBound,
    HamburgerCheck, SubcriticalLimits, SupercriticalLimits, TAIL_FRACTION_MAX,
};
pub use solve::{
    duhamel_residual, picard_survival, picard_window, solve_moments, solve_survival, solve_survival_from,
    with_survival, DuhamelResidual, SolveSettings, YULE_GUARD,
};
