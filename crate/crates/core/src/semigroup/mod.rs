//! Grid generators, Feynman–Kac propagators and the principal eigentriple.

mod generator;
mod propagator;
mod spectral;
pub mod tridiag;

pub use generator::{
    build_generator, build_generator_with, build_q_generator, GeneratorMatrix, GeneratorOptions, MotionBlock,
};
pub use propagator::{evolve_with, step_count, Propagator};
pub use spectral::{
    constants_ab, fit_gap_constant, girsanov_crosscheck, hp4_edge_decay, principal_eigentriple,
    principal_eigentriple_with, principal_eigenvalue, EdgeDecayReport, GirsanovReport, Regime, SpectralData, SpectralOptions,
    CRIT_FRACTION,
};

use crate::error::Result;
use crate::grid::Grid;
use crate::model::{DynamicsSpec, RateModel};

/// `P_t g` with the generator's default Crank–Nicolson step.
pub fn evolve_p(g: &[f64], t: f64, gen: &GeneratorMatrix) -> Result<Vec<f64>> {
    evolve_with(gen, g, t, gen.default_step(), false)
}

/// `Q_t g`, the semigroup with killing potential `-(b + d)`.
pub fn evolve_q(g: &[f64], t: f64, model: &RateModel, dynamics: &DynamicsSpec, grid: &Grid) -> Result<Vec<f64>> {
    let q = build_q_generator(model, dynamics, grid)?;
    evolve_with(&q, g, t, q.default_step(), false)
}

/// [`evolve_q`] with an explicit maximal step.
pub fn evolve_q_with(
    g: &[f64],
    t: f64,
    model: &RateModel,
    dynamics: &DynamicsSpec,
    grid: &Grid,
    h_max: f64,
) -> Result<Vec<f64>> {
    let q = build_q_generator(model, dynamics, grid)?;
    evolve_with(&q, g, t, h_max.min(q.default_step()), false)
}
