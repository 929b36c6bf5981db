use anyhow::{bail, Result};
use clap::ValueEnum;
use fkbranch::model::{Curve, DynamicsSpec, RateModel};
use fkbranch::moments::{calibrate_criticality, SolveSettings};
use fkbranch::semigroup::{
    build_generator, principal_eigentriple_with, GeneratorMatrix, Regime, SpectralData, SpectralOptions,
};
use fkbranch::Grid;
use serde::Serialize;

use crate::config::{Engine, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeFlag {
    Auto,
    Critical,
    Sub,
    Super,
}

impl RegimeFlag {
    fn expected(self) -> Option<Regime> {
        match self {
            RegimeFlag::Auto => None,
            RegimeFlag::Critical => Some(Regime::Critical),
            RegimeFlag::Sub => Some(Regime::Subcritical),
            RegimeFlag::Super => Some(Regime::Supercritical),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationSummary {
    /// Constant added to `d`.
    pub shift: f64,
    pub critical_shift: f64,
    pub target_lambda0: f64,
    pub evaluations: usize,
}

/// Resolved model, generator and principal eigentriple shared by the commands.
pub struct Setup {
    pub model: RateModel,
    pub dynamics: DynamicsSpec,
    pub grid: Grid,
    pub gen: GeneratorMatrix,
    pub spectral: SpectralData,
    pub calibration: Option<CalibrationSummary>,
    pub f_curve: Curve,
    pub f: Vec<f64>,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig, flag: RegimeFlag) -> Result<Self> {
        let grid = cfg.grid;
        let dynamics = cfg.dynamics.clone();
        let mut model = cfg.model.clone();
        let mut calibration = None;
        if let Some(c) = cfg.calibrate {
            let base = model.clone();
            let build = |shift: f64| {
                let mut m = base.clone();
                m.d = base.d.shifted(shift);
                build_generator(&m, &dynamics, &grid)
            };
            let cal = calibrate_criticality(build, c.bracket, None, c.tol)?;
            let shift = cal.theta + c.lambda0;
            model.d = base.d.shifted(shift);
            calibration = Some(CalibrationSummary {
                shift,
                critical_shift: cal.theta,
                target_lambda0: c.lambda0,
                evaluations: cal.history.len(),
            });
        }
        let gen = build_generator(&model, &dynamics, &grid)?;
        let options = SpectralOptions { fit_h: false, dt: None };
        let spectral = principal_eigentriple_with(&gen, &model, &grid, &options)?;
        if let Some(expected) = flag.expected() {
            let found = spectral.regime();
            if found != expected {
                bail!(
                    "regime mismatch: --regime asks for {} but lambda0 = {:.6e} with eps_crit = {:.3e} classifies `{}` as {}",
                    expected.name(),
                    spectral.lambda0,
                    spectral.eps_crit(),
                    cfg.name,
                    found.name()
                );
            }
        }
        let f_curve = cfg.test_function();
        let f = grid.sample(|x| f_curve.eval(x));
        Ok(Self {
            model,
            dynamics,
            grid,
            gen,
            spectral,
            calibration,
            f_curve,
            f,
        })
    }

    pub fn regime(&self) -> Regime {
        self.spectral.regime()
    }

    pub fn solve_settings(&self, cfg: &ExperimentConfig) -> SolveSettings {
        SolveSettings {
            dt: cfg.solver.dt,
            record_dt: cfg.solver.record_dt,
        }
    }

    /// `(b, d)` when both rates are constant.
    pub fn constant_rates(&self) -> Option<(f64, f64)> {
        Some((self.model.b.as_constant()?, self.model.d.as_constant()?))
    }

    /// Whether the MC runs on the exact count engine.
    pub fn use_counts(&self, cfg: &ExperimentConfig) -> Result<bool> {
        let eligible = self.constant_rates().is_some() && self.f_curve.as_constant() == Some(1.0);
        match cfg.mc.engine {
            Engine::Auto => Ok(eligible),
            Engine::Particles => Ok(false),
            Engine::Counts if eligible => Ok(true),
            Engine::Counts => bail!("the count engine needs constant rates and f = 1"),
        }
    }
}
