use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fkbranch::model::{Curve, DynamicsSpec, RateModel};
use fkbranch::Grid;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub name: String,
    pub model: RateModel,
    pub dynamics: DynamicsSpec,
    pub grid: Grid,
    /// Shift `d` by a constant so that `lambda0` hits a target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate: Option<CalibrateBlock>,
    /// Test function `f` of the moment and MC functionals (default 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_function: Option<Curve>,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub mc: McBlock,
    #[serde(default)]
    pub verify: VerifyBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateBlock {
    /// Bracket for the shift `c` in `d + c` that makes the model critical.
    pub bracket: (f64, f64),
    #[serde(default = "calibrate_tol")]
    pub tol: f64,
    /// Target `lambda0`, added to the critical shift.
    #[serde(default)]
    pub lambda0: f64,
}

fn calibrate_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverBlock {
    /// Crank–Nicolson step; the generator default when absent.
    pub dt: Option<f64>,
    pub record_dt: f64,
    pub t_end: f64,
    pub max_order: usize,
    pub h_tol: f64,
    /// Times written to the field CSVs (5 evenly spaced when empty).
    pub report_times: Vec<f64>,
    /// Survival horizon of the critical asymptotics, in units of `1/B`.
    pub asymptotic_horizon: f64,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            dt: None,
            record_dt: 0.05,
            t_end: 10.0,
            max_order: 3,
            h_tol: 1e-8,
            report_times: Vec::new(),
            asymptotic_horizon: 200.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Counts when the rates are constant and `f = 1`, particles otherwise.
    Auto,
    Particles,
    Counts,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McBlock {
    pub reps: u64,
    pub dt: f64,
    pub seed: u64,
    pub times: Vec<f64>,
    pub x0: f64,
    pub cutoff_m: Option<f64>,
    pub engine: Engine,
    /// Replicas whose snapshots go to `trajectories.csv` (particle engine).
    pub trajectories: u64,
}

impl Default for McBlock {
    fn default() -> Self {
        Self {
            reps: 10_000,
            dt: 0.01,
            seed: 1,
            times: vec![1.0, 2.0, 5.0],
            x0: 0.0,
            cutoff_m: None,
            engine: Engine::Auto,
            trajectories: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyBlock {
    pub alpha: f64,
    /// Standard errors allowed by the z-type checks.
    pub n_se: f64,
    /// Relative tolerance of the critical survival asymptotics.
    pub survival_tolerance: f64,
    /// Orders compared between MC and the moment equations.
    pub mc_orders: u32,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            n_se: 4.0,
            survival_tolerance: 0.02,
            mc_orders: 2,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("schema error at `{path}`: {}", e.into_inner())
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!("schema error at `schema_version`: expected {SCHEMA_VERSION}, got {}", self.schema_version);
        }
        if !(self.solver.t_end > 0.0 && self.solver.record_dt > 0.0) {
            bail!("schema error at `solver`: t_end and record_dt must be positive");
        }
        if self.solver.max_order == 0 {
            bail!("schema error at `solver.max_order`: must be at least 1");
        }
        if self.mc.reps < 2 {
            bail!("schema error at `mc.reps`: need at least 2 replicas");
        }
        if self.mc.times.is_empty() || self.mc.times.windows(2).any(|w| w[0] >= w[1]) || self.mc.times[0] <= 0.0 {
            bail!("schema error at `mc.times`: need positive, strictly increasing times");
        }
        if !(self.verify.alpha > 0.0 && self.verify.alpha < 1.0) {
            bail!("schema error at `verify.alpha`: must lie in (0, 1)");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (object keys sorted).
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn test_function(&self) -> Curve {
        self.test_function.clone().unwrap_or_else(|| Curve::constant(1.0))
    }

    pub fn report_times(&self) -> Vec<f64> {
        if self.solver.report_times.is_empty() {
            (1..=5).map(|k| self.solver.t_end * k as f64 / 5.0).collect()
        } else {
            self.solver.report_times.clone()
        }
    }
}
