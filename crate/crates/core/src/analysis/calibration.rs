//! Own-null calibration: each statistical test is fed synthetic data drawn
//! from its null and must pass at a rate of at least `1 - 2 alpha`.

use rand_distr::{Distribution, Exp, Geometric, Normal};
use serde::{Deserialize, Serialize};

use super::laws::{lln_ratio_test, qprocess_law_test, subcritical_yaglom_test, upsilon_test, w_infty_diagnostics, yaglom_test_critical, ConditionalSample};
use super::report::TestReport;
use super::stats::{exponential_cdf, ks_test, moment_z_test, power_moments};
use crate::branching::run_replicas;
use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid};
use crate::model::{DynamicsSpec, RateModel};
use crate::moments::SubcriticalLimits;
use crate::rng::StreamRng;
use crate::semigroup::{build_generator, principal_eigentriple, SpectralData};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub test: String,
    pub passes: usize,
    pub total: usize,
    pub alpha: f64,
}

impl CalibrationResult {
    /// Pass rate at least `1 - 2 alpha`.
    pub fn calibrated(&self) -> bool {
        self.passes as f64 >= (1.0 - 2.0 * self.alpha) * self.total as f64
    }
}

/// Runs `test` on `reps` independent synthetic data sets.
pub fn null_calibration<F>(name: &str, reps: u64, alpha: f64, seed: u64, test: F) -> Result<CalibrationResult>
where
    F: Fn(&mut StreamRng) -> Result<TestReport> + Sync + Send,
{
    let reports = run_replicas(reps, |r| test(&mut StreamRng::for_replica(seed, r)))?;
    Ok(CalibrationResult {
        test: name.to_string(),
        passes: reports.iter().filter(|r| r.passed()).count(),
        total: reports.len(),
        alpha,
    })
}

/// Constant-rate spectral data (`theta0 = 1`).
pub fn constant_spectral(b: f64, d: f64) -> Result<SpectralData> {
    let grid = Grid::new(-1.0, 1.0, 5, Boundary::Reflecting)?;
    let model = RateModel::constant(b, d);
    let gen = build_generator(&model, &DynamicsSpec::brownian(), &grid)?;
    principal_eigentriple(&gen, &model, &grid)
}

fn exp_sample(rng: &mut StreamRng, n: usize, mean: f64) -> Vec<f64> {
    let e = Exp::new(1.0 / mean).expect("positive rate");
    (0..n).map(|_| e.sample(rng)).collect()
}

/// Exact critical unit-rate counts at time `t`: extinct with probability
/// `t/(1+t)`, else geometric with ratio `t/(1+t)`.
fn critical_counts(rng: &mut StreamRng, reps: usize, t: f64) -> Vec<u64> {
    let p = 1.0 / (1.0 + t);
    let g = Geometric::new(p).expect("valid probability");
    (0..reps)
        .map(|_| if rng.uniform() < p { 1 + g.sample(rng) } else { 0 })
        .collect()
}

/// Own-null calibration of every statistical test in the module.
pub fn calibration_suite(reps: u64, alpha: f64, seed: u64) -> Result<Vec<CalibrationResult>> {
    let critical = constant_spectral(1.0, 1.0)?;
    let sub = constant_spectral(0.5, 1.0)?;
    let sup = constant_spectral(2.0, 1.0)?;
    let ones = vec![1.0; critical.grid.len()];
    let f_lln: Vec<f64> = (0..critical.grid.len()).map(|i| i as f64 / 4.0).collect();
    let node_weights: Vec<f64> = critical.mu0.iter().map(|m| m / critical.a).collect();
    // Limit of N_t given survival for b = 0.5, d = 1: geometric with ratio b/d.
    let sub_limits = SubcriticalLimits {
        v_minus: vec![2.0, 6.0, 26.0, 150.0],
        kappa: Some(1.0),
        kappa_floor: None,
        beta: Vec::new(),
        tail_fraction: Vec::new(),
        horizon: f64::INFINITY,
    };
    let mut out = Vec::new();
    out.push(null_calibration("ks_test", reps, alpha, seed, |rng| {
        let x = exp_sample(rng, 500, 1.0);
        let ks = ks_test(&x, exponential_cdf)?;
        Ok(TestReport::new("ks_test", "KS D", ks.statistic, alpha, 500, ks.p_value >= alpha))
    })?);
    out.push(null_calibration("moment_z_test", reps, alpha, seed + 1, |rng| {
        let x = exp_sample(rng, 2000, 1.0);
        moment_z_test("moment_z_test", &power_moments(&x, 3), &[1.0, 2.0, 6.0], 4.0, x.len())
    })?);
    out.push(null_calibration("yaglom_test_critical", reps, alpha, seed + 2, |rng| {
        let counts = critical_counts(rng, 31_000, 30.0);
        yaglom_test_critical(&ConditionalSample::from_counts(30.0, counts), &critical, alpha)
    })?);
    out.push(null_calibration("upsilon_test", reps, alpha, seed + 3, |rng| {
        let counts = critical_counts(rng, 31_000, 30.0);
        upsilon_test(&ConditionalSample::from_counts(30.0, counts), &critical, &ones, alpha)
    })?);
    out.push(null_calibration("lln_ratio_test", reps, alpha, seed + 4, |rng| {
        let samples = [10.0, 30.0]
            .iter()
            .map(|&t| {
                let counts = critical_counts(rng, 20_000, t);
                let values = counts
                    .iter()
                    .map(|&n| (0..n).map(|_| f_lln[pick(rng, &node_weights)]).sum())
                    .collect();
                ConditionalSample { t, values, counts }
            })
            .collect::<Vec<_>>();
        lln_ratio_test(&samples, &critical, &f_lln)
    })?);
    out.push(null_calibration("subcritical_yaglom_test", reps, alpha, seed + 5, |rng| {
        let g = Geometric::new(0.5).expect("valid probability");
        let samples: Vec<ConditionalSample> = (0..2)
            .map(|_| ConditionalSample::from_counts(10.0, (0..2000).map(|_| 1 + g.sample(rng)).collect()))
            .collect();
        subcritical_yaglom_test(&samples, &sub_limits, &sub)
    })?);
    out.push(null_calibration("w_infty_diagnostics", reps, alpha, seed + 6, |rng| {
        let e = Exp::new(0.5).expect("positive rate");
        let w: Vec<f64> = (0..4000).map(|_| if rng.uniform() < 0.5 { 0.0 } else { e.sample(rng) }).collect();
        w_infty_diagnostics(&w, 20.0, &sup, 1.0, 0.5, &[1.0, 4.0, 24.0])
    })?);
    out.push(null_calibration("qprocess_law_test", reps, alpha, seed + 7, |rng| {
        let normal = Normal::new(1.0, 1.0).map_err(|e| Error::numerical(e.to_string()))?;
        let direct: Vec<(f64, Vec<f64>)> = [10.0, 20.0]
            .iter()
            .map(|&t| (t, (0..1000).map(|_| normal.sample(rng)).collect()))
            .collect();
        let rw: Vec<f64> = (0..4000).map(|_| normal.sample(rng)).collect();
        let weights = exp_sample(rng, 4000, 1.0);
        qprocess_law_test(&direct, &rw, &weights)
    })?);
    Ok(out)
}

fn pick(rng: &mut StreamRng, weights: &[f64]) -> usize {
    let mut u = rng.uniform();
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}
