use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::counts::simulate_counts;
use super::particles::{simulate, SimConfig, Trajectory};
use super::yule_moment_bound;
use crate::error::{Error, Result};
use crate::model::{DynamicsSpec, RateModel};
use crate::moments::HSolution;
use crate::semigroup::{Regime, SpectralData};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// `(value - target) / se`; 0 when both the error and `se` vanish.
    pub fn z(&self, target: f64) -> f64 {
        let d = self.value - target;
        if d == 0.0 {
            0.0
        } else {
            d / self.se
        }
    }

    pub fn within(&self, target: f64, n_se: f64) -> bool {
        (self.value - target).abs() <= n_se * self.se
    }
}

/// Runs `f(0..reps)` on the rayon pool. The output is in replica order
/// whatever the scheduling.
pub fn run_replicas<T, F>(reps: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..reps).into_par_iter().map(f).collect()
}

/// Per-replica observations at each record time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleTable {
    pub times: Vec<f64>,
    pub seed: u64,
    pub dt: Option<f64>,
    /// `counts[time][replica] = N_t`.
    pub counts: Vec<Vec<u64>>,
    /// `functionals[k][time][replica] = <Z_t, f_k>`.
    pub functionals: Vec<Vec<Vec<f64>>>,
    /// Running `max |trait|` (empty for the count engine).
    pub max_abs: Vec<Vec<f64>>,
    /// Largest `|f_k|` seen on any particle, per functional.
    pub f_sup: Vec<f64>,
}

impl SampleTable {
    pub fn reps(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|s| (s - t).abs() < 1e-9)
            .ok_or_else(|| Error::config(format!("time {t} was not recorded")))
    }

    pub fn values(&self, k: usize, time_index: usize) -> &[f64] {
        &self.functionals[k][time_index]
    }
}

/// Simulates `reps` replicas and keeps only counts, functionals and running
/// maxima at the record times.
pub fn sample_table(
    config: &SimConfig,
    model: &RateModel,
    dynamics: &DynamicsSpec,
    functionals: &[&(dyn Fn(f64) -> f64 + Sync)],
    reps: u64,
    seed: u64,
) -> Result<SampleTable> {
    let rows = run_replicas(reps, |r| {
        let traj = simulate(config, model, dynamics, seed, r)?;
        Ok(summarize(&traj, functionals))
    })?;
    let nt = config.record_times.len();
    let nf = functionals.len();
    let mut table = SampleTable {
        times: config.record_times.clone(),
        seed,
        dt: Some(config.dt),
        counts: vec![Vec::with_capacity(rows.len()); nt],
        functionals: vec![vec![Vec::with_capacity(rows.len()); nt]; nf],
        max_abs: vec![Vec::with_capacity(rows.len()); nt],
        f_sup: vec![0.0; nf],
    };
    for row in rows {
        for (j, (n, vals, m)) in row.0.into_iter().enumerate() {
            table.counts[j].push(n);
            table.max_abs[j].push(m);
            for (k, v) in vals.into_iter().enumerate() {
                table.functionals[k][j].push(v);
            }
        }
        for (s, v) in table.f_sup.iter_mut().zip(row.1) {
            *s = s.max(v);
        }
    }
    Ok(table)
}

type Summary = (Vec<(u64, Vec<f64>, f64)>, Vec<f64>);

fn summarize(traj: &Trajectory, functionals: &[&(dyn Fn(f64) -> f64 + Sync)]) -> Summary {
    let mut sup = vec![0.0f64; functionals.len()];
    let rows = traj
        .snapshots
        .iter()
        .map(|s| {
            let vals = functionals
                .iter()
                .zip(sup.iter_mut())
                .map(|(f, m)| {
                    s.traits
                        .iter()
                        .map(|&x| {
                            let v = f(x);
                            *m = m.max(v.abs());
                            v
                        })
                        .sum()
                })
                .collect();
            (s.count() as u64, vals, s.max_abs_trait)
        })
        .collect();
    (rows, sup)
}

/// Same table from the exact constant-rate count engine; the single
/// functional is `N_t`.
pub fn count_table(b: f64, d: f64, times: &[f64], reps: u64, seed: u64) -> Result<SampleTable> {
    let rows = run_replicas(reps, |r| simulate_counts(b, d, times, seed, r))?;
    let counts: Vec<Vec<u64>> = (0..times.len()).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let values = counts.iter().map(|c| c.iter().map(|&n| n as f64).collect()).collect();
    Ok(SampleTable {
        times: times.to_vec(),
        seed,
        dt: None,
        counts,
        functionals: vec![values],
        max_abs: Vec::new(),
        f_sup: vec![1.0],
    })
}

/// Standard error of a sample mean by the delete-one jackknife.
pub fn jackknife_se(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let total: f64 = x.iter().sum();
    let loo: Vec<f64> = x.iter().map(|v| (total - v) / (n - 1.0)).collect();
    let mean = loo.iter().sum::<f64>() / n;
    ((n - 1.0) / n * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt()
}

/// Jackknife estimate of `sum num / sum den`.
pub fn jackknife_ratio(num: &[f64], den: &[f64]) -> Estimate {
    let n = num.len() as f64;
    let (sn, sd): (f64, f64) = (num.iter().sum(), den.iter().sum());
    let loo: Vec<f64> = num.iter().zip(den).map(|(a, b)| (sn - a) / (sd - b)).collect();
    let mean = loo.iter().sum::<f64>() / n;
    Estimate {
        value: sn / sd,
        se: ((n - 1.0) / n * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentRow {
    pub time: f64,
    pub order: u32,
    pub estimate: Estimate,
    /// `|f|^n n! e^{n b* t}`.
    pub ceiling: f64,
    /// Estimate not above the ceiling by more than 3 standard errors
    /// (the Yule process itself attains it for `n = 1`).
    pub within_ceiling: bool,
}

/// Plug-in estimates of `E <Z_t, f>^n` for `n = 1..=n_max` at every record time.
pub fn mc_moments(table: &SampleTable, functional: usize, n_max: u32, b_star: f64) -> Result<Vec<MomentRow>> {
    if table.reps() < 2 {
        return Err(Error::config("need at least two replicas"));
    }
    let f_sup = table.f_sup[functional];
    let mut rows = Vec::new();
    for (j, &t) in table.times.iter().enumerate() {
        let x = table.values(functional, j);
        for n in 1..=n_max {
            let p: Vec<f64> = x.iter().map(|v| v.powi(n as i32)).collect();
            let value = p.iter().sum::<f64>() / p.len() as f64;
            let se = jackknife_se(&p);
            let ceiling = f_sup.powi(n as i32) * yule_moment_bound(n, t, b_star);
            rows.push(MomentRow {
                time: t,
                order: n,
                estimate: Estimate { value, se },
                ceiling,
                within_ceiling: value.abs() - 3.0 * se <= ceiling * (1.0 + 1e-12),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurvivalRow {
    pub time: f64,
    pub estimate: Estimate,
    pub survivors: usize,
}

/// `P(N_t > 0)` with binomial standard errors.
pub fn mc_survival(table: &SampleTable) -> Result<Vec<SurvivalRow>> {
    let reps = table.reps();
    if reps < 2 {
        return Err(Error::config("need at least two replicas"));
    }
    Ok(table
        .times
        .iter()
        .zip(&table.counts)
        .map(|(&time, c)| {
            let survivors = c.iter().filter(|&&n| n > 0).count();
            let p = survivors as f64 / reps as f64;
            SurvivalRow {
                time,
                estimate: Estimate {
                    value: p,
                    se: (p * (1.0 - p) / reps as f64).sqrt(),
                },
                survivors,
            }
        })
        .collect())
}

/// Radon-Nikodym weight of the Q-process at time `s`.
#[derive(Debug, Clone, Copy)]
pub enum QWeight<'a> {
    /// `e^{lambda0 s} <Z_s, theta0> / theta0(x)` (critical and subcritical).
    Eigen(&'a SpectralData),
    /// `(1 - exp <Z_s, log(1 - h)>) / h(x)` (supercritical).
    Survival(&'a HSolution),
}

impl<'a> QWeight<'a> {
    /// Regime-appropriate weight; `h` is required when supercritical.
    pub fn for_regime(spectral: &'a SpectralData, h: Option<&'a HSolution>) -> Result<Self> {
        match spectral.regime() {
            Regime::Supercritical => h
                .map(QWeight::Survival)
                .ok_or_else(|| Error::config("the supercritical Q-process weight needs h")),
            _ => Ok(QWeight::Eigen(spectral)),
        }
    }

    pub fn weight(&self, x0: f64, s: f64, traits: &[f64]) -> Result<f64> {
        match self {
            QWeight::Eigen(sp) => {
                let t0 = sp.theta_at(x0);
                if t0 <= 0.0 {
                    return Err(Error::Domain(format!("theta0({x0}) = {t0} is not positive")));
                }
                let total: f64 = traits.iter().map(|&x| sp.theta_at(x)).sum();
                Ok((sp.lambda0 * s).exp() * total / t0)
            }
            QWeight::Survival(h) => {
                let hx = h.at(x0);
                if hx <= h.tol {
                    return Err(Error::Domain(format!("h({x0}) = {hx}: supercritical weight undefined")));
                }
                let log_sum: f64 = traits.iter().map(|&x| (1.0 - h.at(x).min(1.0)).ln()).sum();
                Ok(-log_sum.exp_m1() / hx)
            }
        }
    }
}

/// Q-process weight of one trajectory at a recorded time `s`.
pub fn qprocess_weight(traj: &Trajectory, s: f64, weight: &QWeight) -> Result<f64> {
    let snap = traj
        .at(s)
        .ok_or_else(|| Error::config(format!("trajectory has no snapshot at s = {s}")))?;
    weight.weight(traj.x0, s, &snap.traits)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CutoffRow {
    pub time: f64,
    pub m: f64,
    /// `P(T_m <= t)`.
    pub estimate: Estimate,
}

/// `P(T_m <= t)` for every record time and every `m`, from the running maxima.
pub fn cutoff_diagnostics(table: &SampleTable, m_grid: &[f64]) -> Vec<CutoffRow> {
    let mut rows = Vec::new();
    for (j, &time) in table.times.iter().enumerate() {
        let Some(maxima) = table.max_abs.get(j) else { continue };
        let n = maxima.len() as f64;
        for &m in m_grid {
            let p = maxima.iter().filter(|&&v| v > m).count() as f64 / n;
            rows.push(CutoffRow {
                time,
                m,
                estimate: Estimate {
                    value: p,
                    se: (p * (1.0 - p) / n).sqrt(),
                },
            });
        }
    }
    rows
}

/// MC mean of `e^{lambda0 t} <Z_t, f_k>` at every record time.
pub fn martingale_means(table: &SampleTable, functional: usize, lambda0: f64) -> Vec<Estimate> {
    table
        .times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let s = (lambda0 * t).exp();
            let w: Vec<f64> = table.values(functional, j).iter().map(|v| s * v).collect();
            Estimate {
                value: w.iter().sum::<f64>() / w.len() as f64,
                se: jackknife_se(&w),
            }
        })
        .collect()
}

/// Mean over trajectories alive at `2T` of
/// `sup - inf` of `e^{lambda0 t} <Z_t, f_k>` over the record times in `[T, 2T]`.
pub fn stabilization_spread(table: &SampleTable, functional: usize, lambda0: f64, t: f64) -> Result<Estimate> {
    let idx: Vec<usize> = (0..table.times.len())
        .filter(|&j| table.times[j] >= t - 1e-9 && table.times[j] <= 2.0 * t + 1e-9)
        .collect();
    let last = *idx.last().ok_or_else(|| Error::config("no record times in the window"))?;
    let spreads: Vec<f64> = (0..table.reps())
        .filter(|&r| table.counts[last][r] > 0)
        .map(|r| {
            let w = idx.iter().map(|&j| (lambda0 * table.times[j]).exp() * table.functionals[functional][j][r]);
            let (lo, hi) = w.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            hi - lo
        })
        .collect();
    if spreads.len() < 2 {
        return Err(Error::config("fewer than two surviving trajectories"));
    }
    Ok(Estimate {
        value: spreads.iter().sum::<f64>() / spreads.len() as f64,
        se: jackknife_se(&spreads),
    })
}
