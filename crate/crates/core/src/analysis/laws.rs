use serde::{Deserialize, Serialize};

use super::report::TestReport;
use super::stats::{exponential_cdf, ks_slack, ks_test_with_slack, power_moments, upsilon_law};
use crate::branching::{Estimate, SampleTable};
use crate::error::{Error, Result};
use crate::moments::SubcriticalLimits;
use crate::semigroup::{Regime, SpectralData};

/// Survivors needed by the critical limit-law tests.
pub const MIN_SURVIVORS: usize = 500;
/// Survivors needed by the subcritical, W and Q-process comparisons.
pub const MIN_CONDITIONAL: usize = 100;

/// `<Z_t, f>` and `N_t` for every replica at one time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionalSample {
    pub t: f64,
    pub values: Vec<f64>,
    pub counts: Vec<u64>,
}

impl ConditionalSample {
    pub fn from_table(table: &SampleTable, functional: usize, t: f64) -> Result<Self> {
        let j = table.time_index(t)?;
        Ok(Self {
            t: table.times[j],
            values: table.values(functional, j).to_vec(),
            counts: table.counts[j].clone(),
        })
    }

    /// `f = 1`: the values are the counts.
    pub fn from_counts(t: f64, counts: Vec<u64>) -> Self {
        Self {
            t,
            values: counts.iter().map(|&n| n as f64).collect(),
            counts,
        }
    }

    pub fn reps(&self) -> usize {
        self.counts.len()
    }

    pub fn survivors(&self) -> usize {
        self.counts.iter().filter(|&&n| n > 0).count()
    }

    fn surviving(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values
            .iter()
            .zip(&self.counts)
            .filter(|(_, &n)| n > 0)
            .map(|(&v, &n)| (v, n as f64))
    }
}

fn factorials(n: usize) -> Vec<f64> {
    (1..=n).scan(1.0, |acc, k| {
        *acc *= k as f64;
        Some(*acc)
    })
    .collect()
}

fn max_abs_z(est: &[Estimate], targets: &[f64]) -> f64 {
    est.iter().zip(targets).map(|(e, &t)| e.z(t).abs()).fold(0.0, f64::max)
}

/// KS of `N_t/((t+1) A B)` given survival against Exp(1), with slack `c/t`,
/// plus the first three conditional moments against `n!` at 4 SE.
pub fn yaglom_test_critical(sample: &ConditionalSample, spectral: &SpectralData, alpha: f64) -> Result<TestReport> {
    const NAME: &str = "yaglom_critical";
    spectral.require(Regime::Critical)?;
    let survivors = sample.survivors();
    if survivors < MIN_SURVIVORS {
        return Ok(TestReport::inconclusive(NAME, survivors, format!("{survivors} survivors, need {MIN_SURVIVORS}")));
    }
    let scale = (sample.t + 1.0) * spectral.a * spectral.b;
    let x: Vec<f64> = sample.surviving().map(|(_, n)| n / scale).collect();
    let ks = ks_test_with_slack(&x, exponential_cdf, ks_slack(sample.t))?;
    let moments = power_moments(&x, 3);
    let z = max_abs_z(&moments, &factorials(3));
    Ok(TestReport::new(NAME, "KS D", ks.statistic, ks.slack, survivors, ks.p_value >= alpha)
        .require(z <= 4.0)
        .with_p_value(ks.p_value)
        .with_detail("slack", ks.slack)
        .with_detail("mean", moments[0].value)
        .with_detail("second_moment", moments[1].value)
        .with_detail("third_moment", moments[2].value)
        .with_detail("max_moment_z", z))
}

/// `<Z_t, f>/N_t` given survival: the mean is within 4 SE of `nu(f)` at the
/// last time and the spread does not grow from the first to the last time.
pub fn lln_ratio_test(samples: &[ConditionalSample], spectral: &SpectralData, f: &[f64]) -> Result<TestReport> {
    const NAME: &str = "lln_ratio";
    spectral.require(Regime::Critical)?;
    let nu = spectral.nu(f);
    let mut sds = Vec::new();
    let mut last = None;
    for s in samples {
        let r: Vec<f64> = s.surviving().map(|(v, n)| v / n).collect();
        if r.len() < MIN_SURVIVORS {
            return Ok(TestReport::inconclusive(NAME, r.len(), format!("t = {}: {} survivors", s.t, r.len())));
        }
        let m = power_moments(&r, 1)[0];
        let n = r.len() as f64;
        let sd = m.se * n.sqrt();
        sds.push(sd);
        last = Some((m, r.len()));
    }
    let (m, n) = last.ok_or_else(|| Error::config("no samples"))?;
    let z = m.z(nu);
    let shrinks = sds.last().unwrap() <= sds.first().unwrap();
    Ok(TestReport::new(NAME, "|z| of the ratio mean", z.abs(), 4.0, n, z.abs() <= 4.0)
        .require(shrinks)
        .with_detail("nu_f", nu)
        .with_detail("mean", m.value)
        .with_detail("sd_first", sds[0])
        .with_detail("sd_last", *sds.last().unwrap()))
}

/// KS of the normalized ratio `Upsilon_t` given survival against
/// `1 - e^{-h(y)}`, with slack `c/t`.
pub fn upsilon_test(sample: &ConditionalSample, spectral: &SpectralData, f: &[f64], alpha: f64) -> Result<TestReport> {
    const NAME: &str = "upsilon_law";
    spectral.require(Regime::Critical)?;
    let nu = spectral.nu(f);
    let f_sup = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if nu.abs() <= 1e-12 * f_sup.max(f64::MIN_POSITIVE) {
        return Err(Error::Domain("nu(f) = 0: the normalized ratio is undefined".into()));
    }
    let survivors = sample.survivors();
    if survivors < MIN_SURVIVORS {
        return Ok(TestReport::inconclusive(NAME, survivors, format!("{survivors} survivors, need {MIN_SURVIVORS}")));
    }
    let ab = spectral.a * spectral.b;
    let tp = sample.t + 1.0;
    let y: Vec<f64> = sample
        .surviving()
        .map(|(v, n)| (v / tp - nu * ab / 2.0) / (nu * ab.sqrt() * (n / tp).sqrt()))
        .collect();
    let ks = ks_test_with_slack(&y, upsilon_law, ks_slack(sample.t))?;
    Ok(TestReport::new(NAME, "KS D", ks.statistic, ks.slack, survivors, ks.p_value >= alpha)
        .with_p_value(ks.p_value)
        .with_detail("nu_f", nu))
}

/// Conditional moments of `<Z_t, f>` given survival against `V_n^-/K^-`
/// (`n <= 4`) at 4 SE, for every sample (one per starting trait).
pub fn subcritical_yaglom_test(samples: &[ConditionalSample], limits: &SubcriticalLimits, spectral: &SpectralData) -> Result<TestReport> {
    const NAME: &str = "yaglom_subcritical";
    spectral.require(Regime::Subcritical)?;
    let kappa = limits
        .kappa
        .ok_or_else(|| Error::config("limits carry no survival constant"))?;
    let n_max = limits.v_minus.len().min(4);
    if n_max == 0 || samples.is_empty() {
        return Err(Error::config("nothing to compare"));
    }
    let targets: Vec<f64> = limits.v_minus[..n_max].iter().map(|v| v / kappa).collect();
    let mut worst = 0.0f64;
    let mut total = 0;
    let mut report_details = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let x: Vec<f64> = s.surviving().map(|(v, _)| v).collect();
        if x.len() < MIN_CONDITIONAL {
            let suggested = ((s.reps() as f64 * kappa / MIN_CONDITIONAL as f64).ln() / spectral.lambda0).max(0.0);
            return Ok(TestReport::inconclusive(
                NAME,
                x.len(),
                format!("{} survivors at t = {}; try t <= {suggested:.2}", x.len(), s.t),
            ));
        }
        let est = power_moments(&x, n_max as u32);
        let z = max_abs_z(&est, &targets);
        worst = worst.max(z);
        total += x.len();
        report_details.push((format!("mean_{i}"), est[0].value));
        report_details.push((format!("max_z_{i}"), z));
    }
    let mut report = TestReport::new(NAME, "max |z|", worst, 4.0, total, worst <= 4.0).with_detail("limit_mean", targets[0]);
    for (k, v) in report_details {
        report = report.with_detail(&k, v);
    }
    Ok(report)
}

/// Data-driven separation of the smeared atom at 0 from the positive part of
/// `W_T`: the centre of the emptiest log-histogram bin below the main mode.
/// `None` when the histogram shows no clear gap.
pub fn atom_threshold(w: &[f64]) -> Option<f64> {
    let logs: Vec<f64> = w.iter().filter(|&&v| v > 0.0).map(|v| v.ln()).collect();
    if logs.is_empty() {
        return None;
    }
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        return Some(0.5 * lo.exp());
    }
    let bins = 30;
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for l in &logs {
        counts[(((l - lo) / width) as usize).min(bins - 1)] += 1;
    }
    let mode = (0..bins).max_by_key(|&i| (counts[i], std::cmp::Reverse(i)))?;
    if mode == 0 {
        return Some(0.5 * lo.exp());
    }
    let gap = (0..mode).min_by_key(|&i| counts[i])?;
    if counts[gap] as f64 > 0.2 * counts[mode] as f64 {
        return None;
    }
    Some((lo + (gap as f64 + 0.5) * width).exp())
}

/// Terminal-value diagnostics for `W_T = e^{lambda0 T} <Z_T, theta0>`:
/// (a) mean equals `theta0(x)` at 3 SE, (b) `P(W_T > threshold)` equals
/// `h(x)` at 4 SE, (c) the first three moments equal `V_n^+(theta0, x)` at 4 SE.
pub fn w_infty_diagnostics(
    terminal: &[f64],
    t: f64,
    spectral: &SpectralData,
    theta_x: f64,
    h_x: f64,
    v_plus_theta: &[f64],
) -> Result<TestReport> {
    const NAME: &str = "w_infinity";
    spectral.require(Regime::Supercritical)?;
    if (spectral.lambda0 * t).exp() > 0.01 {
        return Ok(TestReport::inconclusive(
            NAME,
            terminal.len(),
            format!("e^(lambda0 T) = {:.3e} > 0.01", (spectral.lambda0 * t).exp()),
        ));
    }
    if terminal.len() < MIN_CONDITIONAL {
        return Ok(TestReport::inconclusive(NAME, terminal.len(), "too few trajectories"));
    }
    let Some(threshold) = atom_threshold(terminal) else {
        return Ok(TestReport::inconclusive(NAME, terminal.len(), "atom separation ambiguous"));
    };
    let n = terminal.len() as f64;
    let n_mom = v_plus_theta.len().min(3);
    let moments = power_moments(terminal, n_mom.max(1) as u32);
    let z_mean = moments[0].z(theta_x);
    let p = terminal.iter().filter(|&&w| w > threshold).count() as f64 / n;
    let z_frac = Estimate {
        value: p,
        se: (p * (1.0 - p) / n).sqrt(),
    }
    .z(h_x);
    let z_mom = max_abs_z(&moments[..n_mom], &v_plus_theta[..n_mom]);
    let ok = z_mean.abs() <= 3.0 && z_frac.abs() <= 4.0 && z_mom <= 4.0;
    Ok(TestReport::new(NAME, "P(W_T > threshold)", p, h_x, terminal.len(), ok)
        .with_detail("threshold", threshold)
        .with_detail("mean", moments[0].value)
        .with_detail("z_mean", z_mean)
        .with_detail("z_fraction", z_frac)
        .with_detail("max_moment_z", z_mom))
}

/// Direct conditional means `E[F | N_T > 0]` (one sample per `T`, in
/// increasing `T`) against the reweighted mean `E[F w]`: the last gap must be
/// within 4 combined SE and must not exceed the first gap unless it is
/// below 3 SE. `weights` are summarized as a normalization diagnostic
/// (`E w` should be 1); it is reported, not gated.
pub fn qprocess_law_test(direct: &[(f64, Vec<f64>)], reweighted: &[f64], weights: &[f64]) -> Result<TestReport> {
    const NAME: &str = "q_process";
    if direct.is_empty() || reweighted.len() < 2 || weights.len() < 2 {
        return Err(Error::config("q-process test needs direct and reweighted samples"));
    }
    let rw = power_moments(reweighted, 1)[0];
    let mut gaps = Vec::new();
    for (t, f) in direct {
        if f.len() < MIN_CONDITIONAL {
            return Ok(TestReport::inconclusive(NAME, f.len(), format!("{} survivors at T = {t}", f.len())));
        }
        let d = power_moments(f, 1)[0];
        let se = d.se.hypot(rw.se);
        gaps.push(((d.value - rw.value).abs(), se));
    }
    let (g_first, _) = gaps[0];
    let (g_last, se_last) = *gaps.last().unwrap();
    let trend = g_last <= g_first || g_last <= 3.0 * se_last;
    let norm = power_moments(weights, 1)[0];
    let z_norm = norm.z(1.0);
    let z = if g_last == 0.0 { 0.0 } else { g_last / se_last };
    Ok(TestReport::new(NAME, "final gap / combined SE", z, 4.0, direct.last().unwrap().1.len(), z <= 4.0)
        .require(trend)
        .with_detail("reweighted_mean", rw.value)
        .with_detail("first_gap", g_first)
        .with_detail("last_gap", g_last)
        .with_detail("normalization_mean", norm.value)
        .with_detail("normalization_z", z_norm))
}
