use serde::{Deserialize, Serialize};

use super::report::TestReport;
use crate::branching::Estimate;
use crate::error::{Error, Result};

/// Smallest sample accepted by the KS routines.
pub const MIN_KS_SAMPLE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    /// Slack subtracted from the statistic before the p-value.
    pub slack: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Kolmogorov tail `Q(l) = 2 sum_{k>=1} (-1)^{k-1} e^{-2 k^2 l^2}`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// `sup |F_n - F|` for a continuous null `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::config("empty sample"));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::config("sample contains NaN"));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < x.len() {
        // Ties: the empirical CDF jumps once over the whole block.
        let mut j = i;
        while j + 1 < x.len() && x[j + 1] == x[i] {
            j += 1;
        }
        let f = cdf(x[i]);
        d = d.max(f - i as f64 / n).max((j + 1) as f64 / n - f);
        i = j + 1;
    }
    Ok(d)
}

/// One-sample KS test with the asymptotic p-value (Stephens' correction
/// `sqrt(n) + 0.12 + 0.11/sqrt(n)`).
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    ks_test_with_slack(samples, cdf, 0.0)
}

/// KS test of `max(D - slack, 0)`.
pub fn ks_test_with_slack(samples: &[f64], cdf: impl Fn(f64) -> f64, slack: f64) -> Result<KsResult> {
    if samples.len() < MIN_KS_SAMPLE {
        return Err(Error::config(format!(
            "KS needs at least {MIN_KS_SAMPLE} samples, got {}",
            samples.len()
        )));
    }
    let d = ks_statistic(samples, cdf)?;
    let sn = (samples.len() as f64).sqrt();
    let p = kolmogorov_q((sn + 0.12 + 0.11 / sn) * (d - slack).max(0.0));
    Ok(KsResult {
        statistic: d,
        slack,
        p_value: p,
        n: samples.len(),
    })
}

pub fn exponential_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -(-x).exp_m1()
    }
}

/// Finite-t slack `c/t` of the critical KS tests.
pub fn ks_slack(t: f64) -> f64 {
    ks_slack_constant() / t
}

/// `c = max_t t * sup_x |F_t(x) - (1 - e^{-x})|` with `F_t` the exact law of
/// `N_t/(t+1)` given `N_t > 0` for critical binary branching at unit rate
/// (geometric with ratio `t/(1+t)`), over `t` in `[10, 1000]`.
pub fn ks_slack_constant() -> f64 {
    [10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0]
        .iter()
        .map(|&t| t * geometric_exponential_distance(t))
        .fold(0.0, f64::max)
}

fn geometric_exponential_distance(t: f64) -> f64 {
    let beta = t / (1.0 + t);
    let mut d = 0.0f64;
    let mut before = 0.0;
    let mut k = 1u64;
    loop {
        let x = k as f64 / (1.0 + t);
        let fe = exponential_cdf(x);
        let after = 1.0 - beta.powf(k as f64);
        d = d.max((fe - before).abs()).max((after - fe).abs());
        before = after;
        if x > 50.0 {
            break;
        }
        k += 1;
    }
    d
}

/// z-score of each estimate against its target; passes when every
/// `|z| <= n_se`.
pub fn moment_z_test(name: &str, estimates: &[Estimate], targets: &[f64], n_se: f64, sample_size: usize) -> Result<TestReport> {
    if estimates.is_empty() || estimates.len() != targets.len() {
        return Err(Error::config("moment_z_test needs matching nonempty estimates and targets"));
    }
    let z: Vec<f64> = estimates.iter().zip(targets).map(|(e, &t)| e.z(t)).collect();
    let worst = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut report = TestReport::new(name, "max |z|", worst, n_se, sample_size, worst <= n_se);
    for (i, v) in z.iter().enumerate() {
        report = report.with_detail(&format!("z{}", i + 1), *v);
    }
    Ok(report)
}

/// Mean and standard error of `x^n` over a sample, `n = 1..=n_max`.
pub fn power_moments(x: &[f64], n_max: u32) -> Vec<Estimate> {
    let len = x.len() as f64;
    (1..=n_max)
        .map(|n| {
            let p: Vec<f64> = x.iter().map(|v| v.powi(n as i32)).collect();
            let mean = p.iter().sum::<f64>() / len;
            let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (len - 1.0);
            Estimate {
                value: mean,
                se: (var / len).sqrt(),
            }
        })
        .collect()
}

/// `h(y) = ((y + sqrt(y^2 + 2))/2)^2`, evaluated without cancellation for `y < 0`.
pub fn upsilon_h(y: f64) -> f64 {
    let s = (y * y + 2.0).sqrt();
    let root = if y >= 0.0 { 0.5 * (y + s) } else { 1.0 / (s - y) };
    root * root
}

/// Limit law of the normalized ratio: `P(xi^{1/2} - xi^{-1/2}/2 <= y) = 1 - e^{-h(y)}`.
pub fn upsilon_law(y: f64) -> f64 {
    -(-upsilon_h(y)).exp_m1()
}
