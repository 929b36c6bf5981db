use serde::{Deserialize, Serialize};

use super::report::TestReport;
use crate::error::{Error, Result};
use crate::model::RateModel;
use crate::moments::MomentField;
use crate::semigroup::{Regime, SpectralData};

/// `u0 = r theta0 + Psi` with `r = \int u0 d mu0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalDecomposition {
    pub times: Vec<f64>,
    pub r: Vec<f64>,
    /// `psi[k]` is `Psi(times[k], .)` on the grid.
    pub psi: Vec<Vec<f64>>,
}

impl CriticalDecomposition {
    pub fn from_field(field: &MomentField, spectral: &SpectralData) -> Result<Self> {
        let u0 = field
            .order(0)
            .ok_or_else(|| Error::config("the field carries no survival probability"))?;
        if field.grid != spectral.grid {
            return Err(Error::config("field and spectral data use different grids"));
        }
        let r: Vec<f64> = u0.iter().map(|u| spectral.integrate(u)).collect();
        let psi = u0
            .iter()
            .zip(&r)
            .map(|(u, &rk)| u.iter().zip(&spectral.theta0).map(|(v, t)| v - rk * t).collect())
            .collect();
        Ok(Self {
            times: field.times.clone(),
            r,
            psi,
        })
    }

    /// `max_k |\int Psi(t_k) d mu0|`.
    pub fn orthogonality_error(&self, spectral: &SpectralData) -> f64 {
        self.psi.iter().map(|p| spectral.integrate(p).abs()).fold(0.0, f64::max)
    }

    /// `max |r theta0 + Psi - u0|` over all nodes and times.
    pub fn reconstruction_error(&self, field: &MomentField, spectral: &SpectralData) -> f64 {
        let mut worst = 0.0f64;
        for (k, p) in self.psi.iter().enumerate() {
            for ((v, t), u) in p.iter().zip(&spectral.theta0).zip(field.at(0, k)) {
                worst = worst.max((self.r[k] * t + v - u).abs());
            }
        }
        worst
    }

    /// `sup_{t in [T, 2T]} |Psi(t)|_inf / r(t)^2` for `T = t_end/2, t_end/4, ...`
    /// down to `t_min`, in increasing `T`.
    pub fn psi_ratio_profile(&self, t_min: f64) -> Vec<(f64, f64)> {
        let t_end = *self.times.last().unwrap_or(&0.0);
        let mut windows = Vec::new();
        let mut t = 0.5 * t_end;
        while t >= t_min && t > 0.0 {
            let sup = self
                .times
                .iter()
                .enumerate()
                .filter(|(_, &s)| s >= t - 1e-9 && s <= 2.0 * t + 1e-9)
                .map(|(k, _)| {
                    let norm = self.psi[k].iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    norm / (self.r[k] * self.r[k])
                })
                .fold(0.0, f64::max);
            windows.push((t, sup));
            t *= 0.5;
        }
        windows.reverse();
        windows
    }
}

/// Checks `(1+t) u0(t, x) -> theta0(x)/B` with the `log(2+t)/(1+t)` envelope:
/// the fitted envelope constant must stay within 20% over the last doubling
/// of `t`, the deviation must decrease over it, and the relative deviation
/// `B sup_x |(1+t) u0 - theta0/B|` at the final time must not exceed `tolerance`.
pub fn critical_survival_check(field: &MomentField, spectral: &SpectralData, tolerance: f64) -> Result<TestReport> {
    const NAME: &str = "critical_survival";
    spectral.require(Regime::Critical)?;
    let u0 = field
        .order(0)
        .ok_or_else(|| Error::config("the field carries no survival probability"))?;
    let b = spectral.b;
    let t_end = *field.times.last().expect("field has snapshots");
    if t_end < 50.0 / b {
        return Ok(TestReport::inconclusive(
            NAME,
            field.times.len(),
            format!("horizon {t_end:.1} below 50/B = {:.1}", 50.0 / b),
        ));
    }
    let deviation = |k: usize| {
        let t = field.times[k];
        u0[k]
            .iter()
            .zip(&spectral.theta0)
            .map(|(u, th)| ((1.0 + t) * u - th / b).abs())
            .fold(0.0, f64::max)
    };
    let envelope = |k: usize| {
        let t = field.times[k];
        deviation(k) * (1.0 + t) / (2.0 + t).ln()
    };
    let last = field.times.len() - 1;
    let half = field.time_index(0.5 * t_end);
    let dev_end = deviation(last);
    let dev_half = deviation(half);
    let c_end = envelope(last);
    let spread = if dev_end <= 1e-12 / b {
        0.0
    } else {
        (half..=last).map(|k| (envelope(k) / c_end - 1.0).abs()).fold(0.0, f64::max)
    };
    let relative = dev_end * b;
    let stable = spread <= 0.2;
    let decreasing = dev_end <= dev_half + 1e-12;
    Ok(TestReport::new(NAME, "B sup|(1+t)u0 - theta0/B|", relative, tolerance, field.times.len(), relative <= tolerance)
        .require(stable && decreasing)
        .with_detail("t_end", t_end)
        .with_detail("envelope_constant", c_end)
        .with_detail("envelope_spread", spread)
        .with_detail("deviation_half", dev_half)
        .with_detail("deviation_end", dev_end)
        .with_detail("stable", f64::from(u8::from(stable)))
        .with_detail("decreasing", f64::from(u8::from(decreasing))))
}

/// Compares the centered-difference `dr/dt` with
/// `-lambda0 r - B r^2 - r mu0(2 theta0 b Psi) - mu0(b Psi^2)` at every
/// interior snapshot with `t >= from_time` and `r >= r_floor`. The `lambda0`
/// term vanishes at exact criticality and absorbs calibration residue.
pub fn critical_ode_residual(
    decomp: &CriticalDecomposition,
    spectral: &SpectralData,
    model: &RateModel,
    from_time: f64,
    r_floor: f64,
) -> Result<TestReport> {
    const NAME: &str = "critical_r_ode";
    spectral.require(Regime::Critical)?;
    let grid = &spectral.grid;
    let bx = grid.sample(|x| model.birth(x));
    let theta_b: Vec<f64> = spectral.theta0.iter().zip(&bx).map(|(t, b)| 2.0 * t * b).collect();
    let n = decomp.times.len();
    let mut worst = 0.0f64;
    let mut count = 0;
    for k in 1..n.saturating_sub(1) {
        let t = decomp.times[k];
        let r = decomp.r[k];
        if t < from_time || r < r_floor {
            continue;
        }
        let dt = decomp.times[k + 1] - decomp.times[k - 1];
        let numeric = (decomp.r[k + 1] - decomp.r[k - 1]) / dt;
        let psi = &decomp.psi[k];
        let cross: f64 = psi.iter().zip(&theta_b).zip(&spectral.mu0).map(|((p, w), m)| p * w * m).sum();
        let square: f64 = psi.iter().zip(&bx).zip(&spectral.mu0).map(|((p, b), m)| b * p * p * m).sum();
        let rhs = -spectral.lambda0 * r - spectral.b * r * r - r * cross - square;
        let rel = (numeric - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        count += 1;
    }
    if count == 0 {
        return Ok(TestReport::inconclusive(NAME, 0, "no snapshot above the noise floor"));
    }
    let mut report = TestReport::new(NAME, "max relative residual", worst, 1e-3, count, worst <= 1e-3);
    let profile = decomp.psi_ratio_profile(from_time.max(1.0));
    if let Some(&(_, last)) = profile.last() {
        report = report.with_detail("psi_over_r2_last_window", last);
    }
    if profile.len() >= 2 {
        let prev = profile[profile.len() - 2].1;
        report = report.with_detail("psi_over_r2_previous_window", prev);
    }
    Ok(report)
}
