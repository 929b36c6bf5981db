use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::semigroup::Regime;

/// Time-indexed grid fields `u_n(t, .)`: order 0 is the survival probability,
/// orders `1..=N` the moments of `<Z_t, f>`. Snapshots are uniformly spaced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentField {
    pub grid: Grid,
    pub times: Vec<f64>,
    /// Crank–Nicolson step used by the march.
    pub dt: f64,
    pub b_star: f64,
    /// `sup |f|` of the test function (1 for survival-only fields).
    pub f_sup: f64,
    pub survival: Option<Vec<Vec<f64>>>,
    /// `moments[n - 1][k]` is `u_n(times[k], .)`.
    pub moments: Vec<Vec<Vec<f64>>>,
}

impl MomentField {
    pub fn max_order(&self) -> usize {
        self.moments.len()
    }

    pub fn record_spacing(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    /// Snapshots of order `n` (0 = survival).
    pub fn order(&self, n: usize) -> Option<&[Vec<f64>]> {
        if n == 0 {
            self.survival.as_deref()
        } else {
            self.moments.get(n - 1).map(|v| v.as_slice())
        }
    }

    pub fn at(&self, n: usize, k: usize) -> &[f64] {
        &self.order(n).expect("order not solved")[k]
    }

    /// Index of the snapshot closest to `t`.
    pub fn time_index(&self, t: f64) -> usize {
        let dt = self.record_spacing();
        if dt == 0.0 {
            return 0;
        }
        ((t - self.times[0]) / dt).round().clamp(0.0, (self.times.len() - 1) as f64) as usize
    }

    /// Regime normalization: `u_n / (t+1)^{n-1}` critical, `e^{lambda0 t} u_n`
    /// subcritical, `e^{n lambda0 t} u_n` supercritical.
    pub fn normalized(&self, n: usize, k: usize, regime: Regime, lambda0: f64) -> Vec<f64> {
        let t = self.times[k];
        let factor = normalization(n, t, regime, lambda0);
        self.at(n, k).iter().map(|v| v * factor).collect()
    }

    /// Moment ceiling `|f|^n n! e^{n b* t}`.
    pub fn yule_ceiling(&self, n: usize, t: f64) -> f64 {
        self.f_sup.powi(n as i32) * crate::branching::yule_moment_bound(n.max(1) as u32, t, self.b_star)
    }

    pub fn invariants(&self) -> FieldInvariants {
        let mut r = FieldInvariants::default();
        if let Some(u0) = &self.survival {
            for (k, snap) in u0.iter().enumerate() {
                for &v in snap {
                    r.survival_range_violation = r.survival_range_violation.max(-v).max(v - 1.0);
                }
                if k > 0 {
                    for (a, b) in snap.iter().zip(&u0[k - 1]) {
                        r.survival_increase = r.survival_increase.max(a - b);
                    }
                }
            }
        }
        for k in 0..self.times.len() {
            let t = self.times[k];
            for n in 1..=self.max_order() {
                let ceiling = self.yule_ceiling(n, t);
                for &v in self.at(n, k) {
                    r.negative_moment = r.negative_moment.max(-v);
                    r.yule_excess = r.yule_excess.max(v - ceiling);
                }
            }
            if self.max_order() >= 2 {
                for (u1, u2) in self.at(1, k).iter().zip(self.at(2, k)) {
                    r.jensen_violation = r.jensen_violation.max(u1 * u1 - u2);
                }
            }
            if let (Some(u0), true) = (&self.survival, self.max_order() >= 2 && (self.f_sup - 1.0).abs() < 1e-15) {
                for ((s, u1), u2) in u0[k].iter().zip(self.at(1, k)).zip(self.at(2, k)) {
                    r.survival_above_mean = r.survival_above_mean.max(s - u1);
                    if *u2 > 0.0 {
                        r.cauchy_schwarz_violation = r.cauchy_schwarz_violation.max(u1 * u1 / u2 - s);
                    }
                }
            }
        }
        r
    }
}

pub fn normalization(n: usize, t: f64, regime: Regime, lambda0: f64) -> f64 {
    match regime {
        Regime::Critical => (t + 1.0).powi(1 - n as i32),
        Regime::Subcritical => (lambda0 * t).exp(),
        Regime::Supercritical => (n as f64 * lambda0 * t).exp(),
    }
}

/// Largest violation of each field invariant (<= tolerance means it holds).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FieldInvariants {
    /// `max(-u0, u0 - 1)`.
    pub survival_range_violation: f64,
    /// Largest increase of `u0` between consecutive snapshots.
    pub survival_increase: f64,
    pub negative_moment: f64,
    pub yule_excess: f64,
    /// `max(u1^2 - u2)`.
    pub jensen_violation: f64,
    /// `max(u0 - u1)` (only for `f = 1`).
    pub survival_above_mean: f64,
    /// `max(u1^2/u2 - u0)` (only for `f = 1`).
    pub cauchy_schwarz_violation: f64,
}

impl FieldInvariants {
    pub fn holds(&self, tol: f64) -> bool {
        [
            self.survival_range_violation,
            self.survival_increase,
            self.negative_moment,
            self.yule_excess,
            self.jensen_violation,
            self.survival_above_mean,
            self.cauchy_schwarz_violation,
        ]
        .iter()
        .all(|v| *v <= tol)
    }
}

/// Composite Simpson rule on uniformly spaced samples (any count >= 2; an
/// even number of intervals uses Simpson throughout, an odd number closes
/// with the 3/8 rule).
pub fn simpson_uniform(values: &[f64], h: f64) -> f64 {
    let m = values.len();
    match m {
        0 | 1 => 0.0,
        2 => 0.5 * h * (values[0] + values[1]),
        3 => h / 3.0 * (values[0] + 4.0 * values[1] + values[2]),
        _ => {
            let intervals = m - 1;
            let (simpson_end, tail) = if intervals % 2 == 0 { (m - 1, 0.0) } else { (m - 4, three_eighths(&values[m - 4..], h)) };
            let mut s = values[0] + values[simpson_end];
            for (i, v) in values.iter().enumerate().take(simpson_end).skip(1) {
                s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
            }
            s * h / 3.0 + tail
        }
    }
}

fn three_eighths(v: &[f64], h: f64) -> f64 {
    3.0 * h / 8.0 * (v[0] + 3.0 * v[1] + 3.0 * v[2] + v[3])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_exact_for_cubics() {
        for m in [3usize, 4, 5, 6, 9, 10] {
            let h = 2.0 / (m - 1) as f64;
            let v: Vec<f64> = (0..m).map(|i| (i as f64 * h).powi(3) - i as f64 * h).collect();
            assert!((simpson_uniform(&v, h) - 2.0).abs() < 1e-12, "m={m}");
        }
    }
}
