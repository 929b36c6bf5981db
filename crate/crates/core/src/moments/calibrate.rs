use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semigroup::{principal_eigenvalue, GeneratorMatrix};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub theta: f64,
    pub lambda0: f64,
    /// `(theta, lambda0(theta))` for every evaluation, in order.
    pub history: Vec<(f64, f64)>,
}

/// Bisection on `theta -> lambda0(theta)` until `|lambda0| <= tol`.
/// `build` maps the knob to a generator; `guess`, when given, is tried first
/// and returned unchanged if it is already critical.
pub fn calibrate_criticality<F>(build: F, bracket: (f64, f64), guess: Option<f64>, tol: f64) -> Result<Calibration>
where
    F: Fn(f64) -> Result<GeneratorMatrix>,
{
    let mut history = Vec::new();
    let eval = |theta: f64, history: &mut Vec<(f64, f64)>| -> Result<f64> {
        let l = principal_eigenvalue(&build(theta)?)?;
        history.push((theta, l));
        Ok(l)
    };
    if let Some(g) = guess {
        let l = eval(g, &mut history)?;
        if l.abs() <= tol {
            return Ok(Calibration { theta: g, lambda0: l, history });
        }
    }
    let (mut lo, mut hi) = bracket;
    let mut l_lo = eval(lo, &mut history)?;
    let l_hi = eval(hi, &mut history)?;
    for (t, l) in [(lo, l_lo), (hi, l_hi)] {
        if l.abs() <= tol {
            return Ok(Calibration { theta: t, lambda0: l, history });
        }
    }
    if l_lo.signum() == l_hi.signum() {
        return Err(Error::Domain(format!(
            "lambda0 does not change sign on [{lo}, {hi}]: {l_lo:.4e}, {l_hi:.4e}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let l = eval(mid, &mut history)?;
        if l.abs() <= tol || hi - lo <= f64::EPSILON * mid.abs().max(1.0) {
            return Ok(Calibration { theta: mid, lambda0: l, history });
        }
        if l.signum() == l_lo.signum() {
            lo = mid;
            l_lo = l;
        } else {
            hi = mid;
        }
    }
    Err(Error::Convergence {
        what: "calibrate_criticality",
        detail: format!("bisection stalled on [{lo}, {hi}]"),
    })
}
