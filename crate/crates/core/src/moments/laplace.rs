//! Laplace functional `H_f(t, x, w) = 1 - E_x exp(w <Z_t, f>)`, solved from
//! `dH/dt = G H - b H^2`, `H(0) = 1 - e^{w f}`, for complex `w`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::solve::SolveSettings;
use crate::error::{Error, Result};
use crate::model::RateModel;
use crate::semigroup::{step_count, GeneratorMatrix, Propagator};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaplaceField {
    pub w: (f64, f64),
    pub t_end: f64,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// Analyticity radius `(|f| e^{b* t})^{-1}`.
pub fn laplace_radius(f: &[f64], t_end: f64, b_star: f64) -> f64 {
    let f_sup = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if f_sup == 0.0 {
        f64::INFINITY
    } else {
        1.0 / (f_sup * (b_star * t_end).exp())
    }
}

pub fn laplace_functional(
    f: &[f64],
    w: (f64, f64),
    t_end: f64,
    gen: &GeneratorMatrix,
    model: &RateModel,
    settings: &SolveSettings,
) -> Result<LaplaceField> {
    if f.len() != gen.len() {
        return Err(Error::config("test function does not match the grid"));
    }
    if t_end < 0.0 {
        return Err(Error::config(format!("negative horizon {t_end}")));
    }
    let radius = laplace_radius(f, t_end, model.b_star);
    let modulus = w.0.hypot(w.1);
    if modulus >= radius {
        return Err(Error::Domain(format!("|w| = {modulus:.4e} is outside the analyticity radius {radius:.4e}")));
    }
    march(f, w, t_end, gen, model, settings)
}

fn march(f: &[f64], w: (f64, f64), t_end: f64, gen: &GeneratorMatrix, model: &RateModel, settings: &SolveSettings) -> Result<LaplaceField> {
    // 1 - e^{(wr + i wi) f} = 1 - e^{wr f} (cos(wi f) + i sin(wi f)).
    let mut re: Vec<f64> = f.iter().map(|v| -(w.0 * v).exp_m1() * (w.1 * v).cos() + (1.0 - (w.1 * v).cos())).collect();
    let mut im: Vec<f64> = f.iter().map(|v| -(w.0 * v).exp() * (w.1 * v).sin()).collect();
    let (steps, h) = step_count(t_end, settings.dt.unwrap_or_else(|| gen.default_step()));
    if steps > 0 {
        let b = gen.grid().sample(|x| model.birth(x));
        let mut prop = Propagator::new(gen, h)?;
        for _ in 0..steps {
            prop.riccati_step_complex(&mut re, &mut im, &b);
        }
    }
    Ok(LaplaceField { w, t_end, re, im })
}

/// `d^n/dw^n H_f(t_end, ., 0)` for `n = 1..=max_order` from a Cauchy contour
/// of radius `radius_fraction` times the analyticity radius with `points` nodes.
/// With `H = 1 - E e^{w <Z,f>}` these equal `-u_n` for every `n`.
pub fn laplace_derivatives(
    f: &[f64],
    max_order: usize,
    t_end: f64,
    gen: &GeneratorMatrix,
    model: &RateModel,
    settings: &SolveSettings,
    radius_fraction: f64,
    points: usize,
) -> Result<Vec<Vec<f64>>> {
    if !(radius_fraction > 0.0 && radius_fraction < 1.0) {
        return Err(Error::Domain("contour must lie strictly inside the radius".into()));
    }
    if points <= max_order {
        return Err(Error::config("need more contour points than derivative orders"));
    }
    let n_nodes = gen.len();
    let radius = laplace_radius(f, t_end, model.b_star);
    if !radius.is_finite() {
        return Ok(vec![vec![0.0; n_nodes]; max_order]);
    }
    let r = radius_fraction * radius;
    let mut out = vec![vec![0.0; n_nodes]; max_order];
    for k in 0..points {
        let theta = 2.0 * PI * k as f64 / points as f64;
        let field = march(f, (r * theta.cos(), r * theta.sin()), t_end, gen, model, settings)?;
        for (n, acc) in out.iter_mut().enumerate().map(|(i, a)| (i + 1, a)) {
            // Re(H e^{-i n theta})
            let (c, s) = ((n as f64 * theta).cos(), (n as f64 * theta).sin());
            for i in 0..n_nodes {
                acc[i] += field.re[i] * c + field.im[i] * s;
            }
        }
    }
    let mut factorial = 1.0;
    for (n, acc) in out.iter_mut().enumerate().map(|(i, a)| (i + 1, a)) {
        factorial *= n as f64;
        let scale = factorial / (points as f64 * r.powi(n as i32));
        acc.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(out)
}
