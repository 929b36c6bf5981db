use serde::{Deserialize, Serialize};

use super::field::{simpson_uniform, MomentField};
use crate::error::{Error, Result};
use crate::model::RateModel;
use crate::semigroup::{step_count, GeneratorMatrix, Propagator};

/// Blow-up guard: abort when a moment exceeds this multiple of the Yule ceiling.
pub const YULE_GUARD: f64 = 10.0;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveSettings {
    /// Crank–Nicolson step (default: the generator's monotone default).
    pub dt: Option<f64>,
    /// Snapshot spacing.
    pub record_dt: f64,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            dt: None,
            record_dt: 0.05,
        }
    }
}

/// Snapshot layout: `(records, steps per record, step)`.
fn layout(t_end: f64, gen: &GeneratorMatrix, s: &SolveSettings) -> Result<(usize, usize, f64)> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::config(format!("t_end must be positive, got {t_end}")));
    }
    if !(s.record_dt > 0.0) {
        return Err(Error::config("record_dt must be positive"));
    }
    let (records, spacing) = step_count(t_end, s.record_dt);
    let h_max = s.dt.unwrap_or_else(|| gen.default_step());
    let (per, h) = step_count(spacing, h_max);
    Ok((records, per, h))
}

fn births(gen: &GeneratorMatrix, model: &RateModel) -> Vec<f64> {
    gen.grid().sample(|x| model.birth(x))
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// `b * sum_{k=1}^{n-1} C(n,k) u_k u_{n-k}` from the current orders `u[0..n-1]`.
pub(crate) fn convolution_source(n: usize, u: &[Vec<f64>], b: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for k in 1..n {
        let c = binomial(n, k);
        let (a, bb) = (&u[k - 1], &u[n - k - 1]);
        for i in 0..out.len() {
            out[i] += c * a[i] * bb[i];
        }
    }
    for (o, bi) in out.iter_mut().zip(b) {
        *o *= bi;
    }
}

/// Moments `u_n(t, x) = E_x <Z_t, f>^n`, `n = 1..=max_order`, from the
/// differential form `du_n/dt = G u_n + b sum C(n,k) u_k u_{n-k}`.
pub fn solve_moments(
    f: &[f64],
    max_order: usize,
    t_end: f64,
    gen: &GeneratorMatrix,
    model: &RateModel,
    settings: &SolveSettings,
) -> Result<MomentField> {
    if max_order == 0 {
        return Err(Error::config("max order must be at least 1"));
    }
    if f.len() != gen.len() || f.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("test function must be finite and match the grid"));
    }
    let n_nodes = gen.len();
    let (records, per, h) = layout(t_end, gen, settings)?;
    let b = births(gen, model);
    let f_sup = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut prop = Propagator::new(gen, h)?;
    let mut u: Vec<Vec<f64>> = (1..=max_order).map(|n| f.iter().map(|v| v.powi(n as i32)).collect()).collect();
    let mut src_old = vec![vec![0.0; n_nodes]; max_order];
    for n in 2..=max_order {
        convolution_source(n, &u, &b, &mut src_old[n - 1]);
    }
    let mut src_new = vec![0.0; n_nodes];
    let mut avg = vec![0.0; n_nodes];
    let mut times = vec![0.0];
    let mut snaps: Vec<Vec<Vec<f64>>> = u.iter().map(|v| vec![v.clone()]).collect();
    for rec in 0..records {
        for _ in 0..per {
            prop.step(&mut u[0]);
            for n in 2..=max_order {
                convolution_source(n, &u, &b, &mut src_new);
                for i in 0..n_nodes {
                    avg[i] = 0.5 * (src_old[n - 1][i] + src_new[i]);
                }
                prop.step_with_source(&mut u[n - 1], &avg);
                src_old[n - 1].copy_from_slice(&src_new);
            }
        }
        let t_rec = (rec + 1) as f64 * per as f64 * h;
        for n in 1..=max_order {
            let ceiling = YULE_GUARD * f_sup.powi(n as i32) * crate::branching::yule_moment_bound(n as u32, t_rec, model.b_star);
            let worst = u[n - 1].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !worst.is_finite() || worst > ceiling {
                return Err(Error::numerical(format!(
                    "moment blow-up: |u_{n}| = {worst:.3e} exceeds {YULE_GUARD}x the Yule ceiling {:.3e} at t = {t_rec:.3}",
                    ceiling / YULE_GUARD
                )));
            }
            snaps[n - 1].push(u[n - 1].clone());
        }
        times.push(t_rec);
    }
    Ok(MomentField {
        grid: *gen.grid(),
        times,
        dt: h,
        b_star: model.b_star,
        f_sup,
        survival: None,
        moments: snaps,
    })
}

/// Survival probability `u0(t, x) = P_x(N_t > 0)` from `du0/dt = G u0 - b u0^2`,
/// `u0(0) = 1`.
pub fn solve_survival(t_end: f64, gen: &GeneratorMatrix, model: &RateModel, settings: &SolveSettings) -> Result<MomentField> {
    solve_survival_from(&vec![1.0; gen.len()], t_end, gen, model, settings)
}

/// Same equation started from an arbitrary `v0` (nonlinear semigroup).
pub fn solve_survival_from(
    v0: &[f64],
    t_end: f64,
    gen: &GeneratorMatrix,
    model: &RateModel,
    settings: &SolveSettings,
) -> Result<MomentField> {
    let mut s = *settings;
    let mut last_err = None;
    for _attempt in 0..4 {
        match survival_march(v0, t_end, gen, model, &s) {
            Ok(f) => return Ok(f),
            Err(e @ Error::Numerical(_)) => {
                let (_, _, h) = layout(t_end, gen, &s)?;
                s.dt = Some(0.5 * h);
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn survival_march(v0: &[f64], t_end: f64, gen: &GeneratorMatrix, model: &RateModel, s: &SolveSettings) -> Result<MomentField> {
    let (records, per, h) = layout(t_end, gen, s)?;
    let b = births(gen, model);
    let mut prop = Propagator::new(gen, h)?;
    let mut u = v0.to_vec();
    let mut times = vec![0.0];
    let mut snaps = vec![u.clone()];
    for rec in 0..records {
        for _ in 0..per {
            prop.riccati_step(&mut u, &b);
        }
        let min = u.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        if min < -1e-10 || !min.is_finite() {
            return Err(Error::numerical(format!("survival probability lost positivity ({min:.3e}) with step {h:.3e}")));
        }
        for v in u.iter_mut() {
            *v = v.max(0.0);
        }
        times.push((rec + 1) as f64 * per as f64 * h);
        snaps.push(u.clone());
    }
    Ok(MomentField {
        grid: *gen.grid(),
        times,
        dt: h,
        b_star: model.b_star,
        f_sup: 1.0,
        survival: Some(snaps),
        moments: Vec::new(),
    })
}

/// Merge a survival field into a moment field solved on the same snapshots.
pub fn with_survival(mut moments: MomentField, survival: MomentField) -> Result<MomentField> {
    if moments.times.len() != survival.times.len()
        || moments.times.iter().zip(&survival.times).any(|(a, b)| (a - b).abs() > 1e-9)
    {
        return Err(Error::config("survival and moment fields use different snapshot times"));
    }
    moments.survival = survival.survival;
    Ok(moments)
}

/// Relative residual of the integral (Duhamel) form at one snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DuhamelResidual {
    pub order: usize,
    pub t: f64,
    pub relative: f64,
}

/// Recomputes the right-hand side of the integral equation for order `n`
/// (`n = 0`: survival) at snapshot `k` by Simpson quadrature over the stored
/// snapshots, applying `P_s` with an independent propagator of step `dt/2`.
pub fn duhamel_residual(
    field: &MomentField,
    f: &[f64],
    n: usize,
    k: usize,
    gen: &GeneratorMatrix,
    model: &RateModel,
) -> Result<DuhamelResidual> {
    let spacing = field.record_spacing();
    let b = births(gen, model);
    let n_nodes = gen.len();
    let (per, h) = step_count(spacing, 0.5 * field.dt);
    let mut prop = Propagator::new(gen, h)?;
    let mut apply_p_spacing = |v: &mut Vec<f64>| {
        for _ in 0..per {
            prop.step(v);
        }
    };
    // Integrand g(r) at the stored snapshots r = times[j].
    let source = |j: usize| -> Vec<f64> {
        let mut out = vec![0.0; n_nodes];
        if n == 0 {
            let u0 = field.at(0, j);
            for i in 0..n_nodes {
                out[i] = -b[i] * u0[i] * u0[i];
            }
        } else {
            let lower: Vec<Vec<f64>> = (1..n).map(|m| field.at(m, j).to_vec()).collect();
            let mut padded = lower;
            padded.push(vec![0.0; n_nodes]);
            convolution_source(n, &padded, &b, &mut out);
        }
        out
    };
    // Simpson weights over s_j = j * spacing, j = 0..=k, evaluated by Horner:
    // I = sum_j w_j P_{s_j} g(t - s_j).
    let weights = simpson_weights(k + 1, spacing);
    let mut acc = vec![0.0; n_nodes];
    let mut initial: Vec<f64> = if n == 0 { vec![1.0; n_nodes] } else { f.iter().map(|v| v.powi(n as i32)).collect() };
    for j in (0..=k).rev() {
        let g = source(k - j);
        for i in 0..n_nodes {
            acc[i] += weights[j] * g[i];
        }
        if j > 0 {
            apply_p_spacing(&mut acc);
        }
    }
    for _ in 0..k {
        apply_p_spacing(&mut initial);
    }
    let target = field.at(n, k);
    let scale = target.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let err = (0..n_nodes).fold(0.0f64, |m, i| m.max((initial[i] + acc[i] - target[i]).abs()));
    Ok(DuhamelResidual {
        order: n,
        t: field.times[k],
        relative: err / scale,
    })
}

fn simpson_weights(m: usize, h: f64) -> Vec<f64> {
    (0..m)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            simpson_uniform(&e, h)
        })
        .collect()
}

/// Short-time window of the Picard construction: `tau = 1/(4 C^2 b*)`,
/// `C = 1 + sup e^V` over the grid.
pub fn picard_window(model: &RateModel, gen: &GeneratorMatrix) -> f64 {
    let sup_ev = gen.grid().nodes().iter().fold(0.0f64, |m, &x| m.max(model.potential(x).exp()));
    let c = 1.0 + sup_ev;
    1.0 / (4.0 * c * c * model.b_star)
}

/// Picard iterates `w_k` on `[0, tau]`: `w_0 = P_t v0`, and `w_k` solves the
/// linear equation `dw/dt = G w - b w_{k-1}^2`. Returns `w` at `tau` for each
/// iterate.
pub fn picard_survival(
    v0: &[f64],
    tau: f64,
    iterations: usize,
    gen: &GeneratorMatrix,
    model: &RateModel,
    dt: f64,
) -> Result<Vec<Vec<f64>>> {
    let n_nodes = gen.len();
    let b = births(gen, model);
    let (steps, h) = step_count(tau, dt);
    let mut prop = Propagator::new(gen, h)?;
    let mut prev_path: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    let mut w = v0.to_vec();
    prev_path.push(w.clone());
    for _ in 0..steps {
        prop.step(&mut w);
        prev_path.push(w.clone());
    }
    let mut finals = vec![w];
    let mut avg = vec![0.0; n_nodes];
    for _ in 0..iterations {
        let mut w = v0.to_vec();
        let mut path = Vec::with_capacity(steps + 1);
        path.push(w.clone());
        for s in 0..steps {
            for i in 0..n_nodes {
                let (a, c) = (prev_path[s][i], prev_path[s + 1][i]);
                avg[i] = -0.5 * b[i] * (a * a + c * c);
            }
            prop.step_with_source(&mut w, &avg);
            path.push(w.clone());
        }
        finals.push(w);
        prev_path = path;
    }
    Ok(finals)
}
