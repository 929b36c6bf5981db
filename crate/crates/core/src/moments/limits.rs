//! Regime limit constants of the normalized moments.

use serde::{Deserialize, Serialize};

use super::field::{simpson_uniform, MomentField};
use super::solve::convolution_source;
use crate::error::{Error, Result};
use crate::model::RateModel;
use crate::semigroup::{step_count, GeneratorMatrix, Propagator, Regime, SpectralData};

/// Largest admissible tail completion relative to the integral.
pub const TAIL_FRACTION_MAX: f64 = 0.01;

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |c, i| c * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalLimits {
    /// `v[n - 1] = V_n = n! theta0 A^n B^{n-1}` on the grid.
    pub v: Vec<Vec<f64>>,
    pub a: f64,
    pub b: f64,
}

pub fn critical_limits(spectral: &SpectralData, max_order: usize) -> Result<CriticalLimits> {
    spectral.require(Regime::Critical)?;
    let (a, b) = (spectral.a, spectral.b);
    let v = (1..=max_order)
        .map(|n| {
            let c = factorial(n) * a.powi(n as i32) * b.powi(n as i32 - 1);
            spectral.theta0.iter().map(|t| c * t).collect()
        })
        .collect();
    Ok(CriticalLimits { v, a, b })
}

/// `n! theta0 nu(f)^n A^n B^{n-1}` for a test function `f`.
pub fn critical_limits_f(spectral: &SpectralData, f: &[f64], n: usize) -> Result<Vec<f64>> {
    spectral.require(Regime::Critical)?;
    let c = factorial(n) * spectral.integrate(f).powi(n as i32) * spectral.b.powi(n as i32 - 1);
    Ok(spectral.theta0.iter().map(|t| c * t).collect())
}

/// Two-point extrapolation of `y(t) = V + E/(t+1)`: returns `(V, E)`.
pub fn extrapolate_inverse_time(t1: f64, y1: f64, t2: f64, y2: f64) -> (f64, f64) {
    let (s1, s2) = (t1 + 1.0, t2 + 1.0);
    let v = (y2 * s2 - y1 * s1) / (s2 - s1);
    (v, (y1 - v) * s1)
}

/// Extrapolated limit of the critical normalization `u_n(t, x_i) / (t+1)^{n-1}`
/// from the snapshots at `t_end / 2` and `t_end`.
pub fn critical_extrapolation(field: &MomentField, n: usize, node: usize) -> (f64, f64) {
    let k2 = field.times.len() - 1;
    let k1 = field.time_index(0.5 * field.times[k2]);
    let y = |k: usize| field.normalized(n, k, Regime::Critical, 0.0)[node];
    extrapolate_inverse_time(field.times[k1], y(k1), field.times[k2], y(k2))
}

/// `\int_0^inf g` from uniform samples on `[0, T]`, completed with
/// `g(T)/rate`, the rate fitted on the last quarter of the samples.
/// Returns `(value, tail)`.
pub fn integrate_with_tail(g: &[f64], h: f64) -> Result<(f64, f64)> {
    let m = g.len();
    if m < 8 {
        return Err(Error::config("too few samples for tail completion"));
    }
    let body = simpson_uniform(g, h);
    let (k1, k2) = (3 * (m - 1) / 4, m - 1);
    let (g1, g2) = (g[k1], g[k2]);
    let tail = if g2 == 0.0 {
        0.0
    } else {
        let ratio = g2 / g1;
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::numerical(format!(
                "integrand tail is not decaying (g = {g1:.3e} -> {g2:.3e}); extend the horizon"
            )));
        }
        let rate = -ratio.ln() / ((k2 - k1) as f64 * h);
        g2 / rate
    };
    let total = body + tail;
    if tail.abs() > TAIL_FRACTION_MAX * total.abs() {
        return Err(Error::numerical(format!(
            "unresolved tail: completion {tail:.3e} exceeds {TAIL_FRACTION_MAX} of {total:.3e}; extend the horizon"
        )));
    }
    Ok((total, tail))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubcriticalLimits {
    /// `v_minus[n - 1] = V_n^-(f)`.
    pub v_minus: Vec<f64>,
    /// Survival constant, present when the field carries `u_0`.
    pub kappa: Option<f64>,
    /// `(V_1^-)^2 / V_2^-`.
    pub kappa_floor: Option<f64>,
    pub beta: Vec<f64>,
    /// Tail completion of each quadrature, relative to its value.
    pub tail_fraction: Vec<f64>,
    pub horizon: f64,
}

/// `beta_1 = lambda1 - lambda0`, `beta_n = lambda0/lambda1 (lambda1 - lambda0)`.
pub fn subcritical_betas(lambda0: f64, lambda1: f64, max_order: usize) -> Vec<f64> {
    (1..=max_order)
        .map(|n| if n == 1 { lambda1 - lambda0 } else { lambda0 / lambda1 * (lambda1 - lambda0) })
        .collect()
}

/// `V_n^-(f) = \int f^n d mu0 + sum C(n,k) \int_0^inf e^{lambda0 r} \int u_{n-k} u_k b d mu0 dr`
/// and `K^- = A - \int_0^inf e^{lambda0 r} \int u_0^2 b d mu0 dr`, by quadrature
/// over the stored field.
pub fn subcritical_limits(spectral: &SpectralData, model: &RateModel, field: &MomentField, f: &[f64]) -> Result<SubcriticalLimits> {
    spectral.require(Regime::Subcritical)?;
    if field.grid != spectral.grid || f.len() != spectral.theta0.len() {
        return Err(Error::config("field, test function and spectral data use different grids"));
    }
    let lambda0 = spectral.lambda0;
    let h = field.record_spacing();
    let b: Vec<f64> = field.grid.sample(|x| model.birth(x));
    let weight: Vec<f64> = b.iter().zip(&spectral.mu0).map(|(bi, m)| bi * m).collect();
    let n_max = field.max_order();
    let mut v_minus = Vec::with_capacity(n_max);
    let mut tail_fraction = Vec::new();
    let mut src = vec![0.0; f.len()];
    for n in 1..=n_max {
        let fn_: Vec<f64> = f.iter().map(|v| v.powi(n as i32)).collect();
        let mut value = spectral.integrate(&fn_);
        if n >= 2 {
            let g: Vec<f64> = (0..field.times.len())
                .map(|k| {
                    let lower: Vec<Vec<f64>> = (1..n).map(|m| field.at(m, k).to_vec()).collect();
                    let mut padded = lower;
                    padded.push(vec![0.0; f.len()]);
                    // convolution_source multiplies by b; integrate against mu0.
                    convolution_source(n, &padded, &b, &mut src);
                    (lambda0 * field.times[k]).exp() * src.iter().zip(&spectral.mu0).map(|(s, m)| s * m).sum::<f64>()
                })
                .collect();
            let (integral, tail) = integrate_with_tail(&g, h)?;
            tail_fraction.push(tail / integral);
            value += integral;
        }
        v_minus.push(value);
    }
    let kappa = match field.order(0) {
        Some(u0) => {
            let g: Vec<f64> = u0
                .iter()
                .zip(&field.times)
                .map(|(u, t)| (lambda0 * t).exp() * u.iter().zip(&weight).map(|(v, w)| v * v * w).sum::<f64>())
                .collect();
            let (integral, tail) = integrate_with_tail(&g, h)?;
            tail_fraction.push(tail / integral);
            Some(spectral.a - integral)
        }
        None => None,
    };
    let kappa_floor = (n_max >= 2).then(|| v_minus[0] * v_minus[0] / v_minus[1]);
    Ok(SubcriticalLimits {
        v_minus,
        kappa,
        kappa_floor,
        beta: subcritical_betas(lambda0, spectral.lambda1, n_max),
        tail_fraction,
        horizon: *field.times.last().expect("field has snapshots"),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HamburgerBound {
    pub r_star: f64,
    pub bound: f64,
}

/// `r* = ln(1 + 1/(4 eta a1))` and the moment bound `n! / (2 eta r*^n)`.
pub fn hamburger_bound(a1: f64, eta: f64, n: usize) -> Result<HamburgerBound> {
    if !(a1 > 0.0 && eta > 0.0) {
        return Err(Error::Domain(format!("need a1 > 0 and eta > 0, got {a1}, {eta}")));
    }
    let r_star = (1.0 / (4.0 * eta * a1)).ln_1p();
    Ok(HamburgerBound {
        r_star,
        bound: factorial(n) / (2.0 * eta * r_star.powi(n as i32)),
    })
}

/// The extremal sequence `a_n = a1 + eta sum C(n,k) a_{n-k} a_k`.
pub fn hamburger_recursion(a1: f64, eta: f64, max_order: usize) -> Vec<f64> {
    let mut a = Vec::with_capacity(max_order);
    for n in 1..=max_order {
        let mut v = a1;
        for k in 1..n {
            v += eta * binomial(n, k) * a[n - k - 1] * a[k - 1];
        }
        a.push(v);
    }
    a
}

/// Partial sums `sum_{n <= N} (m_{2n})^{-1/(2n)}` of the Carleman series for
/// the moment sequence `moments[n - 1] = m_n`.
pub fn carleman_partial_sums(moments: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    moments
        .iter()
        .enumerate()
        .skip(1)
        .step_by(2)
        .map(|(i, m)| {
            acc += m.powf(-1.0 / (i + 1) as f64);
            acc
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HamburgerCheck {
    pub a1: f64,
    pub eta: f64,
    pub r_star: f64,
    /// `|f|^n / |theta0| n! / (2 eta r*^n)` for each order.
    pub bounds: Vec<f64>,
    pub respected: bool,
    pub carleman: Vec<f64>,
}

/// Checks `|V_n^-(f)| <= |f|^n/|theta0| n!/(2 eta r*^n)` with
/// `a1 = sup_{t,x} e^{lambda0 t} P_t 1` (over `[0, horizon]` and the limit
/// `theta0 A`) and `eta = a1 b* / lambda0`.
pub fn hamburger_check(
    spectral: &SpectralData,
    gen: &GeneratorMatrix,
    model: &RateModel,
    limits: &SubcriticalLimits,
    f_sup: f64,
    dt: Option<f64>,
) -> Result<HamburgerCheck> {
    spectral.require(Regime::Subcritical)?;
    let lambda0 = spectral.lambda0;
    let (steps, h) = step_count(limits.horizon, dt.unwrap_or_else(|| gen.default_step()));
    let mut prop = Propagator::new(gen, h)?;
    let mut u = vec![1.0; gen.len()];
    let mut a1 = 1.0f64.max(spectral.theta_sup() * spectral.a);
    for k in 1..=steps {
        prop.step(&mut u);
        let m = u.iter().fold(0.0f64, |m, v| m.max(*v));
        a1 = a1.max((lambda0 * k as f64 * h).exp() * m);
    }
    let eta = a1 * model.b_star / lambda0;
    let theta_sup = spectral.theta_sup();
    let mut bounds = Vec::new();
    let mut respected = true;
    for (i, v) in limits.v_minus.iter().enumerate() {
        let n = i + 1;
        let hb = hamburger_bound(a1, eta, n)?;
        let bound = f_sup.powi(n as i32) / theta_sup * hb.bound;
        respected &= v.abs() <= bound;
        bounds.push(bound);
    }
    let kappa = limits.kappa.unwrap_or(1.0);
    let normalized: Vec<f64> = limits.v_minus.iter().map(|v| v / kappa).collect();
    Ok(HamburgerCheck {
        a1,
        eta,
        r_star: hamburger_bound(a1, eta, 1)?.r_star,
        bounds,
        respected,
        carleman: carleman_partial_sums(&normalized),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupercriticalLimits {
    /// `v_plus[n - 1] = V_n^+(f, .)` on the grid.
    pub v_plus: Vec<Vec<f64>>,
    /// The same recursion started from `theta0`.
    pub v_plus_theta: Vec<Vec<f64>>,
    pub mass: f64,
    /// `max |V_n^+(f) - V_n^+(theta0) (\int f d mu0)^n| / |V_n^+(f)|`.
    pub factorization_error: f64,
    pub beta: Vec<f64>,
}

/// `beta_1 = lambda1 - lambda0`, `beta_n = beta_{n-1} |lambda0| (n-1) / (beta_{n-1} + |lambda0| (n-1))`.
pub fn supercritical_betas(lambda0: f64, lambda1: f64, max_order: usize) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(max_order);
    for n in 1..=max_order {
        let v = if n == 1 {
            lambda1 - lambda0
        } else {
            let (prev, c) = (out[n - 2], lambda0.abs() * (n - 1) as f64);
            prev * c / (prev + c)
        };
        out.push(v);
    }
    out
}

/// `V_1^+ = theta0 \int f d mu0`; for `n >= 2`,
/// `V_n^+ = \int_0^inf e^{n lambda0 s} P_s(b sum C(n,k) V_k^+ V_{n-k}^+) ds
///       = -(G + n lambda0)^{-1} (b sum C(n,k) V_k^+ V_{n-k}^+)`.
pub fn supercritical_limits(
    spectral: &SpectralData,
    gen: &GeneratorMatrix,
    model: &RateModel,
    f: &[f64],
    max_order: usize,
) -> Result<SupercriticalLimits> {
    spectral.require(Regime::Supercritical)?;
    let mass = spectral.integrate(f);
    let v_plus = supercritical_recursion(spectral, gen, model, mass, max_order)?;
    let v_plus_theta = supercritical_recursion(spectral, gen, model, 1.0, max_order)?;
    let mut factorization_error = 0.0f64;
    for (n, (vf, vt)) in v_plus.iter().zip(&v_plus_theta).enumerate().map(|(i, p)| (i + 1, p)) {
        let scale = vf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale > 0.0 {
            let c = mass.powi(n as i32);
            let err = vf.iter().zip(vt).fold(0.0f64, |m, (a, b)| m.max((a - b * c).abs()));
            factorization_error = factorization_error.max(err / scale);
        }
    }
    Ok(SupercriticalLimits {
        v_plus,
        v_plus_theta,
        mass,
        factorization_error,
        beta: supercritical_betas(spectral.lambda0, spectral.lambda1, max_order),
    })
}

fn supercritical_recursion(
    spectral: &SpectralData,
    gen: &GeneratorMatrix,
    model: &RateModel,
    mass: f64,
    max_order: usize,
) -> Result<Vec<Vec<f64>>> {
    let n_nodes = gen.len();
    let b: Vec<f64> = gen.grid().sample(|x| model.birth(x));
    let mut v: Vec<Vec<f64>> = vec![spectral.theta0.iter().map(|t| t * mass).collect()];
    let mut src = vec![0.0; n_nodes];
    for n in 2..=max_order {
        let mut padded = v.clone();
        padded.push(vec![0.0; n_nodes]);
        convolution_source(n, &padded, &b, &mut src);
        let shifted = gen.shifted(n as f64 * spectral.lambda0);
        v.push(super::h::q_resolvent(&shifted, &src)?);
    }
    Ok(v)
}

/// Cross-check of one order by time quadrature of `e^{n lambda0 s} P_s g_n`
/// with tail completion, using the resolvent values of the lower orders.
pub fn supercritical_quadrature(
    spectral: &SpectralData,
    gen: &GeneratorMatrix,
    model: &RateModel,
    limits: &SupercriticalLimits,
    n: usize,
    horizon: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    if n < 2 || n > limits.v_plus.len() {
        return Err(Error::config(format!("order {n} outside 2..={}", limits.v_plus.len())));
    }
    let n_nodes = gen.len();
    let b: Vec<f64> = gen.grid().sample(|x| model.birth(x));
    let mut padded: Vec<Vec<f64>> = limits.v_plus[..n - 1].to_vec();
    padded.push(vec![0.0; n_nodes]);
    let mut w = vec![0.0; n_nodes];
    convolution_source(n, &padded, &b, &mut w);
    let shifted = gen.shifted(n as f64 * spectral.lambda0);
    let (steps, h) = step_count(horizon, dt);
    let mut prop = Propagator::new(&shifted, h)?;
    let mut samples: Vec<Vec<f64>> = vec![w.clone()];
    for _ in 0..steps {
        prop.step(&mut w);
        samples.push(w.clone());
    }
    (0..n_nodes)
        .map(|i| {
            let g: Vec<f64> = samples.iter().map(|s| s[i]).collect();
            integrate_with_tail(&g, h).map(|(v, _)| v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extrapolation_recovers_linear_model() {
        let (v, e) = extrapolate_inverse_time(10.0, 2.0 + 3.0 / 11.0, 20.0, 2.0 + 3.0 / 21.0);
        assert!((v - 2.0).abs() < 1e-12 && (e - 3.0).abs() < 1e-12);
    }

    #[test]
    fn tail_completion_of_exponential() {
        let h = 0.05;
        let g: Vec<f64> = (0..=400).map(|k| (-0.5 * k as f64 * h).exp()).collect();
        let (v, tail) = integrate_with_tail(&g, h).unwrap();
        assert!((v - 2.0).abs() < 1e-7, "{v}");
        assert!(tail > 0.0);
    }
}
