//! The limit `h = lim_t P_x(N_t > 0)`, fixed point of `h = \int_0^inf Q_s(2bh - bh^2) ds`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::solve::{solve_survival_from, SolveSettings};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{DynamicsSpec, RateModel};
use crate::semigroup::{build_generator_with, build_q_generator, tridiag, GeneratorMatrix, GeneratorOptions, MotionBlock};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HSolution {
    pub grid: Grid,
    /// Fixed point of the Q-route.
    pub h: Vec<f64>,
    /// Residual history `|G h - b h^2|_inf` of the iteration.
    pub residual_history: Vec<f64>,
    /// Value of the u0-route at the final march time.
    pub u0_route: Vec<f64>,
    pub u0_horizon: f64,
    /// Whether the u0 march reached its stopping rule (otherwise only the
    /// bound `h <= u0(T)` is available).
    pub u0_converged: bool,
    pub route_gap: f64,
    pub tol: f64,
    /// `true` when `d = 0` makes `h = 1` a degenerate solution (HD violated).
    pub degenerate: bool,
}

impl HSolution {
    pub fn sup(&self) -> f64 {
        self.h.iter().fold(0.0f64, |m, v| m.max(*v))
    }

    pub fn inf(&self) -> f64 {
        self.h.iter().fold(f64::INFINITY, |m, v| m.min(*v))
    }

    pub fn at(&self, x: f64) -> f64 {
        self.grid.interpolate(&self.h, x)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HSettings {
    pub max_iter: usize,
    /// Longest u0 march.
    pub max_horizon: f64,
    pub solve: SolveSettings,
}

impl Default for HSettings {
    fn default() -> Self {
        Self {
            max_iter: 500,
            max_horizon: 400.0,
            solve: SolveSettings::default(),
        }
    }
}

pub fn solve_h(model: &RateModel, dynamics: &DynamicsSpec, grid: &Grid, tol: f64) -> Result<HSolution> {
    solve_h_with(model, dynamics, grid, tol, &HSettings::default())
}

/// Q-route: over the infinite horizon `\int_0^inf Q_s g ds = -G_Q^{-1} g`, so
/// the fixed point is the largest root in `[0, 1]` of `G h - b h^2 = 0`.
/// u0-route: march the survival equation until the geometric extrapolation
/// of successive unit-time increments falls below `tol / 10`.
pub fn solve_h_with(
    model: &RateModel,
    dynamics: &DynamicsSpec,
    grid: &Grid,
    tol: f64,
    settings: &HSettings,
) -> Result<HSolution> {
    if !(tol > 0.0) {
        return Err(Error::config("tolerance must be positive"));
    }
    let gen = build_generator_with(
        model,
        dynamics,
        grid,
        &GeneratorOptions {
            edge_check: false,
            ..Default::default()
        },
    )?;
    let degenerate = grid.nodes().iter().all(|&x| model.death(x) == 0.0);
    let b = grid.sample(|x| model.birth(x));
    let q = build_q_generator(model, dynamics, grid)?;
    let (h, residual_history) = fixed_point_h(&gen, &q, &b, tol, settings.max_iter)?;

    // Cross-check the fixed-point form with one application of the Q-resolvent.
    let rhs: Vec<f64> = h.iter().zip(&b).map(|(hi, bi)| 2.0 * bi * hi - bi * hi * hi).collect();
    let image = q_resolvent(&q, &rhs)?;
    let fixed_gap = image.iter().zip(&h).fold(0.0f64, |m, (a, c)| m.max((a - c).abs()));
    if fixed_gap > 10.0 * tol {
        return Err(Error::Convergence {
            what: "solve_h",
            detail: format!("Q-resolvent image differs from the Newton root by {fixed_gap:.3e}"),
        });
    }

    let (u0_route, u0_horizon, u0_converged) = u0_route(&gen, model, tol, settings)?;
    let route_gap = u0_route.iter().zip(&h).fold(0.0f64, |m, (a, c)| m.max((a - c).abs()));
    if u0_converged {
        if route_gap > 3.0 * tol {
            return Err(Error::Convergence {
                what: "solve_h",
                detail: format!("Q-route and u0-route disagree by {route_gap:.3e} > 3 tol"),
            });
        }
    } else if h.iter().zip(&u0_route).any(|(hq, u)| *hq > u + 3.0 * tol) {
        return Err(Error::Convergence {
            what: "solve_h",
            detail: "Q-route exceeds the survival probability at the end of the u0 march".into(),
        });
    }
    Ok(HSolution {
        grid: *grid,
        h,
        residual_history,
        u0_route,
        u0_horizon,
        u0_converged,
        route_gap,
        tol,
        degenerate,
    })
}

/// Monotone iteration `h <- R_Q(2bh - bh^2)` from `h = 1` (decreasing to the
/// largest root in `[0, 1]`), then Newton on `G h - b h^2 = 0` from the
/// last iterate. Newton is kept only if it stays below the monotone iterate.
fn fixed_point_h(
    gen: &GeneratorMatrix,
    q: &GeneratorMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = gen.len();
    let residual = |h: &[f64]| {
        let gh = gen.apply(h);
        (0..n).fold(0.0f64, |m, i| m.max((gh[i] - b[i] * h[i] * h[i]).abs()))
    };
    let mut h = vec![1.0; n];
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let rhs: Vec<f64> = (0..n).map(|i| b[i] * h[i] * (2.0 - h[i])).collect();
        let next = q_resolvent(q, &rhs)?;
        let step = next.iter().zip(&h).fold(0.0f64, |m, (a, c)| m.max((a - c).abs()));
        h = next.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        history.push(residual(&h));
        if step <= 1e-3 * tol {
            return Ok((h, history));
        }
        if step <= 1e-2 {
            break;
        }
    }
    let mut x = h.clone();
    for _ in 0..max_iter {
        let gh = gen.apply(&x);
        let resid: Vec<f64> = (0..n).map(|i| gh[i] - b[i] * x[i] * x[i]).collect();
        let rnorm = resid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        history.push(rnorm);
        // J = G - 2 diag(b x); solve J delta = -resid.
        let jdiag: Vec<f64> = (0..n).map(|i| -2.0 * b[i] * x[i]).collect();
        let mut delta: Vec<f64> = resid.iter().map(|v| -v).collect();
        solve_shifted(gen, &jdiag, &mut delta)?;
        let step = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (xi, d) in x.iter_mut().zip(&delta) {
            *xi += d;
        }
        let admissible = x.iter().zip(&h).all(|(xi, hi)| *xi >= -tol && *xi <= hi + tol);
        if !admissible || !step.is_finite() {
            break;
        }
        if step <= 1e-3 * tol && rnorm <= tol {
            return Ok((x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(), history));
        }
    }
    Err(Error::Convergence {
        what: "solve_h",
        detail: format!(
            "no convergence in {max_iter} rounds; residual history tail {:?}",
            &history[history.len().saturating_sub(5)..]
        ),
    })
}

/// Solves `(G + diag(shift)) x = rhs` in place.
fn solve_shifted(gen: &GeneratorMatrix, shift: &[f64], x: &mut [f64]) -> Result<()> {
    let n = gen.len();
    match gen.motion() {
        MotionBlock::Tridiagonal { lower, diag, upper } => {
            let d: Vec<f64> = (0..n).map(|i| diag[i] + gen.potential()[i] + shift[i]).collect();
            tridiag::solve(lower, &d, upper, x);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical("singular Jacobian in the h equation"));
            }
            Ok(())
        }
        MotionBlock::Dense(_) => {
            let mut m: DMatrix<f64> = gen.to_dense();
            for i in 0..n {
                m[(i, i)] += shift[i];
            }
            let mut v = DVector::from_column_slice(x);
            if !m.lu().solve_mut(&mut v) {
                return Err(Error::numerical("singular Jacobian in the h equation"));
            }
            x.copy_from_slice(v.as_slice());
            Ok(())
        }
    }
}

/// `\int_0^inf Q_s g ds = -G_Q^{-1} g`.
pub fn q_resolvent(q: &GeneratorMatrix, g: &[f64]) -> Result<Vec<f64>> {
    let mut x: Vec<f64> = g.iter().map(|v| -v).collect();
    solve_shifted(q, &vec![0.0; q.len()], &mut x)?;
    Ok(x)
}

fn u0_route(gen: &GeneratorMatrix, model: &RateModel, tol: f64, settings: &HSettings) -> Result<(Vec<f64>, f64, bool)> {
    let mut u = vec![1.0; gen.len()];
    let chunk = 1.0;
    let mut t = 0.0;
    let mut prev_inc: Option<f64> = None;
    let solve = SolveSettings {
        record_dt: chunk,
        ..settings.solve
    };
    while t < settings.max_horizon {
        let field = solve_survival_from(&u, chunk, gen, model, &solve)?;
        let next = field.at(0, field.times.len() - 1).to_vec();
        let inc = next.iter().zip(&u).fold(0.0f64, |m, (a, c)| m.max((a - c).abs()));
        u = next;
        t += chunk;
        if inc == 0.0 {
            return Ok((u, t, true));
        }
        if let Some(p) = prev_inc {
            let q = inc / p;
            if q < 0.95 {
                let remaining = inc * q / (1.0 - q);
                if remaining <= 0.1 * tol {
                    return Ok((u, t, true));
                }
            }
        }
        prev_inc = Some(inc);
    }
    Ok((u, t, false))
}
