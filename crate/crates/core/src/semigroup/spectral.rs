//! Principal eigentriple, spectral gap and the constants A, B, H.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::generator::{build_generator_with, GeneratorMatrix, GeneratorOptions, MotionBlock};
use super::propagator::{step_count, sup, Propagator};
use super::tridiag::{SymTridiag, TriFactor};
use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid};
use crate::model::{ell_and_rho, DynamicsSpec, Motion, RateModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Critical,
    Subcritical,
    Supercritical,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Critical => "critical",
            Regime::Subcritical => "subcritical",
            Regime::Supercritical => "supercritical",
        }
    }
}

/// Relative criticality tolerance: `eps_crit = CRIT_FRACTION * (lambda1 - lambda0)`.
pub const CRIT_FRACTION: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralData {
    pub grid: Grid,
    pub lambda0: f64,
    /// Real part of the second-rightmost eigenvalue of `-G`.
    pub lambda1: f64,
    /// Imaginary part of that eigenvalue (0 for self-adjoint cases).
    #[serde(default)]
    pub lambda1_imag: f64,
    /// Right eigenfunction, sup-normalized to 1.
    pub theta0: Vec<f64>,
    /// Left eigenvector as grid weights, normalized so that `sum theta0 * mu0 = 1`.
    pub mu0: Vec<f64>,
    pub a: f64,
    pub b: f64,
    /// Fitted gap constant (a lower estimate of the operator-norm constant).
    pub h: Option<f64>,
    /// `max |G theta0 + lambda0 theta0| / (1 + |lambda0|)`.
    pub residual: f64,
}

impl SpectralData {
    pub fn gap(&self) -> f64 {
        self.lambda1 - self.lambda0
    }

    pub fn eps_crit(&self) -> f64 {
        CRIT_FRACTION * self.gap()
    }

    pub fn regime(&self) -> Regime {
        let eps = self.eps_crit();
        if self.lambda0.abs() <= eps {
            Regime::Critical
        } else if self.lambda0 > eps {
            Regime::Subcritical
        } else {
            Regime::Supercritical
        }
    }

    /// Error unless the data is in `expected`.
    pub fn require(&self, expected: Regime) -> Result<()> {
        if self.regime() == expected {
            Ok(())
        } else {
            Err(Error::Regime {
                expected: expected.name(),
                lambda0: self.lambda0,
                eps: self.eps_crit(),
            })
        }
    }

    /// `\int g d mu0`.
    pub fn integrate(&self, g: &[f64]) -> f64 {
        g.iter().zip(&self.mu0).map(|(x, w)| x * w).sum()
    }

    /// `nu(f) = \int f d mu0 / \int d mu0`.
    pub fn nu(&self, f: &[f64]) -> f64 {
        self.integrate(f) / self.a
    }

    /// Rank-one projection `Pi g = theta0 \int g d mu0`.
    pub fn project(&self, g: &[f64]) -> Vec<f64> {
        let c = self.integrate(g);
        self.theta0.iter().map(|t| c * t).collect()
    }

    pub fn theta_at(&self, x: f64) -> f64 {
        self.grid.interpolate(&self.theta0, x)
    }

    pub fn theta_sup(&self) -> f64 {
        sup(&self.theta0)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpectralOptions {
    pub fit_h: bool,
    /// Time step for the propagations used by the H fit (default: generator default).
    pub dt: Option<f64>,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self { fit_h: true, dt: None }
    }
}

pub fn principal_eigentriple(gen: &GeneratorMatrix, model: &RateModel, grid: &Grid) -> Result<SpectralData> {
    principal_eigentriple_with(gen, model, grid, &SpectralOptions::default())
}

pub fn principal_eigentriple_with(
    gen: &GeneratorMatrix,
    model: &RateModel,
    grid: &Grid,
    options: &SpectralOptions,
) -> Result<SpectralData> {
    if grid != gen.grid() {
        return Err(Error::config("generator was built on a different grid"));
    }
    let raw = match symmetrize(gen) {
        Some(sym) => tridiagonal_eigentriple(&sym)?,
        None => dense_eigentriple(gen)?,
    };
    let RawTriple {
        top,
        second,
        second_imag,
        mut theta,
        mut mu,
    } = raw;
    let scale = top.abs().max(1.0);
    if second >= top - 1e-9 * scale {
        return Err(Error::Convergence {
            what: "principal_eigentriple",
            detail: format!("spectral gap not resolved: top {top:.6e}, second {second:.6e}"),
        });
    }
    let tmax = sup(&theta);
    for t in theta.iter_mut() {
        *t = (*t / tmax).max(0.0);
    }
    for m in mu.iter_mut() {
        *m = m.max(0.0);
    }
    let pairing: f64 = theta.iter().zip(&mu).map(|(t, m)| t * m).sum();
    if !(pairing > 0.0) {
        return Err(Error::numerical("left and right eigenvectors are orthogonal"));
    }
    for m in mu.iter_mut() {
        *m /= pairing;
    }
    let gt = gen.apply(&theta);
    let residual = gt
        .iter()
        .zip(&theta)
        .fold(0.0, |r, (g, t)| f64::max(r, (g - top * t).abs()))
        / (1.0 + top.abs());
    let mut data = SpectralData {
        grid: *grid,
        lambda0: -top,
        lambda1: -second,
        lambda1_imag: second_imag,
        theta0: theta,
        mu0: mu,
        a: 0.0,
        b: 0.0,
        h: None,
        residual,
    };
    let (a, b) = constants_ab(&data, model);
    data.a = a;
    data.b = b;
    if options.fit_h {
        data.h = Some(fit_gap_constant(gen, &data, options.dt)?);
    }
    Ok(data)
}

/// `lambda0` alone (Sturm bisection for symmetrizable tridiagonal
/// generators, a full eigenvalue solve otherwise).
pub fn principal_eigenvalue(gen: &GeneratorMatrix) -> Result<f64> {
    match symmetrize(gen) {
        Some(s) => Ok(-s.sym.eigenvalue_from_top(0)),
        None => {
            let eigs = gen.to_dense().complex_eigenvalues();
            let top = eigs.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
            if top.is_finite() {
                Ok(-top)
            } else {
                Err(Error::numerical("eigenvalue solve produced no finite value"))
            }
        }
    }
}

/// `A = \int d mu0`, `B = \int theta0^2 b d mu0`.
pub fn constants_ab(spectral: &SpectralData, model: &RateModel) -> (f64, f64) {
    let a = spectral.mu0.iter().sum();
    let b = spectral
        .theta0
        .iter()
        .zip(&spectral.mu0)
        .enumerate()
        .map(|(i, (t, m))| t * t * model.birth(spectral.grid.node(i)) * m)
        .sum();
    (a, b)
}

struct RawTriple {
    top: f64,
    second: f64,
    second_imag: f64,
    theta: Vec<f64>,
    mu: Vec<f64>,
}

/// Symmetric form `S = D^{1/2} G D^{-1/2}` of a tridiagonal generator whose
/// off-diagonal pairs are both positive or both zero; `log_d` holds `ln D`.
struct Symmetrized {
    sym: SymTridiag,
    log_d: Vec<f64>,
}

fn symmetrize(gen: &GeneratorMatrix) -> Option<Symmetrized> {
    let MotionBlock::Tridiagonal { lower, diag, upper } = gen.motion() else {
        return None;
    };
    let n = diag.len();
    let mut off = Vec::with_capacity(n - 1);
    let mut log_d = vec![0.0; n];
    for i in 0..n - 1 {
        let (l, u) = (lower[i], upper[i]);
        if l > 0.0 && u > 0.0 {
            off.push((l * u).sqrt());
            log_d[i + 1] = log_d[i] + (u / l).ln();
        } else if l == 0.0 && u == 0.0 {
            off.push(0.0);
            log_d[i + 1] = log_d[i];
        } else {
            return None;
        }
    }
    let d = (0..n).map(|i| diag[i] + gen.potential()[i]).collect();
    Some(Symmetrized {
        sym: SymTridiag { diag: d, off },
        log_d,
    })
}

fn tridiagonal_eigentriple(s: &Symmetrized) -> Result<RawTriple> {
    let top = s.sym.eigenvalue_from_top(0);
    let second = s.sym.eigenvalue_from_top(1);
    let phi = sym_inverse_iteration(&s.sym, top)?;
    let theta = phi.iter().zip(&s.log_d).map(|(p, l)| p * (-0.5 * l).exp()).collect();
    let mu = phi.iter().zip(&s.log_d).map(|(p, l)| p * (0.5 * l).exp()).collect();
    Ok(RawTriple {
        top,
        second,
        second_imag: 0.0,
        theta,
        mu,
    })
}

fn sym_inverse_iteration(sym: &SymTridiag, eig: f64) -> Result<Vec<f64>> {
    let n = sym.diag.len();
    let sigma = eig + 1e-10 * eig.abs().max(1.0);
    let diag: Vec<f64> = sym.diag.iter().map(|d| d - sigma).collect();
    let factor = TriFactor::new(&sym.off, &diag, &sym.off);
    let mut x = vec![1.0; n];
    for _ in 0..6 {
        factor.solve_in_place(&mut x);
        let m = sup(&x);
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::Convergence {
                what: "inverse iteration",
                detail: "iterate vanished or overflowed".into(),
            });
        }
        let sign = if x.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        for v in x.iter_mut() {
            *v *= sign / m;
        }
    }
    Ok(x)
}

fn dense_eigentriple(gen: &GeneratorMatrix) -> Result<RawTriple> {
    let g = gen.to_dense();
    let eigs = g.clone().complex_eigenvalues();
    let mut ev: Vec<(f64, f64)> = eigs.iter().map(|c| (c.re, c.im)).collect();
    ev.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.abs().total_cmp(&b.1.abs())));
    let (top, top_im) = ev[0];
    let scale = top.abs().max(1.0);
    if top_im.abs() > 1e-8 * scale {
        return Err(Error::numerical(format!("rightmost eigenvalue is not real: {top} + {top_im}i")));
    }
    let (second, second_im) = ev[1];
    let theta = dense_inverse_iteration(&g, top)?;
    let mu = dense_inverse_iteration(&g.transpose(), top)?;
    Ok(RawTriple {
        top,
        second,
        second_imag: second_im.abs(),
        theta,
        mu,
    })
}

fn dense_inverse_iteration(g: &DMatrix<f64>, eig: f64) -> Result<Vec<f64>> {
    let n = g.nrows();
    let sigma = eig + 1e-10 * eig.abs().max(1.0);
    let lu = (g - DMatrix::identity(n, n) * sigma).lu();
    let mut x = nalgebra::DVector::from_element(n, 1.0);
    for _ in 0..6 {
        if !lu.solve_mut(&mut x) {
            return Err(Error::numerical("singular shifted matrix in inverse iteration"));
        }
        let m = x.amax();
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::Convergence {
                what: "inverse iteration",
                detail: "iterate vanished or overflowed".into(),
            });
        }
        let sign = if x.sum() < 0.0 { -1.0 } else { 1.0 };
        x *= sign / m;
    }
    Ok(x.as_slice().to_vec())
}

/// Fits H as the largest `e^{gap t} |e^{lambda0 t} P_t g - Pi g| / |g|` over
/// three test functions and times up to `min(8 / gap, 30)`, ignoring values
/// below the discretization floor.
pub fn fit_gap_constant(gen: &GeneratorMatrix, spectral: &SpectralData, dt: Option<f64>) -> Result<f64> {
    let grid = gen.grid();
    let gap = spectral.gap();
    let (c, w) = (
        0.5 * (grid.x_min() + grid.x_max()),
        0.1 * (grid.x_max() - grid.x_min()),
    );
    let tests = [
        vec![1.0; grid.len()],
        grid.sample(|x| (-((x - c) / w).powi(2)).exp()),
        grid.sample(|x| (1.3 * (x - c) / w).sin() + 0.5 * (0.4 * (x - c) / w).cos()),
    ];
    let horizon = (8.0 / gap).min(30.0);
    let checkpoints = 40;
    let h_max = dt.unwrap_or_else(|| gen.default_step());
    let (per, h) = step_count(horizon / checkpoints as f64, h_max);
    let mut prop = Propagator::new(gen, h)?;
    let mut best: f64 = 0.0;
    for g in &tests {
        let norm = sup(g);
        let pi = spectral.project(g);
        let mut u = g.clone();
        let mut t = 0.0;
        for k in 0..=checkpoints {
            if k > 0 {
                for _ in 0..per {
                    prop.step(&mut u);
                }
                t += per as f64 * h;
            }
            let e = (spectral.lambda0 * t).exp();
            let dev = u
                .iter()
                .zip(&pi)
                .fold(0.0, |m, (ui, pi)| f64::max(m, (e * ui - pi).abs()))
                / norm;
            if dev < 1e-8 {
                break;
            }
            best = best.max((gap * t).exp() * dev);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GirsanovReport {
    /// Top eigenvalues of the discretized generator.
    pub generator: Vec<f64>,
    /// Top eigenvalues of `1/2 d^2 + V~`, `V~ = V + (a' - a^2)/2`.
    pub schrodinger: Vec<f64>,
    pub max_abs_diff: f64,
    /// Max relative deviation between `theta0` and `e^{l} psi0` where `psi0 > 1e-3`.
    pub ground_state_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the spectrum of the drifted diffusion generator with that of its
/// Schrödinger form on the same grid.
pub fn girsanov_crosscheck(
    dynamics: &DynamicsSpec,
    model: &RateModel,
    grid: &Grid,
    tolerance: f64,
) -> Result<GirsanovReport> {
    let Motion::Diffusion { a } = &dynamics.motion else {
        return Err(Error::NotApplicable(format!(
            "Girsanov cross-check needs a pure diffusion, got {}",
            dynamics.variant_name()
        )));
    };
    let gen = build_generator_with(
        model,
        dynamics,
        grid,
        &GeneratorOptions {
            edge_check: false,
            ..Default::default()
        },
    )?;
    let s = symmetrize(&gen).ok_or_else(|| Error::numerical("diffusion generator not symmetrizable"))?;
    let n = grid.len();
    let dx = grid.dx();
    let kappa = 0.5 / (dx * dx);
    let reflecting = grid.boundary() == Boundary::Reflecting;
    let diag: Vec<f64> = (0..n)
        .map(|i| {
            let x = grid.node(i);
            let ax = a.eval(x);
            let vt = model.potential(x) + 0.5 * (a.derivative(x) - ax * ax);
            let edge = reflecting && (i == 0 || i + 1 == n);
            vt - if edge { kappa } else { 2.0 * kappa }
        })
        .collect();
    let schr = SymTridiag {
        diag,
        off: vec![kappa; n - 1],
    };
    let k = 3.min(n);
    let generator: Vec<f64> = (0..k).map(|j| s.sym.eigenvalue_from_top(j)).collect();
    let schrodinger: Vec<f64> = (0..k).map(|j| schr.eigenvalue_from_top(j)).collect();
    let max_abs_diff = generator
        .iter()
        .zip(&schrodinger)
        .fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()));

    let theta = tridiagonal_eigentriple(&s)?.theta;
    let psi = sym_inverse_iteration(&schr, schrodinger[0])?;
    let ell = ell_and_rho(dynamics, grid)?.ell;
    let lifted: Vec<f64> = psi.iter().zip(&ell).map(|(p, l)| p * l.exp()).collect();
    let psi_max = sup(&psi);
    let imax = (0..n).max_by(|&i, &j| theta[i].total_cmp(&theta[j])).unwrap_or(0);
    let (tn, ln) = (theta[imax], lifted[imax]);
    let mut ground_state_rel_err: f64 = 0.0;
    for i in 0..n {
        if psi[i] > 1e-3 * psi_max {
            let r = (lifted[i] / ln) / (theta[i] / tn) - 1.0;
            ground_state_rel_err = ground_state_rel_err.max(r.abs());
        }
    }
    Ok(GirsanovReport {
        passed: max_abs_diff <= tolerance,
        generator,
        schrodinger,
        max_abs_diff,
        ground_state_rel_err,
        tolerance,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeDecayReport {
    pub t: f64,
    pub edge_max: f64,
    pub interior_max: f64,
    pub ratio: f64,
    pub passed: bool,
}

/// Size of `P_t 1` on the outer 5% of nodes relative to its interior maximum.
pub fn hp4_edge_decay(gen: &GeneratorMatrix, t: f64) -> Result<EdgeDecayReport> {
    if !(t > 0.0) {
        return Err(Error::config(format!("edge decay needs t > 0, got {t}")));
    }
    let n = gen.len();
    let u = super::evolve_p(&vec![1.0; n], t, gen)?;
    let k = ((0.05 * n as f64).ceil() as usize).max(1);
    let edge_max = u[..k].iter().chain(&u[n - k..]).fold(0.0, |m: f64, v| m.max(v.abs()));
    let interior_max = u[k..n - k].iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let ratio = if interior_max > 0.0 { edge_max / interior_max } else { f64::INFINITY };
    Ok(EdgeDecayReport {
        t,
        edge_max,
        interior_max,
        ratio,
        passed: ratio < 1e-3,
    })
}
