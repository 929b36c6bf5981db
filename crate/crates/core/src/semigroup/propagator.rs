//! Crank–Nicolson time stepping for `du/dt = G u (+ source)` and for the
//! Riccati-type equations `du/dt = G u - b u^2`.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use super::generator::{GeneratorMatrix, MotionBlock};
use super::tridiag::{self, TriFactor};
use crate::error::{Error, Result};

const FIXED_POINT_TOL: f64 = 1e-14;
const FIXED_POINT_MAX: usize = 200;

enum Factor {
    Tri {
        factor: TriFactor,
        lower: Vec<f64>,
        diag: Vec<f64>,
        upper: Vec<f64>,
    },
    Dense(LU<f64, Dyn, Dyn>),
}

/// One fixed step size `h`; the implicit matrix `I - h/2 G` is factorized once.
pub struct Propagator<'g> {
    gen: &'g GeneratorMatrix,
    h: f64,
    factor: Factor,
    scratch: Vec<f64>,
}

impl<'g> Propagator<'g> {
    pub fn new(gen: &'g GeneratorMatrix, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::config(format!("time step must be positive, got {h}")));
        }
        let n = gen.len();
        let half = 0.5 * h;
        let factor = match gen.motion() {
            MotionBlock::Tridiagonal { lower, diag, upper } => {
                let lower: Vec<f64> = lower.iter().map(|v| -half * v).collect();
                let upper: Vec<f64> = upper.iter().map(|v| -half * v).collect();
                let diag: Vec<f64> = (0..n).map(|i| 1.0 - half * (diag[i] + gen.potential()[i])).collect();
                let factor = TriFactor::new(&lower, &diag, &upper);
                if !(factor.min_abs_pivot() > 0.0) {
                    return Err(Error::numerical("singular Crank-Nicolson matrix"));
                }
                Factor::Tri {
                    factor,
                    lower,
                    diag,
                    upper,
                }
            }
            MotionBlock::Dense(_) => {
                let m = DMatrix::identity(n, n) - gen.to_dense() * half;
                Factor::Dense(m.lu())
            }
        };
        Ok(Self {
            gen,
            h,
            factor,
            scratch: vec![0.0; n],
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn generator(&self) -> &GeneratorMatrix {
        self.gen
    }

    /// `x <- (I - h/2 G)^{-1} x`.
    pub fn solve(&self, x: &mut [f64]) {
        match &self.factor {
            Factor::Tri { factor, .. } => factor.solve_in_place(x),
            Factor::Dense(lu) => {
                let mut v = DVector::from_column_slice(x);
                lu.solve_mut(&mut v);
                x.copy_from_slice(v.as_slice());
            }
        }
    }

    /// `out = (I + h/2 G) x`.
    pub fn explicit_half(&self, x: &[f64], out: &mut [f64]) {
        self.gen.apply_into(x, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi + 0.5 * self.h * *o;
        }
    }

    pub fn step(&mut self, u: &mut [f64]) {
        let mut tmp = std::mem::take(&mut self.scratch);
        self.explicit_half(u, &mut tmp);
        self.solve(&mut tmp);
        u.copy_from_slice(&tmp);
        self.scratch = tmp;
    }

    /// Crank–Nicolson step with a source already averaged over the step.
    pub fn step_with_source(&mut self, u: &mut [f64], source: &[f64]) {
        let mut tmp = std::mem::take(&mut self.scratch);
        self.explicit_half(u, &mut tmp);
        for (t, s) in tmp.iter_mut().zip(source) {
            *t += self.h * s;
        }
        self.solve(&mut tmp);
        u.copy_from_slice(&tmp);
        self.scratch = tmp;
    }

    /// Implicit Euler step of length `h/2` (same matrix).
    pub fn backward_half_step(&self, u: &mut [f64]) {
        self.solve(u);
    }

    /// Linearly implicit step of `du/dt = G u - b u^2`:
    /// `(u' - u)/h = G (u + u')/2 - b u u'`.
    pub fn riccati_step(&mut self, u: &mut [f64], b: &[f64]) {
        let n = u.len();
        let mut rhs = std::mem::take(&mut self.scratch);
        self.explicit_half(u, &mut rhs);
        match &self.factor {
            Factor::Tri {
                lower, diag, upper, ..
            } => {
                let d: Vec<f64> = (0..n).map(|i| diag[i] + self.h * b[i] * u[i]).collect();
                tridiag::solve(lower, &d, upper, &mut rhs);
                u.copy_from_slice(&rhs);
            }
            Factor::Dense(_) => {
                let mut next = u.to_vec();
                let mut work = vec![0.0; n];
                for _ in 0..FIXED_POINT_MAX {
                    for i in 0..n {
                        work[i] = rhs[i] - self.h * b[i] * u[i] * next[i];
                    }
                    self.solve(&mut work);
                    let change = max_diff(&work, &next);
                    let scale = sup(&work).max(1e-300);
                    next.copy_from_slice(&work);
                    if change <= FIXED_POINT_TOL * scale {
                        break;
                    }
                }
                u.copy_from_slice(&next);
            }
        }
        self.scratch = rhs;
    }

    /// Complex version of [`Self::riccati_step`] on (real, imaginary) parts.
    pub fn riccati_step_complex(&mut self, re: &mut [f64], im: &mut [f64], b: &[f64]) {
        let n = re.len();
        let mut rr = vec![0.0; n];
        let mut ri = vec![0.0; n];
        self.explicit_half(re, &mut rr);
        self.explicit_half(im, &mut ri);
        let (mut xr, mut xi) = (re.to_vec(), im.to_vec());
        let (mut wr, mut wi) = (vec![0.0; n], vec![0.0; n]);
        for _ in 0..FIXED_POINT_MAX {
            for i in 0..n {
                // b * u_old * u_next, complex product.
                let pr = re[i] * xr[i] - im[i] * xi[i];
                let pi = re[i] * xi[i] + im[i] * xr[i];
                wr[i] = rr[i] - self.h * b[i] * pr;
                wi[i] = ri[i] - self.h * b[i] * pi;
            }
            self.solve(&mut wr);
            self.solve(&mut wi);
            let change = max_diff(&wr, &xr).max(max_diff(&wi, &xi));
            let scale = sup(&wr).max(sup(&wi)).max(1e-300);
            xr.copy_from_slice(&wr);
            xi.copy_from_slice(&wi);
            if change <= FIXED_POINT_TOL * scale {
                break;
            }
        }
        re.copy_from_slice(&xr);
        im.copy_from_slice(&xi);
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub(crate) fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Step count and step size covering `[0, t]` with steps at most `h_max`.
pub fn step_count(t: f64, h_max: f64) -> (usize, f64) {
    if t <= 0.0 {
        return (0, h_max);
    }
    let n = (t / h_max - 1e-9).ceil().max(1.0) as usize;
    (n, t / n as f64)
}

/// `e^{tG} g` by Crank–Nicolson with steps at most `h_max`; with `rannacher`
/// the first two steps are replaced by four implicit Euler half-steps.
pub fn evolve_with(gen: &GeneratorMatrix, g: &[f64], t: f64, h_max: f64, rannacher: bool) -> Result<Vec<f64>> {
    if t < 0.0 {
        return Err(Error::config(format!("negative evolution time {t}")));
    }
    let mut u = g.to_vec();
    let (n, h) = step_count(t, h_max);
    if n == 0 {
        return Ok(u);
    }
    let mut p = Propagator::new(gen, h)?;
    let mut k = 0;
    if rannacher {
        while k < n.min(2) {
            p.backward_half_step(&mut u);
            p.backward_half_step(&mut u);
            k += 1;
        }
    }
    while k < n {
        p.step(&mut u);
        k += 1;
    }
    Ok(u)
}
