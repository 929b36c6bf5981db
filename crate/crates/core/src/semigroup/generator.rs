use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid};
use crate::model::{antiderivative_from_zero, DynamicsSpec, JumpKernel, Motion, RateModel};

/// Probabilistic (motion + jump) part of a discretized generator.
#[derive(Debug, Clone)]
pub enum MotionBlock {
    /// `lower[i] = G[i+1][i]`, `upper[i] = G[i][i+1]`.
    Tridiagonal {
        lower: Vec<f64>,
        diag: Vec<f64>,
        upper: Vec<f64>,
    },
    Dense(DMatrix<f64>),
}

impl MotionBlock {
    fn len(&self) -> usize {
        match self {
            MotionBlock::Tridiagonal { diag, .. } => diag.len(),
            MotionBlock::Dense(m) => m.nrows(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GeneratorOptions {
    /// Enforce `V(edge) <= -5 / report_horizon` on absorbing grids.
    pub edge_check: bool,
    pub report_horizon: f64,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        Self {
            edge_check: true,
            report_horizon: 1.0,
        }
    }
}

/// Grid generator `G = M + diag(potential)`: `M` is the motion/jump part,
/// `potential` is `V = b - d` for `P_t` or `-(b + d)` for `Q_t`.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    grid: Grid,
    motion: MotionBlock,
    potential: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn from_parts(grid: Grid, motion: MotionBlock, potential: Vec<f64>) -> Result<Self> {
        if motion.len() != grid.len() || potential.len() != grid.len() {
            return Err(Error::config("generator blocks do not match the grid size"));
        }
        Ok(Self {
            grid,
            motion,
            potential,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn motion(&self) -> &MotionBlock {
        &self.motion
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn is_tridiagonal(&self) -> bool {
        matches!(self.motion, MotionBlock::Tridiagonal { .. })
    }

    /// Same motion, different diagonal potential.
    pub fn with_potential(&self, potential: Vec<f64>) -> Self {
        assert_eq!(potential.len(), self.len());
        Self {
            grid: self.grid,
            motion: self.motion.clone(),
            potential,
        }
    }

    /// `G + c I`.
    pub fn shifted(&self, c: f64) -> Self {
        self.with_potential(self.potential.iter().map(|v| v + c).collect())
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.potential[i]
            + match &self.motion {
                MotionBlock::Tridiagonal { diag, .. } => diag[i],
                MotionBlock::Dense(m) => m[(i, i)],
            }
    }

    pub fn max_abs_diag(&self) -> f64 {
        (0..self.len()).fold(0.0, |m, i| m.max(self.diag(i).abs()))
    }

    /// Largest Crank–Nicolson step with a nonnegative explicit half (`h |G_ii| <= 2`).
    pub fn monotone_step(&self) -> f64 {
        let m = self.max_abs_diag();
        if m == 0.0 {
            f64::INFINITY
        } else {
            2.0 / m
        }
    }

    /// Default time step for propagators: monotone, capped at 0.01.
    pub fn default_step(&self) -> f64 {
        (0.95 * self.monotone_step()).min(0.01)
    }

    /// `M 1` (row sums of the motion part).
    pub fn motion_row_sums(&self) -> Vec<f64> {
        let ones = vec![1.0; self.len()];
        let mut out = vec![0.0; self.len()];
        self.apply_motion(&ones, &mut out);
        out
    }

    pub fn apply_motion(&self, x: &[f64], out: &mut [f64]) {
        match &self.motion {
            MotionBlock::Tridiagonal { lower, diag, upper } => {
                let n = diag.len();
                for i in 0..n {
                    let mut s = diag[i] * x[i];
                    if i > 0 {
                        s += lower[i - 1] * x[i - 1];
                    }
                    if i + 1 < n {
                        s += upper[i] * x[i + 1];
                    }
                    out[i] = s;
                }
            }
            MotionBlock::Dense(m) => {
                let v = m * nalgebra::DVector::from_column_slice(x);
                out.copy_from_slice(v.as_slice());
            }
        }
    }

    /// `out = G x`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.apply_motion(x, out);
        for ((o, v), xi) in out.iter_mut().zip(&self.potential).zip(x) {
            *o += v * xi;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.apply_into(x, &mut out);
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = match &self.motion {
            MotionBlock::Dense(m) => m.clone(),
            MotionBlock::Tridiagonal { lower, diag, upper } => {
                let mut m = DMatrix::zeros(n, n);
                for i in 0..n {
                    m[(i, i)] = diag[i];
                    if i + 1 < n {
                        m[(i, i + 1)] = upper[i];
                        m[(i + 1, i)] = lower[i];
                    }
                }
                m
            }
        };
        for i in 0..n {
            m[(i, i)] += self.potential[i];
        }
        m
    }

    /// Smallest off-diagonal entry of the motion part (nonnegative for a generator).
    pub fn min_offdiag(&self) -> f64 {
        match &self.motion {
            MotionBlock::Tridiagonal { lower, upper, .. } => lower
                .iter()
                .chain(upper)
                .fold(f64::INFINITY, |m, &v| m.min(v)),
            MotionBlock::Dense(m) => {
                let n = m.nrows();
                let mut lo = f64::INFINITY;
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            lo = lo.min(m[(i, j)]);
                        }
                    }
                }
                lo
            }
        }
    }
}

/// Generator of `P_t` (potential `V = b - d`).
pub fn build_generator(model: &RateModel, dynamics: &DynamicsSpec, grid: &Grid) -> Result<GeneratorMatrix> {
    build_generator_with(model, dynamics, grid, &GeneratorOptions::default())
}

pub fn build_generator_with(
    model: &RateModel,
    dynamics: &DynamicsSpec,
    grid: &Grid,
    options: &GeneratorOptions,
) -> Result<GeneratorMatrix> {
    if options.edge_check && grid.boundary() == Boundary::Absorbing {
        check_edges(model, grid, options.report_horizon)?;
    }
    let motion = motion_block(dynamics, grid);
    let potential = grid.sample(|x| model.potential(x));
    GeneratorMatrix::from_parts(*grid, motion, potential)
}

/// Generator of `Q_t` (potential `-(b + d)`).
pub fn build_q_generator(model: &RateModel, dynamics: &DynamicsSpec, grid: &Grid) -> Result<GeneratorMatrix> {
    let motion = motion_block(dynamics, grid);
    let potential = grid.sample(|x| -model.total_rate(x));
    GeneratorMatrix::from_parts(*grid, motion, potential)
}

fn check_edges(model: &RateModel, grid: &Grid, horizon: f64) -> Result<()> {
    let threshold = -5.0 / horizon;
    let ok = |r: f64| model.potential(-r) <= threshold && model.potential(r) <= threshold;
    let (vl, vr) = (model.potential(grid.x_min()), model.potential(grid.x_max()));
    if vl <= threshold && vr <= threshold {
        return Ok(());
    }
    let mut r = grid.x_min().abs().max(grid.x_max().abs()).max(1.0);
    let mut suggestion = None;
    for _ in 0..200 {
        r *= 1.05;
        if ok(r) {
            suggestion = Some(r);
            break;
        }
    }
    let hint = match suggestion {
        Some(r) => format!("try x_max >= {:.2} (and x_min <= {:.2})", r, -r),
        None => "V does not reach the killing threshold; use a reflecting grid".to_string(),
    };
    Err(Error::config(format!(
        "grid too narrow: V(x_min) = {vl:.3}, V(x_max) = {vr:.3}, need <= {threshold:.3}; {hint}"
    )))
}

fn motion_block(dynamics: &DynamicsSpec, grid: &Grid) -> MotionBlock {
    let n = grid.len();
    match &dynamics.motion {
        Motion::Frozen => MotionBlock::Tridiagonal {
            lower: vec![0.0; n - 1],
            diag: vec![0.0; n],
            upper: vec![0.0; n - 1],
        },
        Motion::Diffusion { a } => diffusion_block(a, grid),
        Motion::DiffusionWithJumps { a, jumps } => {
            let mut m = tridiagonal_to_dense(diffusion_block(a, grid));
            add_jump_block(&mut m, jumps, grid);
            MotionBlock::Dense(m)
        }
        Motion::DriftedJump { jumps } => {
            let mut m = tridiagonal_to_dense(unit_drift_block(grid));
            add_jump_block(&mut m, jumps, grid);
            MotionBlock::Dense(m)
        }
    }
}

fn tridiagonal_to_dense(block: MotionBlock) -> DMatrix<f64> {
    match block {
        MotionBlock::Dense(m) => m,
        MotionBlock::Tridiagonal { lower, diag, upper } => {
            let n = diag.len();
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                m[(i, i)] = diag[i];
                if i + 1 < n {
                    m[(i, i + 1)] = upper[i];
                    m[(i + 1, i)] = lower[i];
                }
            }
            m
        }
    }
}

/// `1/2 f'' - a f'` by exponential fitting: the rate from node i to i+1 is
/// `k exp(-(l_{i+1} - l_i))`, the reverse rate `k exp(l_{i+1} - l_i)`, with
/// `k = 1/(2 dx^2)` and `l` the exact antiderivative of `a`.
fn diffusion_block(a: &crate::model::Curve, grid: &Grid) -> MotionBlock {
    let n = grid.len();
    let dx = grid.dx();
    let kappa = 0.5 / (dx * dx);
    let mut ext = Vec::with_capacity(n + 2);
    ext.push(grid.x_min() - dx);
    ext.extend(grid.nodes());
    ext.push(grid.x_max() + dx);
    let ell = antiderivative_from_zero(a, &ext);
    // up[k]: rate ext[k] -> ext[k+1]; down[k]: rate ext[k+1] -> ext[k].
    let up: Vec<f64> = (0..n + 1).map(|k| kappa * (-(ell[k + 1] - ell[k])).exp()).collect();
    let down: Vec<f64> = (0..n + 1).map(|k| kappa * (ell[k + 1] - ell[k]).exp()).collect();
    let upper: Vec<f64> = (0..n - 1).map(|i| up[i + 1]).collect();
    let lower: Vec<f64> = (0..n - 1).map(|i| down[i + 1]).collect();
    let reflecting = grid.boundary() == Boundary::Reflecting;
    let diag: Vec<f64> = (0..n)
        .map(|i| {
            let to_left = if i == 0 && reflecting { 0.0 } else { down[i] };
            let to_right = if i + 1 == n && reflecting { 0.0 } else { up[i + 1] };
            -(to_left + to_right)
        })
        .collect();
    MotionBlock::Tridiagonal { lower, diag, upper }
}

/// `+f'` by upwind forward differences.
fn unit_drift_block(grid: &Grid) -> MotionBlock {
    let n = grid.len();
    let r = 1.0 / grid.dx();
    let reflecting = grid.boundary() == Boundary::Reflecting;
    let upper = vec![r; n - 1];
    let lower = vec![0.0; n - 1];
    let diag = (0..n)
        .map(|i| if i + 1 == n && reflecting { 0.0 } else { -r })
        .collect();
    MotionBlock::Tridiagonal { lower, diag, upper }
}

/// Adds `L1 f(y) = \int (f(z) - f(y)) R(y, dz)`: the kernel mass of each grid
/// cell is taken from the exact landing probabilities, then the row is
/// rescaled so the discrete total mass equals `R~(y)`.
fn add_jump_block(m: &mut DMatrix<f64>, jumps: &JumpKernel, grid: &Grid) {
    let n = grid.len();
    let dx = grid.dx();
    let mut row = vec![0.0; n];
    for i in 0..n {
        let y = grid.node(i);
        let rate = jumps.total_mass(y);
        if rate == 0.0 {
            continue;
        }
        let mut total = 0.0;
        for (j, r) in row.iter_mut().enumerate() {
            let lo = if j == 0 { f64::NEG_INFINITY } else { grid.node(j) - 0.5 * dx };
            let hi = if j + 1 == n { f64::INFINITY } else { grid.node(j) + 0.5 * dx };
            let (lo, hi) = match grid.boundary() {
                Boundary::Reflecting => (lo, hi),
                Boundary::Absorbing => (
                    lo.max(grid.x_min() - 0.5 * dx),
                    hi.min(grid.x_max() + 0.5 * dx),
                ),
            };
            *r = jumps.landing_probability(y, lo, hi);
            total += *r;
        }
        if total <= 0.0 {
            continue;
        }
        for j in 0..n {
            let p = rate * row[j] / total;
            if j != i {
                m[(i, j)] += p;
                m[(i, i)] -= p;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Curve;

    fn reflecting(n: usize) -> Grid {
        Grid::new(-3.0, 3.0, n, Boundary::Reflecting).unwrap()
    }

    #[test]
    fn conservative_rows_sum_to_zero() {
        let m = RateModel::constant(1.0, 1.0);
        for d in [
            DynamicsSpec::brownian(),
            DynamicsSpec::diffusion(Curve::polynomial(&[0.0, 1.0])),
            DynamicsSpec::diffusion_with_jumps(Curve::zero(), JumpKernel::gaussian(1.0, 0.5)),
            DynamicsSpec::drifted_jump(JumpKernel::uniform(2.0, 1.0)),
        ] {
            let g = build_generator(&m, &d, &reflecting(61)).unwrap();
            for s in g.motion_row_sums() {
                assert!(s.abs() < 1e-9, "{} row sum {s}", d.variant_name());
            }
            assert!(g.min_offdiag() >= 0.0);
        }
    }

    #[test]
    fn jump_block_kills_constants() {
        let grid = Grid::new(-10.0, 10.0, 201, Boundary::Absorbing).unwrap();
        let d = DynamicsSpec::drifted_jump(JumpKernel::gaussian(1.5, 0.7));
        let mut m = DMatrix::zeros(201, 201);
        if let Some(k) = d.jumps() {
            add_jump_block(&mut m, k, &grid);
        }
        let v = &m * nalgebra::DVector::from_element(201, 1.0);
        assert!(v.amax() < 1e-12);
        // Discrete total mass equals the declared rate.
        for i in 0..201 {
            let off: f64 = (0..201).filter(|&j| j != i).map(|j| m[(i, j)]).sum();
            let stay = 1.5 - off;
            assert!(stay >= -1e-12 && stay < 1.5);
        }
    }

    #[test]
    fn edge_precondition() {
        let m = RateModel::new(Curve::constant(1.0), Curve::polynomial(&[0.0, 0.0, 1.0]), 1.0).unwrap();
        let narrow = Grid::new(-1.0, 1.0, 21, Boundary::Absorbing).unwrap();
        let err = build_generator(&m, &DynamicsSpec::brownian(), &narrow).unwrap_err();
        assert!(err.to_string().contains("x_max >="), "{err}");
        let wide = Grid::new(-8.0, 8.0, 81, Boundary::Absorbing).unwrap();
        assert!(build_generator(&m, &DynamicsSpec::brownian(), &wide).is_ok());
    }

    #[test]
    fn second_order_consistency() {
        // Apply to a smooth function away from the edges and compare with the
        // continuous generator 1/2 f'' - a f' + V f.
        let grid = Grid::new(-4.0, 4.0, 801, Boundary::Reflecting).unwrap();
        let a = Curve::polynomial(&[0.2, 1.0]);
        let m = RateModel::constant(0.0, 0.0);
        let g = build_generator(&m, &DynamicsSpec::diffusion(a.clone()), &grid).unwrap();
        let f = grid.sample(|x| (0.7 * x).sin());
        let gf = g.apply(&f);
        for i in (100..700).step_by(50) {
            let x = grid.node(i);
            let exact = -0.5 * 0.49 * (0.7 * x).sin() - a.eval(x) * 0.7 * (0.7 * x).cos();
            assert!((gf[i] - exact).abs() < 1e-3, "x={x}: {} vs {exact}", gf[i]);
        }
    }
}
