//! Birth/death rate models, trait dynamics specifications and the
//! grid-based hypothesis scans.

mod curve;
pub mod quadrature;
mod validate;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

pub use curve::{Curve, MonotoneCubic, TableSpec};
pub use validate::{validate_hypotheses, HypothesisCheck, ValidationReport};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Declared linear lower bound `d(x) >= slope |x| - offset` for `|x| >= radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearGrowth {
    pub slope: f64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub radius: f64,
}

/// Birth rate `b`, death rate `d` and the declared birth ceiling `b_star`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    pub b: Curve,
    pub d: Curve,
    pub b_star: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub death_growth: Option<LinearGrowth>,
}

impl RateModel {
    pub fn new(b: Curve, d: Curve, b_star: f64) -> Result<Self> {
        if !(b_star.is_finite() && b_star > 0.0) {
            return Err(Error::config(format!("b_star must be finite and positive, got {b_star}")));
        }
        Ok(Self {
            b,
            d,
            b_star,
            death_growth: None,
        })
    }

    /// Constant rates, the workhorse of the closed-form oracles.
    pub fn constant(b: f64, d: f64) -> Self {
        Self {
            b: Curve::constant(b),
            d: Curve::constant(d),
            b_star: b.max(1e-300),
            death_growth: None,
        }
    }

    pub fn with_death_growth(mut self, growth: LinearGrowth) -> Self {
        self.death_growth = Some(growth);
        self
    }

    #[inline]
    pub fn birth(&self, x: f64) -> f64 {
        self.b.eval(x)
    }

    #[inline]
    pub fn death(&self, x: f64) -> f64 {
        self.d.eval(x)
    }

    /// Growth potential `V = b - d`.
    #[inline]
    pub fn potential(&self, x: f64) -> f64 {
        self.b.eval(x) - self.d.eval(x)
    }

    /// Killing rate `b + d` of the survival semigroup.
    #[inline]
    pub fn total_rate(&self, x: f64) -> f64 {
        self.b.eval(x) + self.d.eval(x)
    }
}

/// Free-function form of [`RateModel::potential`].
pub fn potential(model: &RateModel, x: f64) -> f64 {
    model.potential(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum JumpShape {
    /// Jump target uniform on `(y - half_width, y + half_width)`.
    Uniform { half_width: f64 },
    /// Jump target normal with mean `y`.
    Gaussian { sd: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityFloor {
    pub epsilon: f64,
    pub k0: f64,
}

/// Jump measure `R(y, dz) = rate(y) * k(z - y) dz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpKernel {
    pub rate: Curve,
    /// Declared `sup_y R~(y)`; used for the thinning bound.
    pub rate_bound: f64,
    #[serde(flatten)]
    pub shape: JumpShape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_floor: Option<DensityFloor>,
}

impl JumpKernel {
    pub fn uniform(rate: f64, half_width: f64) -> Self {
        Self {
            rate: Curve::constant(rate),
            rate_bound: rate,
            shape: JumpShape::Uniform { half_width },
            density_floor: None,
        }
    }

    pub fn gaussian(rate: f64, sd: f64) -> Self {
        Self {
            rate: Curve::constant(rate),
            rate_bound: rate,
            shape: JumpShape::Gaussian { sd },
            density_floor: None,
        }
    }

    pub fn with_density_floor(mut self, epsilon: f64, k0: f64) -> Self {
        self.density_floor = Some(DensityFloor { epsilon, k0 });
        self
    }

    #[inline]
    pub fn total_mass(&self, y: f64) -> f64 {
        self.rate.eval(y)
    }

    /// Normalized jump-displacement density.
    pub fn displacement_density(&self, dz: f64) -> f64 {
        match self.shape {
            JumpShape::Uniform { half_width } => {
                if dz.abs() < half_width {
                    0.5 / half_width
                } else {
                    0.0
                }
            }
            JumpShape::Gaussian { sd } => {
                let z = dz / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            }
        }
    }

    /// Density of `R(y, dz)` with respect to Lebesgue measure.
    pub fn density(&self, y: f64, z: f64) -> f64 {
        self.total_mass(y) * self.displacement_density(z - y)
    }

    /// Probability that a normalized jump from `y` lands in `[lo, hi]`.
    pub fn landing_probability(&self, y: f64, lo: f64, hi: f64) -> f64 {
        match self.shape {
            JumpShape::Uniform { half_width } => {
                let a = lo.max(y - half_width);
                let b = hi.min(y + half_width);
                ((b - a) / (2.0 * half_width)).max(0.0)
            }
            JumpShape::Gaussian { sd } => {
                let s = sd * std::f64::consts::SQRT_2;
                0.5 * (erf((hi - y) / s) - erf((lo - y) / s))
            }
        }
    }

    /// `E |z - y|^4` under the normalized kernel.
    pub fn displacement_fourth_moment(&self) -> f64 {
        match self.shape {
            JumpShape::Uniform { half_width } => half_width.powi(4) / 5.0,
            JumpShape::Gaussian { sd } => 3.0 * sd.powi(4),
        }
    }

    /// `sup_y \int (1 + |z - y|^4) R(y, dz)` from the declared rate bound.
    pub fn fourth_moment_bound(&self) -> f64 {
        self.rate_bound * (1.0 + self.displacement_fourth_moment())
    }

    pub fn sample_target<R: Rng + ?Sized>(&self, y: f64, rng: &mut R) -> f64 {
        match self.shape {
            JumpShape::Uniform { half_width } => y + half_width * (2.0 * rng.random::<f64>() - 1.0),
            JumpShape::Gaussian { sd } => {
                let n: f64 = StandardNormal.sample(rng);
                y + sd * n
            }
        }
    }
}

/// Declared constants for the drift and jump hypotheses. Missing entries are
/// fitted on the scan grid and reported as such.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HypothesisConstants {
    /// `C` in `|a(x)| <= C (|x| + 1)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ha_c: Option<f64>,
    /// `beta` in `|l(x)| <= gamma + beta |x|`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ha_beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ha_gamma: Option<f64>,
    /// Upper bound for `a' - a^2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ha3_bound: Option<f64>,
    /// Upper bound for the jump fourth-moment functional.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hj_moment_bound: Option<f64>,
}

/// Single-particle motion between branching events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Motion {
    /// `dX = dB - a(X) dt`
    Diffusion { a: Curve },
    /// Diffusion plus jumps with kernel `R`.
    DiffusionWithJumps {
        a: Curve,
        #[serde(rename = "R", alias = "jumps")]
        jumps: JumpKernel,
    },
    /// Unit drift to the right plus jumps with kernel `R`.
    DriftedJump {
        #[serde(rename = "R", alias = "jumps")]
        jumps: JumpKernel,
    },
    /// No motion: traits stay put. Used by the constant-rate oracle models.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSpec {
    #[serde(flatten)]
    pub motion: Motion,
    #[serde(default)]
    pub hypothesis_constants: HypothesisConstants,
}

impl DynamicsSpec {
    pub fn diffusion(a: Curve) -> Self {
        Motion::Diffusion { a }.into()
    }

    pub fn brownian() -> Self {
        Self::diffusion(Curve::zero())
    }

    pub fn diffusion_with_jumps(a: Curve, jumps: JumpKernel) -> Self {
        Motion::DiffusionWithJumps { a, jumps }.into()
    }

    pub fn drifted_jump(jumps: JumpKernel) -> Self {
        Motion::DriftedJump { jumps }.into()
    }

    pub fn frozen() -> Self {
        Motion::Frozen.into()
    }

    pub fn drift(&self) -> Option<&Curve> {
        match &self.motion {
            Motion::Diffusion { a } | Motion::DiffusionWithJumps { a, .. } => Some(a),
            _ => None,
        }
    }

    pub fn jumps(&self) -> Option<&JumpKernel> {
        match &self.motion {
            Motion::DiffusionWithJumps { jumps, .. } | Motion::DriftedJump { jumps } => Some(jumps),
            _ => None,
        }
    }

    pub fn has_diffusion(&self) -> bool {
        matches!(self.motion, Motion::Diffusion { .. } | Motion::DiffusionWithJumps { .. })
    }

    pub fn variant_name(&self) -> &'static str {
        match self.motion {
            Motion::Diffusion { .. } => "diffusion",
            Motion::DiffusionWithJumps { .. } => "diffusion_with_jumps",
            Motion::DriftedJump { .. } => "drifted_jump",
            Motion::Frozen => "frozen",
        }
    }
}

impl From<Motion> for DynamicsSpec {
    fn from(motion: Motion) -> Self {
        Self {
            motion,
            hypothesis_constants: HypothesisConstants::default(),
        }
    }
}

/// `l(x) = \int_0^x a` at the grid nodes and the speed-measure weights
/// `rho_i = exp(-2 l(x_i)) dx`.
#[derive(Debug, Clone)]
pub struct SpeedMeasure {
    pub ell: Vec<f64>,
    pub rho: Vec<f64>,
}

pub fn ell_and_rho(dynamics: &DynamicsSpec, grid: &Grid) -> Result<SpeedMeasure> {
    let a = dynamics.drift().ok_or_else(|| {
        Error::NotApplicable(format!(
            "speed measure needs a drift curve; variant is {}",
            dynamics.variant_name()
        ))
    })?;
    let ell = antiderivative_from_zero(a, &grid.nodes());
    let dx = grid.dx();
    let rho = ell.iter().map(|l| (-2.0 * l).exp() * dx).collect();
    Ok(SpeedMeasure { ell, rho })
}

/// `\int_0^{x_i} f` at sorted points, accumulated cell by cell outward from 0.
pub fn antiderivative_from_zero(f: &Curve, xs: &[f64]) -> Vec<f64> {
    const CELL_TOL: f64 = 1e-10;
    let integrand = |x: f64| f.eval(x);
    let mut out = vec![0.0; xs.len()];
    let split = xs.partition_point(|&x| x < 0.0);
    let mut acc = 0.0;
    let mut prev = 0.0;
    for i in split..xs.len() {
        acc += quadrature::adaptive_gauss(&integrand, prev, xs[i], CELL_TOL);
        out[i] = acc;
        prev = xs[i];
    }
    acc = 0.0;
    prev = 0.0;
    for i in (0..split).rev() {
        acc -= quadrature::adaptive_gauss(&integrand, xs[i], prev, CELL_TOL);
        out[i] = acc;
        prev = xs[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;
    use approx::assert_abs_diff_eq;

    /// Composite Simpson on a fine mesh: an integrator independent of the
    /// Gauss rule used by `antiderivative_from_zero`.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = if n % 2 == 1 { n + 1 } else { n };
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + k as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn potential_examples() {
        let m = RateModel::new(
            Curve::Lorentzian {
                base: 0.0,
                height: 1.0,
                center: 0.0,
                width: 1.0,
            },
            Curve::abs_polynomial(&[0.1, 1.0]),
            1.0,
        )
        .unwrap();
        assert_abs_diff_eq!(m.potential(0.0), 0.9, epsilon = 1e-15);

        let same = RateModel::new(Curve::gaussian_bump(0.0, 1.0, 0.0, 1.0), Curve::gaussian_bump(0.0, 1.0, 0.0, 1.0), 1.0)
            .unwrap();
        for x in [-3.0, 0.0, 2.5] {
            assert_eq!(same.potential(x), 0.0);
        }

        let bump = RateModel::new(
            Curve::gaussian_bump(0.0, 1.5, 0.0, 0.8),
            Curve::polynomial(&[0.1, 0.0, 1.0]),
            1.5,
        )
        .unwrap();
        // Brute-force evaluation written out independently of the curve code.
        for x in [-5.0, 5.0] {
            let b = 1.5 * (-(x * x) as f64 / (2.0 * 0.64)).exp();
            let expected = b - 25.1;
            assert_abs_diff_eq!(bump.potential(x), expected, epsilon = 1e-12);
            assert!(bump.potential(x) <= bump.b_star);
        }
    }

    #[test]
    fn ell_of_linear_drift() {
        let grid = Grid::new(-2.0, 2.0, 41, Boundary::Absorbing).unwrap();
        let s = ell_and_rho(&DynamicsSpec::diffusion(Curve::polynomial(&[0.0, 1.0])), &grid).unwrap();
        let i = grid.nearest(2.0);
        assert_abs_diff_eq!(s.ell[i], 2.0, epsilon = 1e-12);
        let mid = grid.nearest(0.0);
        assert_eq!(s.ell[mid], 0.0);
    }

    #[test]
    fn zero_drift_gives_uniform_rho() {
        let grid = Grid::new(-3.0, 3.0, 31, Boundary::Reflecting).unwrap();
        let s = ell_and_rho(&DynamicsSpec::brownian(), &grid).unwrap();
        assert!(s.ell.iter().all(|&l| l == 0.0));
        assert!(s.rho.iter().all(|&r| (r - grid.dx()).abs() < 1e-15 && r > 0.0));
    }

    #[test]
    fn ell_of_sine_matches_independent_quadrature() {
        let a = Curve::Sine {
            amplitude: 1.0,
            frequency: 1.0,
            phase: 0.0,
        };
        let pi = std::f64::consts::PI;
        let xs = vec![-pi, -1.0, 0.3, pi];
        let ell = antiderivative_from_zero(&a, &xs);
        assert_abs_diff_eq!(ell[3], 2.0, epsilon = 1e-10);
        for (x, l) in xs.iter().zip(&ell) {
            let oracle = if *x >= 0.0 {
                simpson(f64::sin, 0.0, *x, 20_000)
            } else {
                -simpson(f64::sin, *x, 0.0, 20_000)
            };
            assert_abs_diff_eq!(*l, oracle, epsilon = 1e-10);
        }
    }

    #[test]
    fn speed_measure_not_applicable_without_drift() {
        let grid = Grid::new(-1.0, 1.0, 5, Boundary::Absorbing).unwrap();
        let dj = DynamicsSpec::drifted_jump(JumpKernel::uniform(1.0, 0.5));
        assert!(matches!(ell_and_rho(&dj, &grid), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn kernel_landing_probabilities_sum_to_one() {
        for k in [JumpKernel::uniform(2.0, 0.7), JumpKernel::gaussian(2.0, 0.4)] {
            let p = k.landing_probability(0.3, -10.0, 10.0);
            assert_abs_diff_eq!(p, 1.0, epsilon = 1e-12);
            let parts: f64 = (0..80)
                .map(|i| k.landing_probability(0.3, -4.0 + 0.1 * i as f64, -3.9 + 0.1 * i as f64))
                .sum();
            assert_abs_diff_eq!(parts, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn dynamics_config_roundtrip() {
        let js = r#"{"variant":"diffusion_with_jumps","a":{"family":"polynomial","params":{"coeffs":[0,1]}},
                     "R":{"rate":{"family":"constant","params":{"value":1.0}},"rate_bound":1.0,"shape":"gaussian","sd":0.5},
                     "hypothesis_constants":{"ha_c":1.0}}"#;
        let d: DynamicsSpec = serde_json::from_str(js).unwrap();
        assert_eq!(d.variant_name(), "diffusion_with_jumps");
        assert_eq!(d.hypothesis_constants.ha_c, Some(1.0));
        let back: DynamicsSpec = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(back, d);
        let frozen: DynamicsSpec = serde_json::from_str(r#"{"variant":"frozen"}"#).unwrap();
        assert_eq!(frozen.motion, Motion::Frozen);
    }
}
