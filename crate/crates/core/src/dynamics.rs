//! Single-particle trait motion: Euler–Maruyama diffusion steps with
//! thinned jumps, unit-drift translation for the drifted jump class.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Curve, DynamicsSpec, JumpKernel, Motion};
use crate::rng::StreamRng;

/// Largest admissible `sup R~ * dt` for jump thinning.
pub const MAX_JUMP_PROBABILITY: f64 = 0.1;

/// One Euler–Maruyama step of `dX = dB - a(X) dt` with a given standard normal draw.
#[inline]
pub fn step_diffusion(x: f64, dt: f64, noise: f64, a: &Curve) -> f64 {
    x - a.eval(x) * dt + dt.sqrt() * noise
}

/// Validated single-step kernel for one dynamics specification.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    dynamics: &'a DynamicsSpec,
    dt: f64,
}

impl<'a> Stepper<'a> {
    pub fn new(dynamics: &'a DynamicsSpec, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config(format!("time step must be positive, got {dt}")));
        }
        if let Some(k) = dynamics.jumps() {
            let p = k.rate_bound * dt;
            if p > MAX_JUMP_PROBABILITY {
                return Err(Error::config(format!(
                    "jump thinning bound violated: sup R~ * dt = {p:.4} > {MAX_JUMP_PROBABILITY}; use dt <= {:.3e}",
                    MAX_JUMP_PROBABILITY / k.rate_bound
                )));
            }
        }
        Ok(Self { dynamics, dt })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dynamics(&self) -> &DynamicsSpec {
        self.dynamics
    }

    /// Advance by the full step `dt`; returns the new trait and whether a jump occurred.
    #[inline]
    pub fn step<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> (f64, bool) {
        self.step_by(x, self.dt, rng)
    }

    /// Advance by `h <= dt` (used for the shortened final step).
    pub fn step_by<R: Rng + ?Sized>(&self, x: f64, h: f64, rng: &mut R) -> (f64, bool) {
        debug_assert!(h <= self.dt * (1.0 + 1e-12));
        match &self.dynamics.motion {
            Motion::Frozen => (x, false),
            Motion::Diffusion { a } => {
                let noise: f64 = StandardNormal.sample(rng);
                (step_diffusion(x, h, noise, a), false)
            }
            Motion::DiffusionWithJumps { a, jumps } => match try_jump(x, h, jumps, rng) {
                Some(z) => (z, true),
                None => {
                    let noise: f64 = StandardNormal.sample(rng);
                    (step_diffusion(x, h, noise, a), false)
                }
            },
            Motion::DriftedJump { jumps } => match try_jump(x, h, jumps, rng) {
                Some(z) => (z, true),
                None => (x + h, false),
            },
        }
    }
}

#[inline]
fn try_jump<R: Rng + ?Sized>(x: f64, h: f64, jumps: &JumpKernel, rng: &mut R) -> Option<f64> {
    let p = jumps.total_mass(x) * h;
    if p > 0.0 && rng.random::<f64>() < p {
        Some(jumps.sample_target(x, rng))
    } else {
        None
    }
}

/// One step of the jump-capable dynamics; see [`Stepper`].
pub fn step_with_jumps<R: Rng + ?Sized>(
    x: f64,
    dt: f64,
    rng: &mut R,
    dynamics: &DynamicsSpec,
) -> Result<(f64, bool)> {
    Ok(Stepper::new(dynamics, dt)?.step(x, rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSegment {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    /// `jumped[k]` flags the transition into `states[k]`; `jumped[0]` is false.
    pub jumped: Vec<bool>,
}

impl PathSegment {
    pub fn start(t0: f64, x0: f64) -> Self {
        Self {
            times: vec![t0],
            states: vec![x0],
            jumped: vec![false],
        }
    }

    pub fn push(&mut self, t: f64, x: f64, jumped: bool) {
        self.times.push(t);
        self.states.push(x);
        self.jumped.push(jumped);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("segment has a start point")
    }

    pub fn end_state(&self) -> f64 {
        *self.states.last().expect("segment has a start point")
    }

    pub fn jump_count(&self) -> usize {
        self.jumped.iter().filter(|&&j| j).count()
    }

    /// State at time `t` (last recorded state at or before `t`).
    pub fn state_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t + 1e-12);
        self.states[k.saturating_sub(1)]
    }
}

/// Number of steps and the length of the last one for a horizon `t_end`.
pub(crate) fn step_plan(t_end: f64, dt: f64) -> (usize, f64) {
    if t_end <= 0.0 {
        return (0, 0.0);
    }
    let n = (t_end / dt - 1e-9).ceil().max(1.0) as usize;
    let last = t_end - (n - 1) as f64 * dt;
    (n, last)
}

pub fn sample_path(x0: f64, t_end: f64, dt: f64, dynamics: &DynamicsSpec, seed: u64) -> Result<PathSegment> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::config(format!("t_end must be nonnegative, got {t_end}")));
    }
    let stepper = Stepper::new(dynamics, dt)?;
    let mut rng = StreamRng::from_seed(seed);
    let mut path = PathSegment::start(0.0, x0);
    let (n, last) = step_plan(t_end, dt);
    let mut x = x0;
    for k in 0..n {
        let h = if k + 1 == n { last } else { dt };
        let (y, jumped) = stepper.step_by(x, h, &mut rng);
        x = y;
        let t = if k + 1 == n { t_end } else { (k + 1) as f64 * dt };
        path.push(t, x, jumped);
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diffusion_step_arithmetic() {
        assert_eq!(step_diffusion(0.7, 0.1, 0.0, &Curve::zero()), 0.7);
        let ou = Curve::polynomial(&[0.0, 1.0]);
        assert!((step_diffusion(1.0, 0.01, 0.0, &ou) - 0.99).abs() < 1e-15);
    }

    #[test]
    fn zero_jump_mass_never_jumps() {
        let mut k = JumpKernel::uniform(0.0, 1.0);
        k.rate_bound = 0.0;
        let d = DynamicsSpec::diffusion_with_jumps(Curve::zero(), k);
        let p = sample_path(0.0, 5.0, 0.01, &d, 3).unwrap();
        assert_eq!(p.jump_count(), 0);
    }

    #[test]
    fn drifted_translation_without_jump() {
        let mut k = JumpKernel::uniform(0.0, 1.0);
        k.rate_bound = 0.0;
        let d = DynamicsSpec::drifted_jump(k);
        let s = Stepper::new(&d, 0.25).unwrap();
        let mut rng = StreamRng::from_seed(0);
        assert_eq!(s.step(0.0, &mut rng), (0.25, false));
    }

    #[test]
    fn thinning_bound_enforced() {
        let d = DynamicsSpec::drifted_jump(JumpKernel::uniform(5.0, 1.0));
        assert!(matches!(Stepper::new(&d, 0.05), Err(Error::Config(_))));
        assert!(Stepper::new(&d, 0.02).is_ok());
    }

    #[test]
    fn path_contract() {
        let d = DynamicsSpec::brownian();
        let p0 = sample_path(0.3, 0.0, 0.1, &d, 1).unwrap();
        assert_eq!(p0.len(), 1);
        assert_eq!(p0.end_state(), 0.3);
        let a = sample_path(0.0, 1.05, 0.1, &d, 9).unwrap();
        let b = sample_path(0.0, 1.05, 0.1, &d, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.end_time(), 1.05);
        assert_eq!(a.len(), 12);
        assert!(a.times.windows(2).all(|w| w[1] > w[0]));
        assert!(sample_path(0.0, -1.0, 0.1, &d, 9).is_err());
    }

    #[test]
    fn drifted_paths_are_linear_between_jumps() {
        let d = DynamicsSpec::drifted_jump(JumpKernel::gaussian(1.0, 0.5));
        let p = sample_path(0.0, 10.0, 0.01, &d, 5).unwrap();
        assert!(p.jump_count() > 0);
        for k in 1..p.len() {
            if !p.jumped[k] {
                let dt = p.times[k] - p.times[k - 1];
                assert!((p.states[k] - p.states[k - 1] - dt).abs() < 1e-12);
            }
        }
    }
}
