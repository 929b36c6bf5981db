//! Exact population counts for constant rates without motion.

use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Law of `N_t` from one ancestor in the linear birth-death process:
/// `P(N_t = 0) = alpha`, `P(N_t = k) = (1 - alpha)(1 - beta) beta^{k-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathLaw {
    pub alpha: f64,
    pub beta: f64,
}

pub fn birth_death_transition(b: f64, d: f64, t: f64) -> BirthDeathLaw {
    if t <= 0.0 {
        return BirthDeathLaw { alpha: 0.0, beta: 0.0 };
    }
    let r = b - d;
    if r.abs() * t < 1e-9 {
        let p = b * t / (1.0 + b * t);
        return BirthDeathLaw { alpha: p, beta: p };
    }
    let e = (r * t).exp_m1();
    // e^{rt} - 1 over b e^{rt} - d = (b - d) + b (e^{rt} - 1)
    let den = r + b * e;
    BirthDeathLaw {
        alpha: d * e / den,
        beta: b * e / den,
    }
}

impl BirthDeathLaw {
    /// Draw `N_t` started from `n` independent ancestors.
    pub fn sample(&self, n: u64, rng: &mut StreamRng) -> Result<u64> {
        if n == 0 {
            return Ok(0);
        }
        let k = if self.alpha > 0.0 {
            Binomial::new(n, 1.0 - self.alpha)
                .map_err(|e| Error::numerical(format!("binomial: {e}")))?
                .sample(rng)
        } else {
            n
        };
        if k == 0 || self.beta <= 0.0 {
            return Ok(k);
        }
        // Sum of k geometric(1 - beta) on {1, 2, ...}: k + NegBin(k, 1 - beta),
        // drawn as a Poisson-Gamma mixture.
        let lambda = Gamma::new(k as f64, self.beta / (1.0 - self.beta))
            .map_err(|e| Error::numerical(format!("gamma: {e}")))?
            .sample(rng);
        if lambda <= 0.0 {
            return Ok(k);
        }
        let extra: f64 = Poisson::new(lambda)
            .map_err(|e| Error::numerical(format!("poisson: {e}")))?
            .sample(rng);
        Ok(k + extra as u64)
    }
}

/// `N_t` at each record time for constant rates `b`, `d` and a single
/// ancestor. Exact in law; no time step.
pub fn simulate_counts(b: f64, d: f64, times: &[f64], seed: u64, replica: u64) -> Result<Vec<u64>> {
    if !(b >= 0.0 && d >= 0.0) {
        return Err(Error::config("rates must be nonnegative"));
    }
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::config("record times must be finite, nonnegative and nondecreasing"));
    }
    let mut rng = StreamRng::for_replica(seed, replica);
    let mut n = 1u64;
    let mut t = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        if n > 0 && target > t {
            n = birth_death_transition(b, d, target - t).sample(n, &mut rng)?;
        }
        t = target;
        out.push(n);
    }
    Ok(out)
}
