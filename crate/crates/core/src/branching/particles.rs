use serde::{Deserialize, Serialize};

use super::CutoffSpec;
use crate::dynamics::{PathSegment, Stepper};
use crate::error::{Error, Result};
use crate::model::{DynamicsSpec, RateModel};
use crate::rng::StreamRng;

/// Largest per-step event probability `dt (b* + sup_{[-m,m]} d)`.
pub const MAX_EVENT_PROBABILITY: f64 = 0.1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub x0: f64,
    pub dt: f64,
    /// Snapshot times (sorted, nonnegative); the run ends at the last one.
    pub record_times: Vec<f64>,
    pub cutoff: CutoffSpec,
    pub record_history: bool,
    /// Paths are stored only up to this time (default: whole run).
    #[serde(default)]
    pub history_until: Option<f64>,
    /// Abort when the population exceeds this size.
    pub max_particles: usize,
}

impl SimConfig {
    pub fn new(x0: f64, dt: f64, record_times: Vec<f64>) -> Self {
        Self {
            x0,
            dt,
            record_times,
            cutoff: CutoffSpec::none(),
            record_history: false,
            history_until: None,
            max_particles: 1_000_000,
        }
    }

    pub fn with_cutoff(mut self, cutoff: CutoffSpec) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn with_history(mut self, until: Option<f64>) -> Self {
        self.record_history = true;
        self.history_until = until;
        self
    }

    pub fn t_end(&self) -> f64 {
        self.record_times.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub ids: Vec<u64>,
    pub traits: Vec<f64>,
    /// Current lineage index of each particle (empty without history).
    pub lineages: Vec<usize>,
    /// Running maximum of `|trait|` over all particles up to this time.
    pub max_abs_trait: f64,
}

impl Snapshot {
    pub fn count(&self) -> usize {
        self.traits.len()
    }

    /// `<Z_t, f>`.
    pub fn total(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.traits.iter().map(|&x| f(x)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Birth { time: f64, parent: u64, child: u64, x: f64 },
    Death { time: f64, id: u64, x: f64 },
}

/// One stored piece of a genealogical path; `parent` points to the segment
/// it continues.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lineage {
    pub parent: Option<usize>,
    pub particle: u64,
    pub path: PathSegment,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct HistoricalForest {
    pub lineages: Vec<Lineage>,
}

impl HistoricalForest {
    /// Ancestral path ending in `lineage`, stopped at time `s`.
    pub fn path(&self, lineage: usize, s: f64) -> Vec<(f64, f64)> {
        let mut chain = vec![lineage];
        while let Some(p) = self.lineages[*chain.last().unwrap()].parent {
            chain.push(p);
        }
        let mut out: Vec<(f64, f64)> = Vec::new();
        for &l in chain.iter().rev() {
            let seg = &self.lineages[l].path;
            for (&t, &x) in seg.times.iter().zip(&seg.states) {
                if t > s + 1e-12 {
                    break;
                }
                if out.last().is_some_and(|&(t0, _)| t <= t0) {
                    continue;
                }
                out.push((t, x));
            }
        }
        out
    }

    fn open(&mut self, parent: Option<usize>, particle: u64, t: f64, x: f64) -> usize {
        self.lineages.push(Lineage {
            parent,
            particle,
            path: PathSegment::start(t, x),
        });
        self.lineages.len() - 1
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub replica: u64,
    pub x0: f64,
    pub snapshots: Vec<Snapshot>,
    /// First time a trait left `[-m, m]` (`Some(0)` when `|x0| > m`).
    pub exit_time: Option<f64>,
    pub extinction_time: Option<f64>,
    pub forest: Option<HistoricalForest>,
    pub events: Vec<Event>,
}

impl Trajectory {
    pub fn at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| (s.time - t).abs() < 1e-9)
    }

    /// `<L_s, phi>`: sum of `phi` over the ancestral paths (stopped at `s`)
    /// of the particles alive at the recorded time `s`. Needs history.
    pub fn historical_sum(&self, s: f64, phi: impl Fn(&[(f64, f64)]) -> f64) -> Result<f64> {
        let forest = self
            .forest
            .as_ref()
            .ok_or_else(|| Error::config("trajectory was simulated without history"))?;
        let snap = self
            .at(s)
            .ok_or_else(|| Error::config(format!("no snapshot at s = {s}")))?;
        Ok(snap.lineages.iter().map(|&l| phi(&forest.path(l, s))).sum())
    }
}

pub(crate) fn sup_death(model: &RateModel, cutoff: &CutoffSpec) -> Result<f64> {
    if let Some(c) = model.d.as_constant() {
        return Ok(c);
    }
    if !cutoff.m.is_finite() {
        return Err(Error::config(
            "unbounded death rate without a cutoff: set a finite truncation level m",
        ));
    }
    let n = 4001;
    Ok((0..n)
        .map(|i| model.death(-cutoff.m + 2.0 * cutoff.m * i as f64 / (n - 1) as f64))
        .fold(0.0f64, f64::max))
}

pub(crate) fn check_event_bound(model: &RateModel, cutoff: &CutoffSpec, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config(format!("time step must be positive, got {dt}")));
    }
    let p = dt * (model.b_star + sup_death(model, cutoff)?);
    if p > MAX_EVENT_PROBABILITY {
        return Err(Error::config(format!(
            "event probability bound violated: dt (b* + sup d) = {p:.4} > {MAX_EVENT_PROBABILITY}; use dt <= {:.3e}",
            dt * MAX_EVENT_PROBABILITY / p
        )));
    }
    Ok(())
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() || times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("record times must be nonempty, finite, nonnegative and increasing"));
    }
    Ok(())
}

struct Particle {
    id: u64,
    x: f64,
    rng: StreamRng,
    lineage: usize,
}

/// One replica of the branching particle system. Per step each particle
/// branches with probability `b(x) h`, dies with probability `d^(m)(x) h`,
/// and otherwise moves one dynamics step. Children start at the parent's
/// trait with a stream split from the parent's.
pub fn simulate(config: &SimConfig, model: &RateModel, dynamics: &DynamicsSpec, seed: u64, replica: u64) -> Result<Trajectory> {
    check_times(&config.record_times)?;
    check_event_bound(model, &config.cutoff, config.dt)?;
    let stepper = Stepper::new(dynamics, config.dt)?;
    let m = config.cutoff.m;
    let history_until = config.history_until.unwrap_or(f64::INFINITY);
    let mut root = StreamRng::for_replica(seed, replica);
    let mut forest = config.record_history.then(HistoricalForest::default);
    let mut events = Vec::new();
    let mut next_id = 1u64;
    let lineage0 = forest.as_mut().map_or(0, |f| f.open(None, 0, 0.0, config.x0));
    let mut alive = vec![Particle {
        id: 0,
        x: config.x0,
        rng: root.split(),
        lineage: lineage0,
    }];
    let mut max_abs = config.x0.abs();
    let mut exit_time = (config.x0.abs() > m).then_some(0.0);
    let mut extinction_time = None;
    let mut snapshots = Vec::with_capacity(config.record_times.len());
    let mut t = 0.0;
    let mut newborn: Vec<Particle> = Vec::new();
    for &target in &config.record_times {
        while t < target - 1e-12 {
            let h = config.dt.min(target - t);
            let t_next = if target - t <= config.dt + 1e-12 { target } else { t + h };
            let keep_path = forest.is_some() && t_next <= history_until + 1e-12;
            let mut i = 0;
            while i < alive.len() {
                let p = &mut alive[i];
                let u = p.rng.uniform();
                let b = model.birth(p.x);
                let d = model.death(p.x.clamp(-m, m));
                if u < b * h {
                    let child_rng = p.rng.split();
                    let (id, x, parent_lineage) = (next_id, p.x, p.lineage);
                    next_id += 1;
                    if forest.is_some() {
                        events.push(Event::Birth { time: t_next, parent: p.id, child: id, x });
                    }
                    let mut child_lineage = parent_lineage;
                    if let (Some(f), true) = (forest.as_mut(), keep_path) {
                        p.lineage = f.open(Some(parent_lineage), p.id, t_next, x);
                        child_lineage = f.open(Some(parent_lineage), id, t_next, x);
                    }
                    newborn.push(Particle {
                        id,
                        x,
                        rng: child_rng,
                        lineage: child_lineage,
                    });
                    i += 1;
                } else if u < (b + d) * h {
                    if forest.is_some() {
                        events.push(Event::Death { time: t_next, id: p.id, x: p.x });
                    }
                    alive.swap_remove(i);
                } else {
                    let (y, jumped) = stepper.step_by(p.x, h, &mut p.rng);
                    p.x = y;
                    if let (Some(f), true) = (forest.as_mut(), keep_path) {
                        f.lineages[p.lineage].path.push(t_next, y, jumped);
                    }
                    if y.abs() > max_abs {
                        max_abs = y.abs();
                    }
                    if exit_time.is_none() && y.abs() > m {
                        exit_time = Some(t_next);
                    }
                    i += 1;
                }
            }
            alive.append(&mut newborn);
            t = t_next;
            if alive.is_empty() && extinction_time.is_none() {
                extinction_time = Some(t);
            }
            if alive.len() > config.max_particles {
                return Err(Error::config(format!(
                    "population cap {} exceeded at t = {t:.3}; lower t_end or raise max_particles",
                    config.max_particles
                )));
            }
            if alive.is_empty() {
                t = target;
            }
        }
        snapshots.push(Snapshot {
            time: target,
            ids: alive.iter().map(|p| p.id).collect(),
            traits: alive.iter().map(|p| p.x).collect(),
            lineages: if forest.is_some() { alive.iter().map(|p| p.lineage).collect() } else { Vec::new() },
            max_abs_trait: max_abs,
        });
        if alive.is_empty() {
            t = target;
        }
    }
    Ok(Trajectory {
        replica,
        x0: config.x0,
        snapshots,
        exit_time,
        extinction_time,
        forest,
        events,
    })
}

/// Coupled run of the process and its dominating Yule process (birth rate
/// `b*`, no deaths) on shared randomness: `(time, N_t, N*_t)` at each record time.
pub fn simulate_coupled_yule(
    config: &SimConfig,
    model: &RateModel,
    dynamics: &DynamicsSpec,
    seed: u64,
    replica: u64,
) -> Result<Vec<(f64, usize, usize)>> {
    check_times(&config.record_times)?;
    check_event_bound(model, &config.cutoff, config.dt)?;
    let stepper = Stepper::new(dynamics, config.dt)?;
    let m = config.cutoff.m;
    let b_star = model.b_star;
    let mut root = StreamRng::for_replica(seed, replica);
    // (trait, stream, real): ghosts are Yule particles absent from the process.
    let mut alive: Vec<(f64, StreamRng, bool)> = vec![(config.x0, root.split(), true)];
    let mut out = Vec::new();
    let mut t = 0.0;
    for &target in &config.record_times {
        while t < target - 1e-12 {
            let h = config.dt.min(target - t);
            let mut born = Vec::new();
            for (x, rng, real) in alive.iter_mut() {
                let u = rng.uniform();
                let b = model.birth(*x);
                if u < b * h {
                    born.push((*x, rng.split(), *real));
                } else if u < b_star * h {
                    born.push((*x, rng.split(), false));
                } else {
                    if *real && u < (b_star + model.death(x.clamp(-m, m))) * h {
                        *real = false;
                    }
                    *x = stepper.step_by(*x, h, rng).0;
                }
            }
            alive.extend(born);
            if alive.len() > config.max_particles {
                return Err(Error::config("population cap exceeded in the Yule coupling"));
            }
            t = if target - t <= config.dt + 1e-12 { target } else { t + h };
        }
        out.push((target, alive.iter().filter(|p| p.2).count(), alive.len()));
    }
    Ok(out)
}
