//! Acceptance battery: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach stdout; exits nonzero if any
//! criterion fails.

use std::f64::consts::{E, FRAC_1_SQRT_2};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fkbranch::analysis::*;
use fkbranch::branching::*;
use fkbranch::model::{ell_and_rho, Curve, DynamicsSpec, JumpKernel, RateModel};
use fkbranch::moments::*;
use fkbranch::rng::StreamRng;
use fkbranch::semigroup::*;
use fkbranch::{Boundary, Error, Grid, Result};
use rand_distr::{Distribution, Exp};

struct Outcome {
    passed: bool,
    summary: String,
}

fn outcome(passed: bool, summary: String) -> Outcome {
    Outcome { passed, summary }
}

fn within_budget(elapsed: Duration, minutes: f64) -> bool {
    elapsed.as_secs_f64() <= 60.0 * minutes
}

fn settings(dt: f64, record_dt: f64) -> SolveSettings {
    SolveSettings { dt: Some(dt), record_dt }
}

fn toy_grid() -> Result<Grid> {
    Grid::new(-1.0, 1.0, 5, Boundary::Reflecting)
}

/// Constant rates with Brownian motion on a five-node reflecting grid:
/// `theta0 = 1`, `lambda0 = d - b`.
fn toy(b: f64, d: f64) -> Result<(RateModel, GeneratorMatrix, SpectralData)> {
    let grid = toy_grid()?;
    let model = RateModel::constant(b, d);
    let gen = build_generator(&model, &DynamicsSpec::brownian(), &grid)?;
    let s = principal_eigentriple(&gen, &model, &grid)?;
    Ok((model, gen, s))
}

fn oscillator(theta: f64) -> RateModel {
    RateModel::new(Curve::constant(1.0), Curve::polynomial(&[1.0 - theta, 0.0, 1.0]), 1.0).expect("valid rates")
}

fn wide_grid() -> Result<Grid> {
    Grid::new(-8.0, 8.0, 801, Boundary::Absorbing)
}

fn no_h() -> SpectralOptions {
    SpectralOptions { fit_h: false, dt: None }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

fn one(_: f64) -> f64 {
    1.0
}

fn constant_critical_oracle() -> Result<Outcome> {
    let start = Instant::now();
    let frozen = DynamicsSpec::frozen();
    let model = RateModel::constant(1.0, 1.0);
    let gen = build_generator(&model, &frozen, &toy_grid()?)?;
    let field = solve_survival(99.0, &gen, &model, &settings(0.01, 1.0))?;
    let mut err = 0.0f64;
    for t in [1.0, 9.0, 99.0] {
        let k = field.time_index(t);
        for v in field.at(0, k) {
            err = err.max((v - 1.0 / (1.0 + t)).abs());
        }
    }
    let cfg = SimConfig::new(0.0, 0.01, vec![9.0]);
    let table = sample_table(&cfg, &model, &frozen, &[&one], 100_000, 2024)?;
    let mc = mc_survival(&table)?[0].estimate;
    let se = (0.1f64 * 0.9 / table.reps() as f64).sqrt();
    let z = (mc.value - 0.1) / se;
    let elapsed = start.elapsed();
    Ok(outcome(
        err <= 1e-6 && z.abs() <= 3.0 && within_budget(elapsed, 2.0),
        format!(
            "max |u0 - 1/(1+t)| = {err:.2e} (tol 1e-6); MC P(N_9 > 0) = {:.5}, z = {z:.2} (tol 3); {:.1} s",
            mc.value,
            elapsed.as_secs_f64()
        ),
    ))
}

fn critical_survival_asymptotic() -> Result<Outcome> {
    let start = Instant::now();
    let grid = wide_grid()?;
    let dynamics = DynamicsSpec::brownian();
    let cal = calibrate_criticality(|theta| build_generator(&oscillator(theta), &dynamics, &grid), (0.5, 1.0), None, 1e-9)?;
    let model = oscillator(cal.theta);
    let gen = build_generator(&model, &dynamics, &grid)?;
    let s = principal_eigentriple_with(&gen, &model, &grid, &no_h())?;
    let field = solve_survival(200.0 / s.b, &gen, &model, &settings(0.01, 0.05))?;
    let check = critical_survival_check(&field, &s, 0.02)?;
    let elapsed = start.elapsed();
    Ok(outcome(
        check.passed() && within_budget(elapsed, 5.0),
        format!(
            "B sup|(1+t)u0 - theta0/B| = {:.3e} at t = {:.1} (tol 0.02); envelope spread {:.3} (tol 0.2); {:.1} s",
            check.value,
            200.0 / s.b,
            check.details["envelope_spread"],
            elapsed.as_secs_f64()
        ),
    ))
}

fn exponential_yaglom() -> Result<Outcome> {
    let start = Instant::now();
    let (_, _, s) = toy(1.0, 1.0)?;
    let table = count_table(1.0, 1.0, &[30.0], 100_000, 808)?;
    let sample = ConditionalSample::from_table(&table, 0, 30.0)?;
    let r = yaglom_test_critical(&sample, &s, 0.01)?;
    let elapsed = start.elapsed();
    Ok(outcome(
        r.passed() && within_budget(elapsed, 5.0),
        format!(
            "KS D = {:.4} with slack {:.4}, p = {:.3} (alpha 0.01); max moment z = {:.2} (tol 4); {} survivors; {:.1} s",
            r.value,
            r.details["slack"],
            r.p_value.unwrap_or(f64::NAN),
            r.details["max_moment_z"],
            sample.survivors(),
            elapsed.as_secs_f64()
        ),
    ))
}

fn upsilon() -> Result<Outcome> {
    let mut rng = StreamRng::from_seed(1);
    let e: Exp<f64> = Exp::new(1.0).expect("positive rate");
    // h(Y) ~ Exp(1) inverts to Y = sqrt(E) - 1/(2 sqrt(E)).
    let y: Vec<f64> = (0..5000)
        .map(|_| {
            let r = e.sample(&mut rng).sqrt();
            r - 0.5 / r
        })
        .collect();
    let ks = ks_test(&y, upsilon_law)?;
    let point = (1.0 - upsilon_law(0.0) - (-0.5f64).exp()).abs();
    Ok(outcome(
        ks.p_value >= 0.01 && point <= 1e-12,
        format!(
            "transform-sampling KS p = {:.3} (alpha 0.01); |P(Y > 0) - e^(-1/2)| = {point:.1e} (tol 1e-12)",
            ks.p_value
        ),
    ))
}

fn spectral_engine() -> Result<Outcome> {
    let start = Instant::now();
    let grid = wide_grid()?;
    let flat = oscillator(0.0);
    let gen = build_generator(&flat, &DynamicsSpec::brownian(), &grid)?;
    let s = principal_eigentriple_with(&gen, &flat, &grid, &no_h())?;
    let e0 = (s.lambda0 - FRAC_1_SQRT_2).abs();
    let e1 = (s.lambda1 - 3.0 * FRAC_1_SQRT_2).abs();

    let model = RateModel::new(Curve::constant(1.0), Curve::polynomial(&[1.0, 0.0, 0.5]), 1.0)?;
    let drift = DynamicsSpec::diffusion(Curve::polynomial(&[0.0, 1.0]));
    let girsanov = girsanov_crosscheck(&drift, &model, &grid, 1e-3)?;

    let gen = build_generator(&flat, &drift, &grid)?;
    let s = principal_eigentriple_with(&gen, &flat, &grid, &no_h())?;
    let rho = ell_and_rho(&drift, &grid)?.rho;
    let mut prod: Vec<f64> = s.theta0.iter().zip(&rho).map(|(t, r)| t * r).collect();
    let pairing: f64 = prod.iter().zip(&s.theta0).map(|(p, t)| p * t).sum();
    prod.iter_mut().for_each(|p| *p /= pairing);
    let scale = s.mu0.iter().fold(0.0f64, |m, v| m.max(*v));
    let mu_err = sup_diff(&prod, &s.mu0) / scale;
    let elapsed = start.elapsed();
    Ok(outcome(
        e0 <= 1e-3 && e1 <= 1e-3 && girsanov.passed && mu_err <= 1e-6 && within_budget(elapsed, 0.5),
        format!(
            "|lambda0 - 1/sqrt2| = {e0:.2e}, |lambda1 - 3/sqrt2| = {e1:.2e} (tol 1e-3); Girsanov max diff {:.2e} (tol 1e-3); \
             |mu0 - theta0 rho| = {mu_err:.2e} (tol 1e-6); {:.1} s",
            girsanov.max_abs_diff,
            elapsed.as_secs_f64()
        ),
    ))
}

fn moment_recursion() -> Result<Outcome> {
    let grid = Grid::new(-8.0, 8.0, 321, Boundary::Absorbing)?;
    let model = RateModel::new(Curve::gaussian_bump(0.4, 0.6, 0.0, 1.0), Curve::abs_polynomial(&[0.3, 1.0]), 1.0)?;
    let f = grid.sample(|x| 1.0 / (1.0 + x * x));
    let ones = vec![1.0; grid.len()];
    let dynamics = [
        DynamicsSpec::diffusion(Curve::polynomial(&[0.0, 0.5])),
        DynamicsSpec::diffusion_with_jumps(Curve::zero(), JumpKernel::gaussian(1.0, 0.5)),
        DynamicsSpec::drifted_jump(JumpKernel::gaussian(1.0, 1.0).with_density_floor(0.1, 1.0)),
    ];
    let st = settings(0.005, 0.05);
    let mut residual = 0.0f64;
    let mut inequality = 0.0f64;
    for dyn_spec in &dynamics {
        let gen = build_generator(&model, dyn_spec, &grid)?;
        let survival = solve_survival(2.0, &gen, &model, &st)?;
        let field = with_survival(solve_moments(&f, 4, 2.0, &gen, &model, &st)?, survival.clone())?;
        for t in [0.4, 0.8, 1.2, 1.6, 2.0] {
            let k = field.time_index(t);
            for n in 0..=4 {
                residual = residual.max(duhamel_residual(&field, &f, n, k, &gen, &model)?.relative);
            }
        }
        let mass = with_survival(solve_moments(&ones, 2, 2.0, &gen, &model, &st)?, survival)?;
        for inv in [field.invariants(), mass.invariants()] {
            inequality = inequality.max(inv.jensen_violation).max(inv.cauchy_schwarz_violation);
        }
    }
    let (yule, gen, _) = toy(1.0, 0.0)?;
    let field = solve_moments(&[1.0; 5], 2, 1.0, &gen, &yule, &settings(1e-3, 0.1))?;
    let yule_err = (field.at(2, field.time_index(1.0))[0] - (2.0 * E * E - E)).abs();
    Ok(outcome(
        residual <= 1e-4 && yule_err <= 1e-5 && inequality <= 1e-12,
        format!(
            "max Duhamel residual {residual:.2e} (tol 1e-4); |u2(1) - (2e^2 - e)| = {yule_err:.2e} (tol 1e-5); \
             largest Jensen/Cauchy-Schwarz violation {inequality:.1e}"
        ),
    ))
}

fn subcritical_suite() -> Result<Outcome> {
    let (model, gen, s) = toy(0.5, 1.0)?;
    let ones = vec![1.0; 5];
    let st = settings(0.005, 0.05);
    let horizon = 40.0;
    let field = with_survival(
        solve_moments(&ones, 8, horizon, &gen, &model, &st)?,
        solve_survival(horizon, &gen, &model, &st)?,
    )?;
    let lim = subcritical_limits(&s, &model, &field, &ones)?;
    let kappa = lim.kappa.unwrap_or(f64::NAN);
    let kappa_err = (kappa - 0.5).abs();
    let t = 20.0;
    let closed = 0.5 / (1.0 - 0.5 * (-0.5f64 * t).exp());
    let scaled = (s.lambda0 * t).exp() * field.at(0, field.time_index(t))[0];
    let approach = (scaled - closed).abs();
    let floor = lim.kappa_floor.unwrap_or(f64::INFINITY);
    let check = hamburger_check(&s, &gen, &model, &lim, 1.0, Some(0.01))?;
    Ok(outcome(
        kappa_err <= 1e-4 && approach <= 1e-4 && kappa >= floor && check.respected && lim.v_minus.len() >= 8,
        format!(
            "|K - 1/2| = {kappa_err:.2e}, |e^(lambda0 t) u0 - closed form| at t = 20: {approach:.2e} (tol 1e-4); \
             K = {kappa:.6} >= (V1)^2/V2 = {floor:.6}; Hamburger r* = {:.4}, respected for n <= {}: {}",
            check.r_star,
            lim.v_minus.len(),
            check.respected
        ),
    ))
}

fn supercritical_suite() -> Result<Outcome> {
    let grid = toy_grid()?;
    let h = solve_h(&RateModel::constant(2.0, 1.0), &DynamicsSpec::brownian(), &grid, 1e-7)?;
    let q_err = h.h.iter().fold(0.0f64, |m, v| m.max((v - 0.5).abs()));
    let u0_err = h.u0_route.iter().fold(0.0f64, |m, v| m.max((v - 0.5).abs()));
    let h_ok = q_err <= 1e-6 && u0_err <= 1e-6 && h.u0_converged;

    let (_, _, s) = toy(2.0, 1.0)?;
    let table = count_table(2.0, 1.0, &[5.0, 10.0, 20.0], 20_000, 99)?;
    let means = martingale_means(&table, 0, s.lambda0);
    let mart_z = means.iter().map(|e| e.z(1.0).abs()).fold(0.0, f64::max);
    let w: Vec<f64> = table.values(0, 2).iter().map(|n| (s.lambda0 * 20.0).exp() * n).collect();
    let wr = w_infty_diagnostics(&w, 20.0, &s, 1.0, 0.5, &[1.0, 4.0, 24.0])?;
    let atom_z = wr.details["z_fraction"].abs();

    let wide = Grid::new(-8.0, 8.0, 321, Boundary::Absorbing)?;
    let model = RateModel::new(Curve::constant(3.0), Curve::polynomial(&[0.5, 0.0, 1.0]), 3.0)?;
    let gen = build_generator(&model, &DynamicsSpec::brownian(), &wide)?;
    let sp = principal_eigentriple_with(&gen, &model, &wide, &no_h())?;
    let mut fact = 0.0f64;
    for f in [wide.sample(|x| 1.0 / (1.0 + x * x)), wide.sample(|x| (x - 0.5).cos().abs())] {
        fact = fact.max(supercritical_limits(&sp, &gen, &model, &f, 4)?.factorization_error);
    }
    Ok(outcome(
        h_ok && atom_z <= 4.0 && mart_z <= 3.0 && fact <= 1e-4,
        format!(
            "|h - 1/2|: Q-route {q_err:.1e}, u0-route {u0_err:.1e} (tol 1e-6); P(W_20 > threshold) = {:.4}, z = {atom_z:.2} (tol 4); \
             martingale max z = {mart_z:.2} (tol 3); factorization error {fact:.1e} (tol 1e-4)",
            wr.value
        ),
    ))
}

fn q_process() -> Result<Outcome> {
    let model = RateModel::constant(1.0, 1.0);
    let dynamics = DynamicsSpec::brownian();
    let (_, _, s) = toy(1.0, 1.0)?;
    let weight = QWeight::for_regime(&s, None)?;
    let s_time = 1.0;
    let horizons = [5.0, 10.0, 20.0];
    let mut times = vec![s_time];
    times.extend(horizons);
    let cfg = SimConfig::new(0.0, 0.01, times).with_history(Some(s_time));
    // F counts the particles alive at s whose ancestral path went above 1/2.
    let rows = run_replicas(40_000, |r| {
        let traj = simulate(&cfg, &model, &dynamics, 4242, r)?;
        let f = traj.historical_sum(s_time, |p| f64::from(u8::from(p.iter().any(|(_, x)| *x > 0.5))))?;
        let w = qprocess_weight(&traj, s_time, &weight)?;
        let alive: Vec<bool> = horizons.iter().map(|&t| traj.at(t).is_some_and(|snap| snap.count() > 0)).collect();
        Ok((f, w, alive))
    })?;
    let direct: Vec<(f64, Vec<f64>)> = horizons
        .iter()
        .enumerate()
        .map(|(j, &t)| (t, rows.iter().filter(|r| r.2[j]).map(|r| r.0).collect()))
        .collect();
    let reweighted: Vec<f64> = rows.iter().map(|r| r.0 * r.1).collect();
    let weights: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let r = qprocess_law_test(&direct, &reweighted, &weights)?;
    let norm = power_moments(&weights, 1)[0];
    let norm_z = norm.z(1.0);
    Ok(outcome(
        r.passed() && norm_z.abs() <= 3.0,
        format!(
            "gap at T = 20: {:.4}, {:.2} combined SE (tol 4); E[w] = {:.4}, z = {norm_z:.2} (tol 3)",
            r.details["last_gap"], r.value, norm.value
        ),
    ))
}

fn reproducibility_and_calibration() -> Result<Outcome> {
    let model = RateModel::constant(1.2, 1.0);
    let dynamics = DynamicsSpec::diffusion(Curve::polynomial(&[0.0, 1.0]));
    let cfg = SimConfig::new(0.0, 0.01, vec![1.0, 3.0]);
    let run = |threads: usize| -> Result<String> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        let table = pool.install(|| sample_table(&cfg, &model, &dynamics, &[&one, &|x: f64| x], 2_000, 77))?;
        Ok(serde_json::to_string(&table)?)
    };
    let a = run(1)?;
    let identical = a == run(4)? && a == run(1)?;
    let suite = calibration_suite(400, 0.01, 2718)?;
    let worst = suite
        .iter()
        .min_by(|x, y| (x.passes * y.total).cmp(&(y.passes * x.total)))
        .expect("suite is nonempty");
    let calibrated = suite.iter().all(CalibrationResult::calibrated);
    Ok(outcome(
        identical && calibrated,
        format!(
            "byte-identical tables across thread counts: {identical}; {} tests, lowest pass rate {}/{} ({}) at alpha 0.01 (need >= 98%)",
            suite.len(),
            worst.passes,
            worst.total,
            worst.test
        ),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<Outcome>); 10] = [
        ("constant-rate critical oracle", constant_critical_oracle),
        ("critical survival asymptotic", critical_survival_asymptotic),
        ("exponential Yaglom limit", exponential_yaglom),
        ("upsilon law", upsilon),
        ("spectral engine", spectral_engine),
        ("moment recursion integrity", moment_recursion),
        ("subcritical suite", subcritical_suite),
        ("supercritical suite", supercritical_suite),
        ("Q-process", q_process),
        ("reproducibility and calibration", reproducibility_and_calibration),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        failed += usize::from(!o.passed);
        println!("{} {:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.summary);
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
