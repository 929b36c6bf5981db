use anyhow::{bail, Result};
use fkbranch::analysis::{
    moment_z_test, subcritical_yaglom_test, upsilon_test, w_infty_diagnostics, yaglom_test_critical, ConditionalSample,
    Status, TestReport,
};
use fkbranch::branching::{birth_death_transition, martingale_means, mc_moments, mc_survival, Estimate};
use fkbranch::moments::MomentField;
use fkbranch::semigroup::Regime;
use serde::Serialize;

use crate::artifacts::Artifacts;
use crate::commands::{moment_field, regime_limits, run_mc, survival_analysis, Limits, McRun};
use crate::config::ExperimentConfig;
use crate::setup::Setup;

const EIGEN_RESIDUAL_MAX: f64 = 1e-6;
const CLOSED_FORM_TOL: f64 = 1e-6;
const KAPPA_TOL: f64 = 1e-4;
const FACTORIZATION_TOL: f64 = 1e-4;
const SURVIVAL_N_SE: f64 = 3.0;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub regime: Regime,
    pub lambda0: f64,
    pub engine: String,
    pub hard: Vec<TestReport>,
    pub statistical: Vec<TestReport>,
    pub hard_passed: bool,
    pub statistical_failed: usize,
    pub inconclusive: usize,
}

/// Statistical tests never abort the battery: errors become inconclusive reports.
fn soft(name: &str, n: usize, r: fkbranch::Result<TestReport>) -> TestReport {
    r.unwrap_or_else(|e| TestReport::inconclusive(name, n, e.to_string()))
}

fn hard(name: &str, statistic: &str, value: f64, threshold: f64) -> TestReport {
    TestReport::new(name, statistic, value, threshold, 0, value <= threshold)
}

fn index_of(field: &MomentField, t: f64) -> Result<usize> {
    let k = field.time_index(t);
    if (field.times[k] - t).abs() > 1e-9 {
        bail!("mc time {t} is not on the solver record grid (record_dt = {})", field.record_spacing());
    }
    Ok(k)
}

pub fn verify(cfg: &ExperimentConfig, setup: &Setup, out: &mut Artifacts) -> Result<Manifest> {
    let s = &setup.spectral;
    let regime = s.regime();
    let x0 = cfg.mc.x0;
    let grid = &setup.grid;
    let mut hard_checks = Vec::new();
    let mut stats = Vec::new();

    hard_checks.push(hard("eigen_residual", "|G theta0 + lambda0 theta0|", s.residual, EIGEN_RESIDUAL_MAX));

    let t_last = *cfg.mc.times.last().unwrap();
    let field = moment_field(cfg, setup, cfg.solver.t_end.max(t_last))?;
    let inv = field.invariants();
    let scale = field
        .moments
        .iter()
        .flatten()
        .flatten()
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let worst = [
        inv.survival_range_violation,
        inv.survival_increase,
        inv.negative_moment,
        inv.yule_excess,
        inv.jensen_violation,
        inv.survival_above_mean,
        inv.cauchy_schwarz_violation,
    ]
    .into_iter()
    .fold(0.0f64, f64::max);
    hard_checks.push(hard("field_invariants", "largest violation / scale", worst / scale, 1e-9));

    if let Some((b, d)) = setup.constant_rates() {
        let err = cfg.mc.times.iter().try_fold(0.0f64, |m, &t| -> Result<f64> {
            let k = index_of(&field, t)?;
            let exact = 1.0 - birth_death_transition(b, d, t).alpha;
            Ok(m.max((grid.interpolate(field.at(0, k), x0) - exact).abs()))
        })?;
        hard_checks.push(hard("closed_form_survival", "max |u0 - P(N_t > 0)|", err, CLOSED_FORM_TOL));
    }

    let sv = survival_analysis(cfg, setup)?;
    if let Some(r) = sv.asymptotics {
        stats.push(r);
    }
    let limits = regime_limits(cfg, setup, &field)?;
    match &limits {
        Limits::Subcritical { limits, hamburger } => {
            let bound = hamburger
                .bounds
                .iter()
                .zip(&limits.v_minus)
                .map(|(b, v)| v.abs() / b)
                .fold(0.0f64, f64::max);
            hard_checks.push(
                hard("hamburger_bound", "max |V_n| / bound", bound, 1.0).require(hamburger.respected),
            );
            if let (Some(k), Some(floor)) = (limits.kappa, limits.kappa_floor) {
                hard_checks.push(hard("kappa_floor", "(V_1)^2 / V_2 - kappa", floor - k, 1e-9 * k.abs().max(1.0)));
                if let Some((b, d)) = setup.constant_rates() {
                    hard_checks.push(hard("kappa_closed_form", "|kappa - (1 - b/d)|", (k - (1.0 - b / d)).abs(), KAPPA_TOL));
                }
            }
        }
        Limits::Supercritical { limits, .. } => {
            hard_checks.push(hard(
                "factorization",
                "max |V_n(f) - V_n(theta0) (int f dmu0)^n| / |V_n(f)|",
                limits.factorization_error,
                FACTORIZATION_TOL,
            ));
        }
        Limits::Critical { .. } => {}
    }
    if let Some(h) = &sv.h {
        if h.u0_converged {
            hard_checks.push(hard("h_routes", "|h_Q - h_u0|", h.route_gap, 3.0 * h.tol));
        }
        if let Some((b, d)) = setup.constant_rates() {
            let err = h.h.iter().fold(0.0f64, |m, v| m.max((v - (1.0 - d / b)).abs()));
            hard_checks.push(hard("h_closed_form", "max |h - (1 - d/b)|", err, CLOSED_FORM_TOL));
        }
    }

    let run = run_mc(cfg, setup)?;
    statistical_battery(cfg, setup, &run, &field, &limits, sv.h.as_ref().map(|h| h.at(x0)), &mut stats)?;

    let hard_passed = hard_checks.iter().all(TestReport::passed);
    let manifest = Manifest {
        regime,
        lambda0: s.lambda0,
        engine: run.engine.to_string(),
        statistical_failed: stats.iter().filter(|r| r.status == Status::Fail).count(),
        inconclusive: stats.iter().filter(|r| r.status == Status::Inconclusive).count(),
        hard: hard_checks,
        statistical: stats,
        hard_passed,
    };
    out.json("manifest.json", &manifest)?;
    for r in manifest.hard.iter().chain(&manifest.statistical) {
        println!("{}", r.line());
    }
    Ok(manifest)
}

fn statistical_battery(
    cfg: &ExperimentConfig,
    setup: &Setup,
    run: &McRun,
    field: &MomentField,
    limits: &Limits,
    h_x0: Option<f64>,
    out: &mut Vec<TestReport>,
) -> Result<()> {
    let s = &setup.spectral;
    let (x0, grid, table) = (cfg.mc.x0, &setup.grid, &run.table);
    let reps = table.reps();
    let alpha = cfg.verify.alpha;
    let n_se = cfg.verify.n_se;
    let t_last = *cfg.mc.times.last().unwrap();

    let survival = mc_survival(table)?;
    let mut targets = Vec::new();
    for row in &survival {
        targets.push(grid.interpolate(field.at(0, index_of(field, row.time)?), x0));
    }
    let estimates: Vec<Estimate> = survival.iter().map(|r| r.estimate).collect();
    out.push(soft("mc_survival", reps, moment_z_test("mc_survival", &estimates, &targets, SURVIVAL_N_SE, reps)));

    let orders = cfg.verify.mc_orders.min(field.max_order() as u32).max(1);
    let rows = mc_moments(table, run.f_index, orders, setup.model.b_star)?;
    let k_last = index_of(field, t_last)?;
    let last: Vec<_> = rows.iter().filter(|r| (r.time - t_last).abs() < 1e-9).collect();
    let estimates: Vec<Estimate> = last.iter().map(|r| r.estimate).collect();
    let targets: Vec<f64> = last
        .iter()
        .map(|r| grid.interpolate(field.at(r.order as usize, k_last), x0))
        .collect();
    let ceiling_ok = rows.iter().all(|r| r.within_ceiling);
    out.push(
        soft("mc_moments", reps, moment_z_test("mc_moments", &estimates, &targets, n_se, reps)).require(ceiling_ok),
    );

    let conditional = |t: f64| ConditionalSample::from_table(table, run.f_index, t);
    match (s.regime(), limits) {
        (Regime::Critical, _) => {
            out.push(soft("yaglom_critical", reps, conditional(t_last).and_then(|c| yaglom_test_critical(&c, s, alpha))));
            out.push(soft(
                "upsilon_law",
                reps,
                conditional(t_last).and_then(|c| upsilon_test(&c, s, &setup.f, alpha)),
            ));
        }
        (Regime::Subcritical, Limits::Subcritical { limits, .. }) => {
            out.push(soft(
                "yaglom_subcritical",
                reps,
                conditional(t_last).and_then(|c| subcritical_yaglom_test(&[c], limits, s)),
            ));
        }
        (Regime::Supercritical, Limits::Supercritical { limits, .. }) => {
            let Some(ti) = run.theta_index else {
                out.push(TestReport::inconclusive("martingale", reps, "no theta0 functional on this engine"));
                return Ok(());
            };
            let theta_x = s.theta_at(x0);
            let means = martingale_means(table, ti, s.lambda0);
            let targets = vec![theta_x; means.len()];
            out.push(soft("martingale", reps, moment_z_test("martingale", &means, &targets, 3.0, reps)));
            let j = table.time_index(t_last)?;
            let w: Vec<f64> = table.values(ti, j).iter().map(|v| (s.lambda0 * t_last).exp() * v).collect();
            let v_theta: Vec<f64> = limits
                .v_plus_theta
                .iter()
                .take(3)
                .map(|v| grid.interpolate(v, x0))
                .collect();
            out.push(soft(
                "w_infinity",
                reps,
                w_infty_diagnostics(&w, t_last, s, theta_x, h_x0.unwrap_or(f64::NAN), &v_theta),
            ));
        }
        _ => unreachable!("limits follow the regime"),
    }
    Ok(())
}
