use std::path::Path;

use anyhow::{bail, Context, Result};
use fkbranch::analysis::{critical_survival_check, TestReport};
use fkbranch::branching::{
    count_table, cutoff_diagnostics, mc_moments, mc_survival, sample_table, simulate, CutoffSpec, SampleTable, SimConfig,
};
use fkbranch::model::validate_hypotheses;
use fkbranch::moments::{
    critical_extrapolation, critical_limits_f, hamburger_check, solve_h, solve_moments, solve_survival,
    subcritical_limits, supercritical_limits, with_survival, HSolution, HamburgerCheck, MomentField,
    SubcriticalLimits, SupercriticalLimits,
};
use fkbranch::semigroup::{Regime, SpectralData};
use serde::Serialize;
use serde_json::Value;

use crate::artifacts::{num, Artifacts};
use crate::config::ExperimentConfig;
use crate::setup::{CalibrationSummary, Setup};

/// Validation of the resolved (calibrated) model: `true` when every hypothesis holds.
pub fn validate(setup: &Setup, out: &mut Artifacts) -> Result<bool> {
    let report = validate_hypotheses(&setup.model, &setup.dynamics, &setup.grid);
    for c in &report.checks {
        let mark = if c.passed { "pass" } else { "FAIL" };
        println!("{mark:4} {:4} {}", c.name, c.detail);
    }
    let passed = report.all_passed();
    #[derive(Serialize)]
    struct Body<'a> {
        passed: bool,
        report: &'a fkbranch::model::ValidationReport,
    }
    out.json("validation.json", &Body { passed, report: &report })?;
    Ok(passed)
}

pub fn spectrum(cfg: &ExperimentConfig, setup: &Setup, out: &mut Artifacts) -> Result<()> {
    let s = &setup.spectral;
    #[derive(Serialize)]
    struct Body<'a> {
        name: &'a str,
        regime: Regime,
        gap: f64,
        eps_crit: f64,
        model: &'a fkbranch::model::RateModel,
        calibration: &'a Option<CalibrationSummary>,
        spectral: &'a SpectralData,
    }
    out.json(
        "spectrum.json",
        &Body {
            name: &cfg.name,
            regime: s.regime(),
            gap: s.gap(),
            eps_crit: s.eps_crit(),
            model: &setup.model,
            calibration: &setup.calibration,
            spectral: s,
        },
    )?;
    let xs = setup.grid.nodes();
    out.csv(
        "eigenfunction.csv",
        &["x", "theta0", "mu0"],
        (0..xs.len()).map(|i| vec![num(xs[i]), num(s.theta0[i]), num(s.mu0[i])]),
    )?;
    println!(
        "{}: lambda0 = {:.6e}, lambda1 = {:.6e}, A = {:.6e}, B = {:.6e} ({})",
        cfg.name,
        s.lambda0,
        s.lambda1,
        s.a,
        s.b,
        s.regime().name()
    );
    Ok(())
}

/// `u_0, u_1..u_N` on one field, marched to `t_end`.
pub fn moment_field(cfg: &ExperimentConfig, setup: &Setup, t_end: f64) -> Result<MomentField> {
    let st = setup.solve_settings(cfg);
    let survival = solve_survival(t_end, &setup.gen, &setup.model, &st)?;
    let field = solve_moments(&setup.f, cfg.solver.max_order, t_end, &setup.gen, &setup.model, &st)?;
    Ok(with_survival(field, survival)?)
}

fn field_rows(field: &MomentField, times: &[f64]) -> Vec<Vec<String>> {
    let xs = field.grid.nodes();
    let mut rows = Vec::new();
    for &t in times {
        let k = field.time_index(t);
        for (i, &x) in xs.iter().enumerate() {
            let mut row = vec![num(field.times[k]), num(x)];
            for n in 0..=field.max_order() {
                row.push(num(field.at(n, k)[i]));
            }
            rows.push(row);
        }
    }
    rows
}

#[derive(Debug, Serialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum Limits {
    Critical {
        /// `(order, V_n(f, x0), extrapolated limit at x0, 1/(t+1) coefficient)`.
        orders: Vec<(usize, f64, f64, f64)>,
    },
    Subcritical {
        limits: SubcriticalLimits,
        hamburger: HamburgerCheck,
    },
    Supercritical {
        limits: SupercriticalLimits,
        /// `V_n^+(f, x0)` and `V_n^+(theta0, x0)` per order.
        at_x0: Vec<(f64, f64)>,
    },
}

pub fn regime_limits(cfg: &ExperimentConfig, setup: &Setup, field: &MomentField) -> Result<Limits> {
    let s = &setup.spectral;
    let x0 = cfg.mc.x0;
    let node = setup.grid.nearest(x0);
    Ok(match s.regime() {
        Regime::Critical => {
            let mut orders = Vec::new();
            for n in 1..=field.max_order() {
                let v = critical_limits_f(s, &setup.f, n)?;
                let (ext, corr) = critical_extrapolation(field, n, node);
                orders.push((n, v[node], ext, corr));
            }
            Limits::Critical { orders }
        }
        Regime::Subcritical => {
            let limits = subcritical_limits(s, &setup.model, field, &setup.f)?;
            let f_sup = setup.f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let hamburger = hamburger_check(s, &setup.gen, &setup.model, &limits, f_sup, cfg.solver.dt)?;
            Limits::Subcritical { limits, hamburger }
        }
        Regime::Supercritical => {
            let limits = supercritical_limits(s, &setup.gen, &setup.model, &setup.f, field.max_order())?;
            let at_x0 = limits
                .v_plus
                .iter()
                .zip(&limits.v_plus_theta)
                .map(|(v, w)| (setup.grid.interpolate(v, x0), setup.grid.interpolate(w, x0)))
                .collect();
            Limits::Supercritical { limits, at_x0 }
        }
    })
}

pub fn moments(cfg: &ExperimentConfig, setup: &Setup, out: &mut Artifacts) -> Result<()> {
    let field = moment_field(cfg, setup, cfg.solver.t_end)?;
    let mut header = vec!["t".to_string(), "x".to_string()];
    header.extend((0..=field.max_order()).map(|n| format!("u{n}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv("moments.csv", &header, field_rows(&field, &cfg.report_times()))?;
    let limits = regime_limits(cfg, setup, &field)?;
    #[derive(Serialize)]
    struct Body<'a> {
        invariants: fkbranch::moments::FieldInvariants,
        limits: &'a Limits,
    }
    out.json(
        "limits.json",
        &Body {
            invariants: field.invariants(),
            limits: &limits,
        },
    )?;
    if let Limits::Supercritical { limits, .. } = &limits {
        let xs = setup.grid.nodes();
        let mut header = vec!["x".to_string()];
        header.extend((1..=limits.v_plus.len()).map(|n| format!("v{n}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        out.csv(
            "supercritical_limits.csv",
            &header,
            (0..xs.len()).map(|i| {
                let mut row = vec![num(xs[i])];
                row.extend(limits.v_plus.iter().map(|v| num(v[i])));
                row
            }),
        )?;
    }
    println!("moments: orders 0..={} to t = {}", field.max_order(), cfg.solver.t_end);
    Ok(())
}

/// Survival field, long-time asymptotics and (supercritical) the limit `h`.
pub struct Survival {
    pub field: MomentField,
    pub asymptotics: Option<TestReport>,
    pub h: Option<HSolution>,
}

pub fn survival_analysis(cfg: &ExperimentConfig, setup: &Setup) -> Result<Survival> {
    let st = setup.solve_settings(cfg);
    let field = solve_survival(cfg.solver.t_end, &setup.gen, &setup.model, &st)?;
    let (asymptotics, h) = match setup.regime() {
        Regime::Critical => {
            let horizon = cfg.solver.asymptotic_horizon / setup.spectral.b;
            let long = solve_survival(horizon, &setup.gen, &setup.model, &st)?;
            (
                Some(critical_survival_check(&long, &setup.spectral, cfg.verify.survival_tolerance)?),
                None,
            )
        }
        Regime::Subcritical => (None, None),
        Regime::Supercritical => (None, Some(solve_h(&setup.model, &setup.dynamics, &setup.grid, cfg.solver.h_tol)?)),
    };
    Ok(Survival { field, asymptotics, h })
}

pub fn survive(cfg: &ExperimentConfig, setup: &Setup, out: &mut Artifacts) -> Result<()> {
    let sv = survival_analysis(cfg, setup)?;
    let xs = setup.grid.nodes();
    let mut rows = Vec::new();
    for &t in &cfg.report_times() {
        let k = sv.field.time_index(t);
        for (i, &x) in xs.iter().enumerate() {
            rows.push(vec![num(sv.field.times[k]), num(x), num(sv.field.at(0, k)[i])]);
        }
    }
    out.csv("survival.csv", &["t", "x", "u0"], rows)?;
    let x0 = cfg.mc.x0;
    let lambda0 = setup.spectral.lambda0;
    let curve: Vec<Vec<String>> = sv
        .field
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let u = setup.grid.interpolate(sv.field.at(0, k), x0);
            vec![num(t), num(u), num((1.0 + t) * u), num((lambda0 * t).exp() * u)]
        })
        .collect();
    out.csv("survival_x0.csv", &["t", "u0", "t_plus_1_u0", "exp_lambda0_t_u0"], curve)?;
    if let Some(h) = &sv.h {
        out.csv(
            "h.csv",
            &["x", "h", "u0_route"],
            (0..xs.len()).map(|i| vec![num(xs[i]), num(h.h[i]), num(h.u0_route[i])]),
        )?;
    }
    #[derive(Serialize)]
    struct HSummary {
        sup: f64,
        at_x0: f64,
        route_gap: f64,
        u0_converged: bool,
        u0_horizon: f64,
        degenerate: bool,
    }
    #[derive(Serialize)]
    struct Body<'a> {
        regime: Regime,
        asymptotics: &'a Option<TestReport>,
        h: Option<HSummary>,
    }
    let body = Body {
        regime: setup.regime(),
        asymptotics: &sv.asymptotics,
        h: sv.h.as_ref().map(|h| HSummary {
            sup: h.sup(),
            at_x0: h.at(x0),
            route_gap: h.route_gap,
            u0_converged: h.u0_converged,
            u0_horizon: h.u0_horizon,
            degenerate: h.degenerate,
        }),
    };
    out.json("asymptotics.json", &body)?;
    if let Some(r) = &sv.asymptotics {
        println!("{}", r.line());
    }
    Ok(())
}

/// MC sample table with the indices of the `f` and `theta0` functionals.
pub struct McRun {
    pub table: SampleTable,
    pub engine: &'static str,
    pub f_index: usize,
    pub theta_index: Option<usize>,
}

fn sim_config(cfg: &ExperimentConfig, times: &[f64]) -> SimConfig {
    let cutoff = cfg.mc.cutoff_m.map_or_else(CutoffSpec::none, CutoffSpec::new);
    SimConfig::new(cfg.mc.x0, cfg.mc.dt, times.to_vec()).with_cutoff(cutoff)
}

pub fn run_mc(cfg: &ExperimentConfig, setup: &Setup) -> Result<McRun> {
    let times = &cfg.mc.times;
    if setup.use_counts(cfg)? {
        let (b, d) = setup.constant_rates().expect("checked by use_counts");
        let table = count_table(b, d, times, cfg.mc.reps, cfg.mc.seed)?;
        let flat = setup.spectral.theta0.iter().all(|t| (t - 1.0).abs() < 1e-9);
        return Ok(McRun {
            table,
            engine: "counts",
            f_index: 0,
            theta_index: flat.then_some(0),
        });
    }
    let f = |x: f64| setup.f_curve.eval(x);
    let theta = |x: f64| setup.spectral.theta_at(x);
    let table = sample_table(
        &sim_config(cfg, times),
        &setup.model,
        &setup.dynamics,
        &[&f, &theta],
        cfg.mc.reps,
        cfg.mc.seed,
    )?;
    Ok(McRun {
        table,
        engine: "particles",
        f_index: 0,
        theta_index: Some(1),
    })
}

pub fn simulate_cmd(cfg: &ExperimentConfig, setup: &Setup, out: &mut Artifacts) -> Result<()> {
    let run = run_mc(cfg, setup)?;
    let table = &run.table;
    let mut rows = Vec::with_capacity(table.reps() * table.times.len());
    for r in 0..table.reps() {
        for (j, &t) in table.times.iter().enumerate() {
            rows.push(vec![
                r.to_string(),
                num(t),
                table.counts[j][r].to_string(),
                num(table.functionals[run.f_index][j][r]),
            ]);
        }
    }
    out.csv("counts.csv", &["replica", "t", "n", "f_total"], rows)?;

    let orders = cfg.verify.mc_orders.max(1);
    let survival = mc_survival(table)?;
    let moments = mc_moments(table, run.f_index, orders, setup.model.b_star)?;
    let mut header = vec!["t".to_string(), "survival".into(), "survival_se".into(), "survivors".into()];
    for n in 1..=orders {
        header.extend([format!("m{n}"), format!("m{n}_se"), format!("m{n}_within_yule")]);
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = survival.iter().map(|s| {
        let mut row = vec![num(s.time), num(s.estimate.value), num(s.estimate.se), s.survivors.to_string()];
        for m in moments.iter().filter(|m| (m.time - s.time).abs() < 1e-9) {
            row.extend([num(m.estimate.value), num(m.estimate.se), m.within_ceiling.to_string()]);
        }
        row
    });
    out.csv("estimators.csv", &header, rows)?;

    if run.engine == "particles" {
        let top = cfg.mc.cutoff_m.unwrap_or(setup.grid.x_max().abs().max(setup.grid.x_min().abs()));
        let m_grid: Vec<f64> = [0.25, 0.5, 0.75, 1.0].iter().map(|q| q * top).collect();
        out.csv(
            "cutoff.csv",
            &["t", "m", "p_exceed", "se"],
            cutoff_diagnostics(table, &m_grid)
                .into_iter()
                .map(|c| vec![num(c.time), num(c.m), num(c.estimate.value), num(c.estimate.se)]),
        )?;
        let sc = sim_config(cfg, &cfg.mc.times);
        let mut rows = Vec::new();
        for r in 0..cfg.mc.trajectories.min(cfg.mc.reps) {
            let traj = simulate(&sc, &setup.model, &setup.dynamics, cfg.mc.seed, r)?;
            for snap in &traj.snapshots {
                for (id, x) in snap.ids.iter().zip(&snap.traits) {
                    rows.push(vec![r.to_string(), num(snap.time), id.to_string(), num(*x)]);
                }
            }
        }
        out.csv("trajectories.csv", &["replica", "t", "id", "x"], rows)?;
    }
    println!(
        "simulate: {} replicas on the {} engine, survival at t = {}: {:.5}",
        table.reps(),
        run.engine,
        table.times.last().unwrap(),
        survival.last().unwrap().estimate.value
    );
    Ok(())
}

fn read_json(dir: &Path, name: &str) -> Result<Option<Value>> {
    let path = dir.join(name);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
}

/// Collects the artifacts in `dir` into `report.json` and `report.md`.
pub fn report(cfg: &ExperimentConfig, dir: &Path, out: &mut Artifacts) -> Result<()> {
    let Some(spectrum) = read_json(dir, "spectrum.json")? else {
        bail!("{} has no spectrum.json; run `fkbranch spectrum` first", dir.display());
    };
    let hash = cfg.hash();
    if spectrum["meta"]["config_hash"].as_str() != Some(hash.as_str()) {
        bail!("{}/spectrum.json was produced by a different config", dir.display());
    }
    let limits = read_json(dir, "limits.json")?;
    let asymptotics = read_json(dir, "asymptotics.json")?;
    let manifest = read_json(dir, "manifest.json")?;
    let mut plot_data: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    plot_data.sort();

    let sp = &spectrum["spectral"];
    let mut md = String::new();
    md.push_str(&format!("# {}\n\n", cfg.name));
    md.push_str(&format!("config hash `{hash}`, seed {}\n\n", cfg.mc.seed));
    md.push_str("## Spectrum\n\n| quantity | value |\n|---|---|\n");
    md.push_str(&format!("| regime | {} |\n", spectrum["regime"].as_str().unwrap_or("?")));
    for key in ["lambda0", "lambda1", "a", "b", "residual"] {
        md.push_str(&format!("| {key} | {} |\n", sp[key]));
    }
    if let Some(a) = &asymptotics {
        md.push_str("\n## Survival\n\n");
        if let Some(line) = a["asymptotics"].as_object().map(|_| a["asymptotics"].clone()) {
            md.push_str(&format!("- asymptotics: {} (value {}, threshold {})\n", line["status"], line["value"], line["threshold"]));
        }
        if a["h"].is_object() {
            md.push_str(&format!("- h(x0) = {}, sup h = {}\n", a["h"]["at_x0"], a["h"]["sup"]));
        }
    }
    if let Some(l) = &limits {
        md.push_str(&format!("\n## Limits\n\n- regime limits: {}\n", l["limits"]["regime"]));
    }
    if let Some(m) = &manifest {
        md.push_str("\n## Verification\n\n| check | kind | status | value | threshold |\n|---|---|---|---|---|\n");
        for (kind, key) in [("hard", "hard"), ("statistical", "statistical")] {
            for c in m[key].as_array().into_iter().flatten() {
                md.push_str(&format!(
                    "| {} | {kind} | {} | {} | {} |\n",
                    c["name"].as_str().unwrap_or("?"),
                    c["status"].as_str().unwrap_or("?"),
                    c["value"],
                    c["threshold"]
                ));
            }
        }
    }
    md.push_str("\n## Plot data\n\n");
    for f in &plot_data {
        md.push_str(&format!("- `{f}`\n"));
    }
    let md_path = out.dir().join("report.md");
    std::fs::write(&md_path, md).with_context(|| format!("writing {}", md_path.display()))?;

    #[derive(Serialize)]
    struct Body {
        spectrum: Value,
        limits: Option<Value>,
        asymptotics: Option<Value>,
        manifest: Option<Value>,
        plot_data: Vec<String>,
    }
    let mut spectrum = spectrum;
    if let Some(obj) = spectrum.as_object_mut() {
        obj.remove("meta");
    }
    out.json(
        "report.json",
        &Body {
            spectrum,
            limits,
            asymptotics,
            manifest,
            plot_data,
        },
    )?;
    println!("report written to {}", md_path.display());
    Ok(())
}
