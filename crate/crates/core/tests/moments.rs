use std::f64::consts::{E, FRAC_1_SQRT_2};

use fkbranch::model::{Curve, DynamicsSpec, JumpKernel, RateModel};
use fkbranch::moments::*;
use fkbranch::semigroup::*;
use fkbranch::{Boundary, Error, Grid};

fn toy(b: f64, d: f64) -> (RateModel, GeneratorMatrix, SpectralData) {
    let grid = Grid::new(-1.0, 1.0, 5, Boundary::Reflecting).unwrap();
    let model = RateModel::constant(b, d);
    let gen = build_generator(&model, &DynamicsSpec::brownian(), &grid).unwrap();
    let s = principal_eigentriple(&gen, &model, &grid).unwrap();
    (model, gen, s)
}

fn settings(dt: f64, record_dt: f64) -> SolveSettings {
    SolveSettings { dt: Some(dt), record_dt }
}

fn oscillator(theta: f64) -> RateModel {
    RateModel::new(Curve::constant(1.0), Curve::polynomial(&[1.0 - theta, 0.0, 1.0]), 1.0).unwrap()
}

/// `V = 2.5 - x^2`, supercritical with `lambda0 = 1/sqrt(2) - 2.5`.
fn super_model() -> RateModel {
    RateModel::new(Curve::constant(3.0), Curve::polynomial(&[0.5, 0.0, 1.0]), 3.0).unwrap()
}

fn bump_model() -> RateModel {
    RateModel::new(
        Curve::gaussian_bump(0.4, 0.6, 0.0, 1.0),
        Curve::abs_polynomial(&[0.3, 1.0]),
        1.0,
    )
    .unwrap()
}

fn three_dynamics() -> Vec<DynamicsSpec> {
    vec![
        DynamicsSpec::diffusion(Curve::polynomial(&[0.0, 0.5])),
        DynamicsSpec::diffusion_with_jumps(Curve::zero(), JumpKernel::gaussian(1.0, 0.5)),
        DynamicsSpec::drifted_jump(JumpKernel::gaussian(1.0, 1.0).with_density_floor(0.1, 1.0)),
    ]
}

fn rel_sup(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

#[test]
fn critical_survival_is_harmonic() {
    let (model, gen, _) = toy(1.0, 1.0);
    let field = solve_survival(99.0, &gen, &model, &settings(0.01, 1.0)).unwrap();
    for t in [1.0, 9.0, 99.0] {
        let k = field.time_index(t);
        assert!((field.times[k] - t).abs() < 1e-9);
        for v in field.at(0, k) {
            assert!((v - 1.0 / (1.0 + t)).abs() < 1e-6, "t={t}: {v}");
        }
    }
    assert!(field.invariants().holds(1e-12));
}

#[test]
fn critical_second_moment_and_yule_moments() {
    let (model, gen, _) = toy(1.0, 1.0);
    let ones = vec![1.0; 5];
    let field = solve_moments(&ones, 2, 1.0, &gen, &model, &settings(1e-3, 0.1)).unwrap();
    let k = field.time_index(1.0);
    assert!((field.at(1, k)[2] - 1.0).abs() < 1e-10);
    assert!((field.at(2, k)[2] - 3.0).abs() < 1e-6);

    let (yule, gen, _) = toy(1.0, 0.0);
    let field = solve_moments(&ones, 2, 1.0, &gen, &yule, &settings(1e-3, 0.1)).unwrap();
    let k = field.time_index(1.0);
    assert!((field.at(1, k)[0] - E).abs() < 1e-5);
    assert!((field.at(2, k)[0] - (2.0 * E * E - E)).abs() < 1e-5, "{}", field.at(2, k)[0]);

    let zero = vec![0.0; 5];
    let field = solve_moments(&zero, 3, 1.0, &gen, &yule, &SolveSettings::default()).unwrap();
    assert!(field.moments.iter().flatten().flatten().all(|v| *v == 0.0));
}

#[test]
fn linear_survival_cases() {
    let (pure_death, gen, _) = toy(0.0, 0.7);
    let field = solve_survival(2.0, &gen, &pure_death, &settings(1e-3, 0.5)).unwrap();
    let k = field.time_index(2.0);
    assert!((field.at(0, k)[1] - (-1.4f64).exp()).abs() < 1e-6);
    let (no_death, gen, _) = toy(0.8, 0.0);
    let field = solve_survival(2.0, &gen, &no_death, &SolveSettings::default()).unwrap();
    assert!(field.order(0).unwrap().iter().flatten().all(|v| (v - 1.0).abs() < 1e-14));
}

#[test]
fn survival_is_a_nonlinear_semigroup() {
    let grid = Grid::new(-8.0, 8.0, 321, Boundary::Absorbing).unwrap();
    let model = bump_model();
    let gen = build_generator(&model, &DynamicsSpec::brownian(), &grid).unwrap();
    let s = settings(0.01, 0.5);
    let full = solve_survival(3.0, &gen, &model, &s).unwrap();
    let k0 = full.time_index(1.0);
    let restart = solve_survival_from(full.at(0, k0), 2.0, &gen, &model, &s).unwrap();
    let last = restart.times.len() - 1;
    let diff = rel_sup(restart.at(0, last), full.at(0, full.times.len() - 1));
    assert!(diff < 1e-6, "{diff}");
}

#[test]
fn duhamel_residuals_on_all_dynamics() {
    let grid = Grid::new(-8.0, 8.0, 321, Boundary::Absorbing).unwrap();
    let model = bump_model();
    let f = grid.sample(|x| 1.0 / (1.0 + x * x));
    for dynamics in three_dynamics() {
        let gen = build_generator(&model, &dynamics, &grid).unwrap();
        let s = settings(0.005, 0.05);
        let moments = solve_moments(&f, 4, 2.0, &gen, &model, &s).unwrap();
        let survival = solve_survival(2.0, &gen, &model, &s).unwrap();
        let field = with_survival(moments, survival).unwrap();
        for t in [0.4, 0.8, 1.2, 1.6, 2.0] {
            let k = field.time_index(t);
            for n in 0..=4 {
                let r = duhamel_residual(&field, &f, n, k, &gen, &model).unwrap();
                assert!(r.relative < 1e-4, "{}: n={n} t={t} residual {:.3e}", dynamics.variant_name(), r.relative);
            }
        }
        let ev = evolve_with(&gen, &f, 2.0, 0.005, false).unwrap();
        assert!(rel_sup(field.at(1, field.times.len() - 1), &ev) < 1e-8);
    }
}

#[test]
fn order_inequalities_hold() {
    let grid = Grid::new(-8.0, 8.0, 321, Boundary::Absorbing).unwrap();
    let model = bump_model();
    for dynamics in three_dynamics() {
        let gen = build_generator(&model, &dynamics, &grid).unwrap();
        let ones = vec![1.0; grid.len()];
        let s = settings(0.01, 0.1);
        let field = with_survival(
            solve_moments(&ones, 3, 3.0, &gen, &model, &s).unwrap(),
            solve_survival(3.0, &gen, &model, &s).unwrap(),
        )
        .unwrap();
        let inv = field.invariants();
        assert!(inv.holds(1e-12), "{}: {inv:?}", dynamics.variant_name());
    }
}

#[test]
fn blow_up_guard_trips() {
    let (model, gen, _) = toy(1.0, 0.0);
    let f = vec![1.0; 5];
    // Growth rate 6 against a declared b* = 1 overshoots the ceiling.
    let err = solve_moments(&f, 2, 2.0, &gen.shifted(5.0), &model, &settings(0.01, 0.5)).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)), "{err}");
}

#[test]
fn h_supercritical_constant_both_routes() {
    let grid = Grid::new(-1.0, 1.0, 5, Boundary::Reflecting).unwrap();
    let model = RateModel::constant(2.0, 1.0);
    let h = solve_h(&model, &DynamicsSpec::brownian(), &grid, 1e-7).unwrap();
    assert!(h.u0_converged);
    for (q, u) in h.h.iter().zip(&h.u0_route) {
        assert!((q - 0.5).abs() < 1e-6 && (u - 0.5).abs() < 1e-6, "{q} {u}");
    }
    assert!(!h.degenerate);
}

#[test]
fn h_vanishes_below_supercritical() {
    let grid = Grid::new(-1.0, 1.0, 5, Boundary::Reflecting).unwrap();
    let sub = solve_h(&RateModel::constant(0.5, 1.0), &DynamicsSpec::brownian(), &grid, 1e-6).unwrap();
    assert!(sub.sup() < 1e-6 && sub.u0_converged);
    let crit = solve_h(&RateModel::constant(1.0, 1.0), &DynamicsSpec::brownian(), &grid, 1e-6).unwrap();
    assert!(crit.sup() < 1e-6);
    assert!(!crit.u0_converged);
    let g = Grid::new(-8.0, 8.0, 321, Boundary::Absorbing).unwrap();
    let osc = solve_h(&oscillator(0.0), &DynamicsSpec::brownian(), &g, 1e-6).unwrap();
    assert!(osc.sup() < 1e-6);
}

#[test]
fn h_degenerate_without_deaths() {
    let grid = Grid::new(-1.0, 1.0, 5, Boundary::Reflecting).unwrap();
    let h = solve_h(&RateModel::constant(1.0, 0.0), &DynamicsSpec::brownian(), &grid, 1e-6).unwrap();
    assert!(h.degenerate);
    assert!(h.u0_route.iter().all(|v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn h_supercritical_oscillator_is_bounded_away_from_one() {
    let grid = Grid::new(-8.0, 8.0, 321, Boundary::Absorbing).unwrap();
    let model = super_model();
    let h = solve_h(&model, &DynamicsSpec::brownian(), &grid, 1e-6).unwrap();
    let interior: Vec<f64> = h.h[40..281].to_vec();
    assert!(interior.iter().all(|v| *v > 0.0));
    assert!(h.sup() < 1.0);
    assert!(h.u0_converged && h.route_gap < 3e-6, "gap {}", h.route_gap);
}

#[test]
fn laplace_riccati_closed_form() {
    let (model, gen, _) = toy(1.0, 1.0);
    let f = vec![1.0; 5];
    let zero = laplace_functional(&f, (0.0, 0.0), 1.0, &gen, &model, &SolveSettings::default()).unwrap();
    assert!(zero.re.iter().chain(&zero.im).all(|v| *v == 0.0));
    let w = -0.3;
    let h = laplace_functional(&f, (w, 0.0), 1.0, &gen, &model, &settings(0.01, 1.0)).unwrap();
    let h0 = 1.0 - f64::exp(w);
    let exact = h0 / (1.0 + h0);
    assert!(h.re.iter().all(|v| (v - exact).abs() < 1e-6));
    assert!(h.im.iter().all(|v| v.abs() < 1e-15));
    let err = laplace_functional(&f, (0.5, 0.0), 1.0, &gen, &model, &SolveSettings::default()).unwrap_err();
    assert!(matches!(err, Error::Domain(_)));
}

#[test]
fn laplace_derivatives_reproduce_moments() {
    let grid = Grid::new(-8.0, 8.0, 161, Boundary::Absorbing).unwrap();
    let model = bump_model();
    let gen = build_generator(&model, &DynamicsSpec::diffusion(Curve::polynomial(&[0.0, 0.5])), &grid).unwrap();
    let f = grid.sample(|x| (-x * x / 2.0).exp());
    let s = settings(2e-3, 0.5);
    let derivs = laplace_derivatives(&f, 3, 1.0, &gen, &model, &s, 0.5, 32).unwrap();
    let field = solve_moments(&f, 3, 1.0, &gen, &model, &s).unwrap();
    let last = field.times.len() - 1;
    for n in 1..=3 {
        let minus_u: Vec<f64> = field.at(n, last).iter().map(|v| -v).collect();
        let r = rel_sup(&derivs[n - 1], &minus_u);
        let tol = if n == 1 { 1e-5 } else { 1e-4 };
        assert!(r < tol, "order {n}: {r:.3e}");
    }
}

#[test]
fn critical_limit_formulas() {
    let (_, _, s) = toy(1.0, 1.0);
    let lim = critical_limits(&s, 4).unwrap();
    for (n, v) in lim.v.iter().enumerate() {
        let fact: f64 = (1..=n + 1).map(|k| k as f64).product();
        assert!(v.iter().all(|x| (x - fact).abs() < 1e-9));
    }
    let (_, _, sub) = toy(0.5, 1.0);
    assert!(matches!(critical_limits(&sub, 2), Err(Error::Regime { .. })));
}

#[test]
fn critical_oscillator_second_moment_limit() {
    let grid = Grid::new(-8.0, 8.0, 801, Boundary::Absorbing).unwrap();
    let dynamics = DynamicsSpec::brownian();
    let cal = calibrate_criticality(
        |theta| build_generator(&oscillator(theta), &dynamics, &grid),
        (0.5, 1.0),
        None,
        1e-9,
    )
    .unwrap();
    let model = oscillator(cal.theta);
    let gen = build_generator(&model, &dynamics, &grid).unwrap();
    let s = principal_eigentriple_with(&gen, &model, &grid, &SpectralOptions { fit_h: false, dt: None }).unwrap();
    assert_eq!(s.regime(), Regime::Critical);
    let lim = critical_limits(&s, 2).unwrap();
    let ones = vec![1.0; grid.len()];
    let field = solve_moments(&ones, 2, 60.0, &gen, &model, &settings(0.01, 1.0)).unwrap();
    let mid = grid.nearest(0.0);
    let (v2, _) = critical_extrapolation(&field, 2, mid);
    let target = lim.v[1][mid];
    assert!((v2 / target - 1.0).abs() < 0.01, "{v2} vs {target}");
    let (v1, _) = critical_extrapolation(&field, 1, mid);
    assert!((v1 / lim.v[0][mid] - 1.0).abs() < 0.01);
}

/// Moments of the geometric law on {1, 2, ...} with `P(N = k) = (1-p) p^{k-1}`.
fn geometric_moment(p: f64, n: i32) -> f64 {
    (1..4000).map(|k| (1.0 - p) * p.powi(k - 1) * (k as f64).powi(n)).sum()
}

#[test]
fn subcritical_constant_limits() {
    let (model, gen, s) = toy(0.5, 1.0);
    assert_eq!(s.regime(), Regime::Subcritical);
    assert!((s.lambda0 - 0.5).abs() < 1e-12);
    let ones = vec![1.0; 5];
    let st = settings(0.005, 0.05);
    let horizon = 40.0;
    let field = with_survival(
        solve_moments(&ones, 8, horizon, &gen, &model, &st).unwrap(),
        solve_survival(horizon, &gen, &model, &st).unwrap(),
    )
    .unwrap();
    let lim = subcritical_limits(&s, &model, &field, &ones).unwrap();
    let kappa = lim.kappa.unwrap();
    assert!((kappa - 0.5).abs() < 1e-4, "kappa {kappa}");
    // e^{lambda0 t} u0 at t = 20 against the closed form.
    let t = 20.0;
    let closed = (0.5f64 * t).exp() * (-0.5f64 * t).exp() * 0.5 / (1.0 - 0.5 * (-0.5f64 * t).exp());
    let k = field.time_index(t);
    assert!(((0.5 * t).exp() * field.at(0, k)[0] - closed).abs() < 1e-4);
    assert!((closed - kappa).abs() < 1e-4);
    assert!(kappa >= lim.kappa_floor.unwrap() && kappa <= s.a);
    // Yaglom moments: V_n / K = E[N^n] for the geometric law with p = b/d.
    for n in 1..=4 {
        let target = geometric_moment(0.5, n as i32);
        let got = lim.v_minus[n - 1] / kappa;
        assert!((got / target - 1.0).abs() < 1e-3, "n={n}: {got} vs {target}");
    }
    let check = hamburger_check(&s, &gen, &model, &lim, 1.0, Some(0.01)).unwrap();
    assert!(check.respected);
    assert!((check.r_star - 1.25f64.ln()).abs() < 1e-6);
    assert!(check.carleman.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(lim.beta, subcritical_betas(s.lambda0, s.lambda1, 8));
}

#[test]
fn subcritical_without_births_keeps_mass() {
    let (model, gen, s) = toy(0.0, 1.0);
    let ones = vec![1.0; 5];
    let st = settings(0.01, 0.1);
    let field = with_survival(
        solve_moments(&ones, 2, 30.0, &gen, &model, &st).unwrap(),
        solve_survival(30.0, &gen, &model, &st).unwrap(),
    )
    .unwrap();
    let lim = subcritical_limits(&s, &model, &field, &ones).unwrap();
    assert!((lim.kappa.unwrap() - s.a).abs() < 1e-14);
}

#[test]
fn beta_sequences() {
    let b = subcritical_betas(1.0, 3.0, 3);
    assert_eq!(b[0], 2.0);
    assert!((b[1] - 2.0 / 3.0).abs() < 1e-15 && (b[2] - 2.0 / 3.0).abs() < 1e-15);
    let b = supercritical_betas(-1.0, 1.0, 2);
    assert_eq!(b[0], 2.0);
    assert!((b[1] - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn supercritical_constant_moments() {
    let (model, gen, s) = toy(2.0, 1.0);
    assert_eq!(s.regime(), Regime::Supercritical);
    let ones = vec![1.0; 5];
    let lim = supercritical_limits(&s, &gen, &model, &ones, 3).unwrap();
    // W law: atom 1/2 at zero, otherwise exponential with mean 2.
    for (n, want) in [(1usize, 1.0), (2, 4.0), (3, 24.0)] {
        assert!(lim.v_plus[n - 1].iter().all(|v| (v - want).abs() < 1e-10), "n={n}: {:?}", lim.v_plus[n - 1]);
    }
    let q = supercritical_quadrature(&s, &gen, &model, &lim, 2, 30.0, 0.002).unwrap();
    assert!(q.iter().all(|v| (v - 4.0).abs() < 1e-4), "{q:?}");
}

#[test]
fn supercritical_factorization() {
    let grid = Grid::new(-8.0, 8.0, 321, Boundary::Absorbing).unwrap();
    let model = super_model();
    let gen = build_generator(&model, &DynamicsSpec::brownian(), &grid).unwrap();
    let s = principal_eigentriple_with(&gen, &model, &grid, &SpectralOptions { fit_h: false, dt: None }).unwrap();
    for f in [grid.sample(|x| 1.0 / (1.0 + x * x)), grid.sample(|x| (x - 0.5).cos().abs())] {
        let lim = supercritical_limits(&s, &gen, &model, &f, 4).unwrap();
        assert!(lim.factorization_error < 1e-4);
        let pi = s.project(&f);
        assert!(rel_sup(&lim.v_plus[0], &pi) < 1e-14);
    }
}

#[test]
fn hamburger_arithmetic_and_extremal_recursion() {
    let hb = hamburger_bound(1.0, 1.0, 1).unwrap();
    assert!((hb.r_star - 0.223_143_551_314_209_7).abs() < 1e-12);
    assert!((hb.bound - 1.0 / (2.0 * hb.r_star)).abs() < 1e-12);
    for (a1, eta) in [(1.0, 1.0), (0.3, 2.0), (2.0, 0.1)] {
        let a = hamburger_recursion(a1, eta, 12);
        for (i, v) in a.iter().enumerate().skip(1) {
            assert!(*v <= hamburger_bound(a1, eta, i + 1).unwrap().bound, "a1={a1} eta={eta} n={}", i + 1);
        }
    }
    assert!(hamburger_bound(0.0, 1.0, 1).is_err());
}

#[test]
fn calibration_finds_oscillator_threshold() {
    let grid = Grid::new(-7.0, 7.0, 2801, Boundary::Absorbing).unwrap();
    let dynamics = DynamicsSpec::brownian();
    let build = |theta: f64| build_generator(&oscillator(theta), &dynamics, &grid);
    let cal = calibrate_criticality(build, (0.0, 2.0), None, 1e-7).unwrap();
    assert!((cal.theta - FRAC_1_SQRT_2).abs() < 1e-5, "{}", cal.theta);
    assert!(cal.lambda0.abs() <= 1e-7);
    let again = calibrate_criticality(build, (0.0, 2.0), Some(cal.theta), 1e-7).unwrap();
    assert_eq!(again.theta, cal.theta);
    assert_eq!(again.history.len(), 1);
    let l: Vec<f64> = [0.2, 0.6, 1.0].iter().map(|t| principal_eigenvalue(&build(*t).unwrap()).unwrap()).collect();
    assert!(l[0] > l[1] && l[1] > l[2]);
    assert!(calibrate_criticality(build, (2.0, 3.0), None, 1e-7).is_err());
}

#[test]
fn picard_iterates_converge_to_survival() {
    let grid = Grid::new(-8.0, 8.0, 161, Boundary::Absorbing).unwrap();
    let model = bump_model();
    let gen = build_generator(&model, &DynamicsSpec::brownian(), &grid).unwrap();
    let tau = picard_window(&model, &gen);
    let c = 1.0 + (1.0f64).exp();
    assert!(tau > 0.0 && tau <= 1.0 / (4.0 * 4.0 * model.b_star) + 1e-15 && tau >= 1.0 / (4.0 * c * c));
    let v0 = vec![1.0; grid.len()];
    let iterates = picard_survival(&v0, tau, 8, &gen, &model, 1e-4).unwrap();
    let exact = solve_survival_from(&v0, tau, &gen, &model, &SolveSettings { dt: Some(1e-4), record_dt: tau }).unwrap();
    let target = exact.at(0, exact.times.len() - 1);
    let errs: Vec<f64> = iterates.iter().map(|w| rel_sup(w, target)).collect();
    assert!(errs.windows(2).take(4).all(|w| w[1] < w[0]), "{errs:?}");
    assert!(*errs.last().unwrap() < 1e-7, "{errs:?}");
}

#[test]
fn critical_second_moment_uses_birth_weighted_b() {
    // Non-constant b at criticality separates B = \int theta0^2 b d mu0 from \int theta0^2 d mu0.
    let grid = Grid::new(-8.0, 8.0, 401, Boundary::Absorbing).unwrap();
    let dynamics = DynamicsSpec::brownian();
    let family = |c: f64| {
        RateModel::new(Curve::gaussian_bump(0.2, 1.8, 0.0, 1.0), Curve::polynomial(&[c, 0.0, 1.0]), 2.0).unwrap()
    };
    let cal = calibrate_criticality(|c| build_generator(&family(c), &dynamics, &grid), (0.0, 2.0), None, 1e-9).unwrap();
    let model = family(cal.theta);
    let gen = build_generator(&model, &dynamics, &grid).unwrap();
    let s = principal_eigentriple_with(&gen, &model, &grid, &SpectralOptions { fit_h: false, dt: None }).unwrap();
    let unweighted: f64 = s.theta0.iter().zip(&s.mu0).map(|(t, m)| t * t * m).sum();
    assert!((s.b / unweighted - 1.0).abs() > 0.1);
    let ones = vec![1.0; grid.len()];
    let field = solve_moments(&ones, 2, 60.0, &gen, &model, &settings(0.01, 1.0)).unwrap();
    let mid = grid.nearest(0.0);
    let (v2, _) = critical_extrapolation(&field, 2, mid);
    let with_b = 2.0 * s.theta0[mid] * s.a * s.a * s.b;
    let without_b = 2.0 * s.theta0[mid] * s.a * s.a * unweighted;
    assert!((v2 / with_b - 1.0).abs() < 0.01, "{v2} vs {with_b}");
    assert!((v2 / without_b - 1.0).abs() > 0.05);
}
