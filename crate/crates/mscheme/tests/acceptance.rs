//! End-to-end acceptance studies. Each test runs one pinned benchmark and
//! prints a single pass/fail line; run with `--nocapture` to see them.

use mscheme::bench::{
    barenblatt, contraction_rate, exact_modified_pme, fit_order, measure_contraction, sweep,
    theorem_grad_coeff, BarenblattParams, ContractionProbe, ExactTriple,
};
use mscheme::config::{
    build_model, build_problem, default_gamma, initial_fields, parse_config, scheme_config,
    RunConfig,
};
use mscheme::fem::{
    assemble_mass_p1, assemble_stiffness_p1, build_mesh, BcKind, BoundarySpec, Csr, Domain,
    FeProblem, FieldP0, FieldP1, SideSpec, Weight,
};
use mscheme::model::{regularize, NonlinearityPhi, RegularizedPhi};
use mscheme::scheme::{
    clip_positive, solve_nonlinear_step, time_discrete_residual, SchemeConfig, SchemeKind,
};
use mscheme::stepper::{
    h_factor_field, initial_w, prepare_run, run, RunOptions, RunRecord, TimeGrid,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::sync::Arc;

fn report(number: usize, label: &str, ok: bool, detail: &str) {
    println!(
        "criterion {number} ({label}): {} [{detail}]",
        if ok { "pass" } else { "fail" }
    );
    assert!(ok, "criterion {number} ({label}) failed: {detail}");
}

fn pme_config(h: f64, tol: f64, m_param: f64) -> RunConfig {
    let text = format!(
        r#"
        h = {h}

        [model]
        preset = "pme"
        m = 4.0
        beta_reaction = 1.0

        [domain]
        kind = "interval"
        a = -1.0
        b = 1.0

        [time]
        t_start = 0.5
        t_end = 1.0
        tau = 0.01

        [scheme]
        kind = "m_scheme"
        m = {m_param}
        tol = {tol}

        [initial]
        kind = "barenblatt"
        m = 4.0
        beta = 1.0
        t0 = 0.5
        "#
    );
    parse_config(&text, &[]).expect("pinned config parses")
}

fn biofilm_config(h: f64, tau: f64) -> RunConfig {
    let text = format!(
        r#"
        h = {h}
        v_initial = 1.0

        [model]
        preset = "biofilm"
        k1 = 0.4
        k2 = 0.01
        k3 = 1.0
        k4 = 0.42
        d1 = 1e-6
        mu = 0

        [domain]
        kind = "interval"
        a = -1.0
        b = 1.0

        [time]
        t_end = 1.2
        tau = {tau}

        [scheme]
        kind = "m_scheme"
        m = 1e-2

        [initial]
        kind = "hemispheres"
        height = 0.9
        radius = 0.2
        x1 = -0.3
        x2 = 0.3

        [boundary]
        u = ["neumann", "neumann", "neumann", "neumann"]
        "#
    );
    parse_config(&text, &[]).expect("pinned config parses")
}

fn run_study(config: &RunConfig, tau: f64, store_fields: bool) -> RunRecord {
    let model = build_model(config).unwrap();
    let problem = build_problem(config, config.h).unwrap();
    let scheme = scheme_config(&config.scheme, default_gamma(&config.model)).unwrap();
    let (u0, v0) = initial_fields(config, &problem, &model).unwrap();
    let grid = TimeGrid::snapped(config.time.t_start, config.time.t_end, tau);
    let options = RunOptions { store_fields, abort_on_failure: false, snapshot_times: Vec::new() };
    run(&model, &problem, &grid, &scheme, u0, v0, &options).unwrap()
}

const TAU_LADDER: [f64; 4] = [1e-1, 3.1622776601683794e-2, 1e-2, 3.1622776601683794e-3];

#[test]
fn time_discretisation_convergence() {
    let config = pme_config(1e-3, 1e-7, 1e-2);
    let params = BarenblattParams::with_initial_support(4.0, 1, 1.0, 0.5, 0.6);
    let problem = build_problem(&config, config.h).unwrap();
    let u_exact = |x: [f64; 2], t: f64| exact_modified_pme(x, t, &params).unwrap();
    let w_exact = |x: [f64; 2], t: f64| u_exact(x, t).powf(4.0);
    let exact = ExactTriple { u: &u_exact, w: &w_exact, v: None };

    let mut rows = Vec::new();
    let mut clean = true;
    for tau in TAU_LADDER {
        let record = run_study(&config, tau, true);
        clean &= record.failed_steps == 0 && !record.aborted;
        let error = mscheme::bench::spacetime_error(&problem.mesh, &record, &exact)
            .unwrap()
            .sqrt();
        rows.push((tau, error));
    }
    let slope = fit_order(&rows).unwrap();
    let ok = clean && (0.45..=1.1).contains(&slope);
    report(
        1,
        "time-discretisation convergence",
        ok,
        &format!("fitted order {slope:.3}, all steps converged: {clean}"),
    );
}

#[test]
fn contraction_rate_scaling() {
    let config = pme_config(2e-3, 1e-5, 1e-3);
    let model = build_model(&config).unwrap();
    let problem = build_problem(&config, config.h).unwrap();
    let scheme = scheme_config(&config.scheme, default_gamma(&config.model)).unwrap();

    let mut rows = Vec::new();
    for tau in TAU_LADDER {
        let (u0, v0) = initial_fields(&config, &problem, &model).unwrap();
        let grid = TimeGrid::snapped(0.5, 1.0, tau);
        let setup = prepare_run(&model, &problem, &grid, &u0).unwrap();
        let h_field = h_factor_field(&problem, &model, &v0, tau);
        let w0 = initial_w(&problem, &setup.phi_breve, &u0);
        let probe = ContractionProbe {
            problem: &problem,
            scheme: &scheme,
            phi_breve: &setup.phi_breve,
            h_field: &h_field,
            u_prev: &u0,
            w_prev: &w0,
            tau,
            grad_coeff: theorem_grad_coeff(scheme.kind, model.phi.phi_m, tau),
            n_iterations: 3,
        };
        let errors = measure_contraction(&probe).unwrap();
        rows.push((tau, contraction_rate(&errors).unwrap()));
    }
    let decreasing = rows.windows(2).all(|p| p[1].1 < p[0].1);
    let slope = fit_order(&rows).unwrap();
    let ok = decreasing && (0.25..=0.55).contains(&slope);
    report(
        2,
        "contraction-rate scaling",
        ok,
        &format!(
            "rates {:?}, strictly decreasing: {decreasing}, fitted scaling {slope:.3}",
            rows.iter().map(|r| (r.1 * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    );
}

fn synthetic_problem(n: usize) -> FeProblem {
    let mesh = Arc::new(build_mesh(Domain::Interval { a: 0.0, b: 1.0 }, 1.0 / n as f64).unwrap());
    FeProblem::new(
        mesh,
        BoundarySpec {
            u: SideSpec::uniform(BcKind::DirichletZero),
            v: SideSpec::uniform(BcKind::NeumannZero),
        },
    )
    .unwrap()
}

fn synthetic_phi() -> RegularizedPhi {
    RegularizedPhi::identity(NonlinearityPhi::custom(
        Arc::new(|u: f64| u + u.powi(4)),
        Arc::new(|u: f64| 1.0 + 4.0 * u.powi(3)),
        1.0,
        f64::INFINITY,
    ))
}

fn max_ratio(probe: &ContractionProbe) -> f64 {
    let errors = measure_contraction(probe).unwrap();
    let mut worst = 0.0_f64;
    for pair in errors.windows(2) {
        if pair[0] > 1e-12 {
            worst = worst.max(pair[1] / pair[0]);
        }
    }
    worst
}

#[test]
fn non_degenerate_contraction_bounds() {
    let problem = synthetic_problem(50);
    let phi_breve = synthetic_phi();
    let h_field = FieldP0::constant(&problem.mesh, 1.0);
    let w_zero = FieldP1::zeros(&problem.mesh);
    let amplitudes = [0.2, 0.4];
    let mut detail = String::new();
    let mut ok = true;

    // factor max{Phi'(u) + M tau^gamma, 2 M tau^gamma}, bound
    // 2 M tau^gamma / (1 + M tau^gamma) + 0.05 for tau <= (1/M)^(1/gamma)/3
    let (m, gamma) = (1.0, 0.5);
    for tau in [0.01, 0.05] {
        for amp in amplitudes {
            let scheme = SchemeConfig::new(SchemeKind::MScheme { m, gamma });
            let u_prev =
                FieldP0::from_fn(&problem.mesh, |x| amp * (std::f64::consts::PI * x[0]).sin());
            let probe = ContractionProbe {
                problem: &problem,
                scheme: &scheme,
                phi_breve: &phi_breve,
                h_field: &h_field,
                u_prev: &u_prev,
                w_prev: &w_zero,
                tau,
                grad_coeff: theorem_grad_coeff(scheme.kind, 1.0, tau),
                n_iterations: 6,
            };
            let m_tau = m * tau.powf(gamma);
            let bound = 2.0 * m_tau / (1.0 + m_tau) + 0.05;
            let worst = max_ratio(&probe);
            ok &= worst <= bound;
            detail.push_str(&format!("M tau={tau} ratio {worst:.3}<=bound {bound:.3}; "));
        }
    }

    // constant factor L >= sup Phi', bound sqrt(L/(L+1)) + 0.05
    for l in [2.0, 4.0] {
        for amp in amplitudes {
            let scheme = SchemeConfig::new(SchemeKind::LScheme { l });
            let u_prev =
                FieldP0::from_fn(&problem.mesh, |x| amp * (std::f64::consts::PI * x[0]).sin());
            let probe = ContractionProbe {
                problem: &problem,
                scheme: &scheme,
                phi_breve: &phi_breve,
                h_field: &h_field,
                u_prev: &u_prev,
                w_prev: &w_zero,
                tau: 0.01,
                grad_coeff: theorem_grad_coeff(scheme.kind, 1.0, 0.01),
                n_iterations: 6,
            };
            let bound = (l / (l + 1.0)).sqrt() + 0.05;
            let worst = max_ratio(&probe);
            ok &= worst <= bound;
            detail.push_str(&format!("L={l} ratio {worst:.3}<=bound {bound:.3}; "));
        }
    }
    report(3, "non-degenerate contraction bounds", ok, detail.trim_end_matches("; "));
}

#[test]
fn boundedness_and_positivity() {
    let config = biofilm_config(1e-2, 1e-2);
    let record = run_study(&config, 1e-2, false);
    let ok = record.failed_steps == 0
        && record.min_u >= 0.0
        && record.max_u <= 0.992 + 1e-3
        && record.min_v >= -1e-10;
    report(
        4,
        "boundedness and positivity",
        ok,
        &format!(
            "u in [{:.3e}, {:.6}] (bound 0.993), min v {:.3e}, failed steps {}",
            record.min_u, record.max_u, record.min_v, record.failed_steps
        ),
    );
}

fn biofilm_sweep_rows(
    schemes: &[SchemeConfig],
    taus: &[f64],
    hs: &[f64],
) -> Vec<mscheme::bench::SweepRow> {
    let config = biofilm_config(1e-2, 1e-2);
    let model = build_model(&config).unwrap();
    sweep(schemes, taus, hs, 2, |scheme, tau, h| {
        let problem = build_problem(&config, h).expect("validated config");
        let (u0, v0) = initial_fields(&config, &problem, &model).expect("validated config");
        let grid = TimeGrid::snapped(0.0, 1.2, tau);
        let options = RunOptions::default();
        run(&model, &problem, &grid, scheme, u0, v0, &options)
    })
}

#[test]
fn robustness_pattern() {
    let gamma = 0.25;
    let m_scheme = SchemeConfig::new(SchemeKind::MScheme { m: 1e-2, gamma });
    let newton = SchemeConfig::new(SchemeKind::newton(gamma));
    let taus = [1e-1, 3.1622776601683794e-2];
    let hs = [0.1, 0.05, 0.02, 0.01];
    let rows = biofilm_sweep_rows(&[m_scheme, newton], &taus, &hs);
    let (m_rows, n_rows) = rows.split_at(taus.len() * hs.len());

    let m_clean = m_rows.iter().all(|r| !r.errored && r.failures == 0);
    let newton_failures: usize = n_rows.iter().map(|r| r.failures).sum();
    let newton_errors = n_rows.iter().filter(|r| r.errored).count();
    // largest-tau / smallest-h corner
    let corner = |rows: &[mscheme::bench::SweepRow]| {
        rows.iter()
            .find(|r| r.tau == taus[0] && r.h == *hs.last().unwrap())
            .map(|r| r.avg_iterations)
            .unwrap_or(f64::NAN)
    };
    let newton_struggles = newton_failures + newton_errors >= 1
        || corner(n_rows) >= 2.0 * corner(m_rows);
    let ok = m_clean && newton_struggles;
    report(
        5,
        "robustness pattern",
        ok,
        &format!(
            "M-scheme clean at all {} grid points: {m_clean}; Newton failed steps {newton_failures}, \
             corner iterations {:.2} vs {:.2}",
            m_rows.len(),
            corner(n_rows),
            corner(m_rows)
        ),
    );
}

#[test]
fn iteration_monotonicity() {
    let taus = [1e-1, 3.1622776601683794e-2, 1e-2];

    let pme = pme_config(1e-2, 1e-5, 1e-2);
    let pme_iters: Vec<f64> =
        taus.iter().map(|&tau| run_study(&pme, tau, false).avg_iterations).collect();

    let gamma = 0.25;
    let m_scheme = SchemeConfig::new(SchemeKind::MScheme { m: 1e-2, gamma });
    let bio_iters: Vec<f64> = biofilm_sweep_rows(&[m_scheme], &taus, &[1e-2])
        .iter()
        .map(|r| r.avg_iterations)
        .collect();

    let non_increasing =
        |v: &[f64]| v.iter().all(|x| x.is_finite()) && v.windows(2).all(|p| p[1] <= p[0] + 1e-12);
    let ok = non_increasing(&pme_iters) && non_increasing(&bio_iters);
    report(
        6,
        "iteration monotonicity",
        ok,
        &format!("pme averages {pme_iters:.2?}, biofilm averages {bio_iters:.2?}"),
    );
}

fn csr_at(m: &Csr, i: usize, j: usize) -> f64 {
    for idx in m.row_ptr[i]..m.row_ptr[i + 1] {
        if m.col[idx] == j {
            return m.val[idx];
        }
    }
    0.0
}

#[test]
fn oracle_suites() {
    let mut ok = true;
    let mut detail = Vec::new();

    // two-element 1D assembly against hand values
    let mesh = build_mesh(Domain::Interval { a: 0.0, b: 1.0 }, 0.5).unwrap();
    let k = assemble_stiffness_p1(&mesh, Weight::Constant(1.0)).unwrap();
    let m = assemble_mass_p1(&mesh);
    let hand = [
        (csr_at(&k, 0, 0), 2.0),
        (csr_at(&k, 0, 1), -2.0),
        (csr_at(&k, 1, 1), 4.0),
        (csr_at(&k, 1, 2), -2.0),
        (csr_at(&k, 2, 2), 2.0),
        (csr_at(&m, 0, 0), 1.0 / 6.0),
        (csr_at(&m, 0, 1), 1.0 / 12.0),
        (csr_at(&m, 1, 1), 1.0 / 3.0),
    ];
    let assembly_ok = hand.iter().all(|&(got, want)| (got - want).abs() <= 1e-12);
    ok &= assembly_ok;
    detail.push(format!("1D assembly hand values: {assembly_ok}"));

    // 2D sanity on the same exact identities: zero stiffness row sums,
    // mass row sums |support|/3, stiffness trace 4 on the 2-cell square
    let sq = build_mesh(Domain::Rectangle { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 }, 1.0).unwrap();
    let k2 = assemble_stiffness_p1(&sq, Weight::Constant(1.0)).unwrap();
    let m2 = assemble_mass_p1(&sq);
    let mut two_d_ok = true;
    let mut trace = 0.0;
    for i in 0..sq.n_vertices() {
        let krow: f64 = (k2.row_ptr[i]..k2.row_ptr[i + 1]).map(|idx| k2.val[idx]).sum();
        two_d_ok &= krow.abs() <= 1e-12;
        trace += csr_at(&k2, i, i);
        let mrow: f64 = (m2.row_ptr[i]..m2.row_ptr[i + 1]).map(|idx| m2.val[idx]).sum();
        let support: f64 =
            (0..sq.n_cells()).filter(|&c| sq.cell(c).contains(&i)).map(|c| sq.measure(c)).sum();
        two_d_ok &= (mrow - support / 3.0).abs() <= 1e-12;
    }
    two_d_ok &= (trace - 4.0).abs() <= 1e-12;
    ok &= two_d_ok;
    detail.push(format!("2D assembly identities: {two_d_ok}"));

    // secant sandwich on 10^4 random pairs: for |a-b| <= lam tau^gamma and
    // M >= Lip(Phi')·lam, the factor minus the secant slope lies in
    // [(M - M0) tau^gamma, 2 M tau^gamma]
    let phi = regularize(&NonlinearityPhi::power_law(4.0), 1.0).unwrap();
    let (tau, gamma) = (0.01_f64, 1.0 / 3.0);
    let t_pow = tau.powf(gamma);
    let (lam, lip) = (0.5, 12.0);
    let m0 = lip * lam;
    let m_stab = 8.0;
    let mut rng = StdRng::seed_from_u64(20260824);
    let mut sandwich_ok = true;
    for _ in 0..10_000 {
        let a: f64 = rng.gen_range(0.0..=1.0);
        let b = (a + rng.gen_range(-lam * t_pow..=lam * t_pow)).clamp(0.0, 1.0);
        if (a - b).abs() < 1e-12 {
            continue;
        }
        let factor = (phi.deriv(a) + m_stab * t_pow).max(2.0 * m_stab * t_pow);
        let secant = (phi.eval(a) - phi.eval(b)) / (a - b);
        let gap = factor - secant;
        sandwich_ok &=
            gap >= (m_stab - m0) * t_pow - 1e-9 && gap <= 2.0 * m_stab * t_pow + 1e-9;
    }
    ok &= sandwich_ok;
    detail.push(format!("secant sandwich 10^4 pairs: {sandwich_ok}"));

    // clipping is non-expansive on 10^3 random field pairs
    let mut clip_ok = true;
    for _ in 0..1_000 {
        let a = FieldP0 { values: (0..50).map(|_| rng.gen_range(-1.0..=1.0)).collect() };
        let b = FieldP0 { values: (0..50).map(|_| rng.gen_range(-1.0..=1.0)).collect() };
        let (ca, cb) = (clip_positive(&a), clip_positive(&b));
        clip_ok &= ca
            .values
            .iter()
            .zip(&cb.values)
            .zip(a.values.iter().zip(&b.values))
            .all(|((x, y), (p, q))| (x - y).abs() <= (p - q).abs() + 1e-15);
    }
    ok &= clip_ok;
    detail.push(format!("clip non-expansive 10^3 fields: {clip_ok}"));

    // pre-clip mass identity under pure Neumann conditions
    let neumann = FeProblem::new(
        Arc::new(build_mesh(Domain::Interval { a: 0.0, b: 1.0 }, 0.1).unwrap()),
        BoundarySpec {
            u: SideSpec::uniform(BcKind::NeumannZero),
            v: SideSpec::uniform(BcKind::NeumannZero),
        },
    )
    .unwrap();
    let phi_n = regularize(&NonlinearityPhi::power_law(4.0), 1.5).unwrap();
    let h1 = FieldP0::constant(&neumann.mesh, 1.0);
    let u_prev = FieldP0::from_fn(&neumann.mesh, |x| 0.5 + 0.4 * (3.0 * x[0]).cos());
    let scheme = SchemeConfig::new(SchemeKind::MScheme { m: 1e-2, gamma: 0.5 });
    let l = mscheme::scheme::l_factor_field(&scheme, &phi_n, &u_prev, 0.05);
    let (u_tilde, _) =
        mscheme::scheme::linear_iteration(&neumann, &h1, &u_prev, &u_prev, &l, &phi_n, 0.05)
            .unwrap();
    let mass = |f: &FieldP0| -> f64 {
        (0..neumann.mesh.n_cells()).map(|c| f.values[c] * neumann.mesh.measure(c)).sum()
    };
    let mass_ok = (mass(&u_prev) - mass(&u_tilde)).abs() <= 1e-12 * mass(&u_prev).abs();
    ok &= mass_ok;
    detail.push(format!("pre-clip mass identity: {mass_ok}"));

    // converged-solution residual within 10x the stopping tolerance
    let problem = synthetic_problem(100);
    let params = BarenblattParams::with_initial_support(4.0, 1, 1.0, 0.5, 0.3);
    let phi_pme = regularize(&NonlinearityPhi::power_law(4.0), 2.0).unwrap();
    let tau_r = 1e-2;
    let h_field = FieldP0::constant(&problem.mesh, 1.0 - tau_r);
    let u_prev = FieldP0::from_fn(&problem.mesh, |x| {
        exact_modified_pme([x[0] - 0.5, 0.0], 0.5, &params).unwrap()
    });
    let w_prev = initial_w(&problem, &phi_pme, &u_prev);
    let cfg = SchemeConfig::new(SchemeKind::MScheme { m: 1e-3, gamma: 1.0 / 3.0 });
    let res = solve_nonlinear_step(&problem, &cfg, &phi_pme, &h_field, &u_prev, &w_prev, tau_r)
        .unwrap();
    let residual = time_discrete_residual(&problem, &h_field, &u_prev, &res.u, &res.w, tau_r);
    let residual_ok = res.trace.converged && residual <= 10.0 * cfg.tol;
    ok &= residual_ok;
    detail.push(format!("converged residual {residual:.2e} <= {:.0e}", 10.0 * cfg.tol));

    // Barenblatt mass conservation between two profile times
    let p = BarenblattParams { m: 4.0, d: 1, c: 1.0, beta: 1.0 };
    let mass_at = |t: f64| {
        let r = p.support_radius(t);
        let n = 20_000;
        let dx = 2.0 * r / n as f64;
        (0..=n)
            .map(|i| {
                let x = -r + i as f64 * dx;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * barenblatt([x, 0.0], t, &p) * dx
            })
            .sum::<f64>()
    };
    let (m1, m2) = (mass_at(1.0), mass_at(2.5));
    let mass_cons_ok = (m1 - m2).abs() / m1 <= 1e-6;
    ok &= mass_cons_ok;
    detail.push(format!("Barenblatt mass drift {:.2e}", (m1 - m2).abs() / m1));

    // exact solution satisfies the PDE to finite-difference accuracy
    let mut pde_ok = true;
    let delta = 1e-4;
    for (x, t) in [(0.25, 1.0), (0.6, 0.8), (0.0, 1.2)] {
        let u = |x: f64, t: f64| exact_modified_pme([x, 0.0], t, &p).unwrap();
        let du_dt = (u(x, t + delta) - u(x, t - delta)) / (2.0 * delta);
        let pow = |y: f64| u(y, t).powf(4.0);
        let lap = (pow(x + delta) - 2.0 * pow(x) + pow(x - delta)) / (delta * delta);
        pde_ok &= (du_dt - lap - u(x, t)).abs() <= 1e-4;
    }
    ok &= pde_ok;
    detail.push(format!("exact-solution PDE residual: {pde_ok}"));

    report(7, "oracle suites", ok, &detail.join("; "));
}
