//! Outer semi-implicit time loop: solve the nonlinear density step, then
//! update the substrate (elliptic solve for μ = 1, pointwise ODE for μ = 0).
//! The density step never sees the current substrate, so the system solves
//! sequentially.

use crate::fem::{
    assemble_stiffness_p1, FeProblem, FieldP0, FieldP1, SparseSpd, VField, Weight,
};
use crate::model::{compute_u_breve, regularize, Coupling, ModelError, ModelSystem, RegularizedPhi};
use crate::scheme::{
    solve_nonlinear_step, IterationTrace, SchemeConfig, SchemeError,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StepperError {
    #[error("time step tau = {tau} violates tau < tau_disc = {tau_disc}")]
    TauTooLarge { tau: f64, tau_disc: f64 },
    #[error("time grid ({t_start}, {t_end}) is not an integral number of steps of tau = {tau}")]
    NonIntegralGrid { t_start: f64, t_end: f64, tau: f64 },
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("run aborted: step {step} at t = {time} failed to converge")]
    StepFailed { step: usize, time: f64 },
}

/// Uniform time grid on [t_start, t_end].
#[derive(Clone, Copy, Debug)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub tau: f64,
}

impl TimeGrid {
    pub fn n_steps(&self) -> Result<usize, StepperError> {
        let raw = (self.t_end - self.t_start) / self.tau;
        let n = raw.round();
        if n < 1.0 || (raw - n).abs() > 1e-8 * n.max(1.0) {
            return Err(StepperError::NonIntegralGrid {
                t_start: self.t_start,
                t_end: self.t_end,
                tau: self.tau,
            });
        }
        Ok(n as usize)
    }

    pub fn time_at(&self, n: usize) -> f64 {
        self.t_start + n as f64 * self.tau
    }

    /// Grid with t_end snapped to the nearest whole number of steps, for
    /// sweeps over τ values that do not divide the requested horizon.
    pub fn snapped(t_start: f64, t_end: f64, tau: f64) -> Self {
        let n = ((t_end - t_start) / tau).round().max(1.0);
        TimeGrid { t_start, t_end: t_start + n * tau, tau }
    }
}

/// Fields of one completed time step.
#[derive(Clone, Debug)]
pub struct StepFields {
    pub time: f64,
    pub u: FieldP0,
    pub w: FieldP1,
    pub v: VField,
}

/// Per-run results: traces, optional stored fields, failure accounting and
/// the extremal values tracked for the boundedness/positivity invariants.
pub struct RunRecord {
    pub scheme_label: String,
    pub tau: f64,
    pub h: f64,
    pub u_breve: f64,
    pub traces: Vec<IterationTrace>,
    /// Stored per-step fields (present when `store_fields` was requested).
    pub steps: Vec<StepFields>,
    pub snapshots: Vec<StepFields>,
    pub failed_steps: usize,
    /// Mean iteration count over converged steps.
    pub avg_iterations: f64,
    pub max_u: f64,
    pub min_u: f64,
    pub min_v: f64,
    pub aborted: bool,
    pub wall_time_seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Keep every step's fields (needed for space-time error evaluation).
    pub store_fields: bool,
    /// Abort the run on a non-converged step instead of accepting the last
    /// iterate and flagging it.
    pub abort_on_failure: bool,
    pub snapshot_times: Vec<f64>,
}

/// Solves (M + τ μ K_D) v_n = M v_{n-1} + τ (g(u_n, v_{n-1}), φ) with the
/// reaction evaluated per quadrature point and Dirichlet lifting from the
/// substrate mask.
pub fn update_v_pde(
    problem: &FeProblem,
    model: &ModelSystem,
    u_n: &FieldP0,
    v_prev: &FieldP1,
    tau: f64,
) -> Result<FieldP1, StepperError> {
    let mesh = &problem.mesh;
    let d_field = FieldP0 {
        values: u_n.values.iter().map(|&u| (model.d)(u)).collect(),
    };
    let k_d = assemble_stiffness_p1(mesh, Weight::Cellwise(&d_field))
        .expect("diffusivity is positive by (P3)");
    // A = M + tau * K_D, assembled by merging the two CSR operators
    let mut coo = crate::fem::CooBuilder::new(mesh.n_vertices());
    for i in 0..mesh.n_vertices() {
        for k in problem.mass.row_ptr[i]..problem.mass.row_ptr[i + 1] {
            coo.add(i, problem.mass.col[k], problem.mass.val[k]);
        }
        for k in k_d.row_ptr[i]..k_d.row_ptr[i + 1] {
            coo.add(i, k_d.col[k], tau * k_d.val[k]);
        }
    }
    let a = coo.build();

    let mut rhs = vec![0.0; mesh.n_vertices()];
    problem.mass.matvec(&v_prev.values, &mut rhs);
    for c in 0..mesh.n_cells() {
        for (x, wq) in mesh.quadrature(c) {
            let g_val = (model.g)(u_n.values[c], v_prev.at(mesh, c, x));
            let basis = mesh.p1_values_at(c, x);
            for (k, &v) in mesh.cell(c).iter().enumerate() {
                rhs[v] += tau * wq * g_val * basis[k];
            }
        }
    }
    let (sys, rhs_red) = SparseSpd::reduce(&a, &rhs, &problem.v_mask);
    let values = sys.solve_full(&rhs_red, &problem.v_mask).map_err(SchemeError::Solver)?;
    Ok(FieldP1 { values })
}

/// Cellwise explicit update v_n = v_{n-1} + τ g(u_n, v_{n-1}); exact, since
/// the P0 Galerkin projection of the ODE step is diagonal.
pub fn update_v_ode(model: &ModelSystem, u_n: &FieldP0, v_prev: &FieldP0, tau: f64) -> FieldP0 {
    FieldP0 {
        values: u_n
            .values
            .iter()
            .zip(&v_prev.values)
            .map(|(&u, &v)| v + tau * (model.g)(u, v))
            .collect(),
    }
}

/// Cellwise h-factor 1 - τ f(v_{n-1}) entering the density step.
pub fn h_factor_field(problem: &FeProblem, model: &ModelSystem, v_prev: &VField, tau: f64) -> FieldP0 {
    let mesh = &problem.mesh;
    FieldP0 {
        values: (0..mesh.n_cells())
            .map(|c| 1.0 - tau * (model.f)(v_prev.at_centroid(mesh, c)))
            .collect(),
    }
}

/// Precomputed regularization data for a run.
pub struct RunSetup {
    pub u_breve: f64,
    pub phi_breve: RegularizedPhi,
}

/// Computes ŭ from the initial data and builds Φ̆.
pub fn prepare_run(
    model: &ModelSystem,
    problem: &FeProblem,
    grid: &TimeGrid,
    u0: &FieldP0,
) -> Result<RunSetup, StepperError> {
    let mesh = &problem.mesh;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for v in &mesh.vertices {
        for k in 0..2 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    let diam = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt();
    let u0_sup = u0.values.iter().copied().fold(0.0_f64, f64::max);
    let phi_u0_sup = model.phi.eval(u0_sup)?;
    let u_breve = compute_u_breve(
        model,
        u0_sup,
        phi_u0_sup,
        diam,
        mesh.dim,
        grid.t_end - grid.t_start,
        grid.tau,
    )?;
    let phi_breve = if model.phi.b.is_finite() {
        regularize(&model.phi, u_breve)?
    } else {
        RegularizedPhi::identity(model.phi.clone())
    };
    Ok(RunSetup { u_breve, phi_breve })
}

/// Seed for the w-iterate: Φ̆ applied to the vertex-averaged density.
pub fn initial_w(problem: &FeProblem, phi_breve: &RegularizedPhi, u: &FieldP0) -> FieldP1 {
    let vertex_u = crate::fem::p0_to_vertex_average(&problem.mesh, u);
    FieldP1 { values: vertex_u.values.iter().map(|&x| phi_breve.eval(x)).collect() }
}

/// Executes the full time loop.
#[allow(clippy::too_many_arguments)]
pub fn run(
    model: &ModelSystem,
    problem: &FeProblem,
    grid: &TimeGrid,
    scheme: &SchemeConfig,
    u0: FieldP0,
    v0: VField,
    options: &RunOptions,
) -> Result<RunRecord, StepperError> {
    let start = std::time::Instant::now();
    let tau = grid.tau;
    let tau_disc = model.tau_disc();
    if tau >= tau_disc {
        return Err(StepperError::TauTooLarge { tau, tau_disc });
    }
    let n_steps = grid.n_steps()?;
    let setup = prepare_run(model, problem, grid, &u0)?;

    let mut record = RunRecord {
        scheme_label: scheme.kind.label(),
        tau,
        h: problem.mesh.h,
        u_breve: setup.u_breve,
        traces: Vec::with_capacity(n_steps),
        steps: Vec::new(),
        snapshots: Vec::new(),
        failed_steps: 0,
        avg_iterations: 0.0,
        max_u: u0.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_u: u0.values.iter().copied().fold(f64::INFINITY, f64::min),
        min_v: v0.min_value(),
        aborted: false,
        wall_time_seconds: 0.0,
    };

    let mut u = u0;
    let mut w = initial_w(problem, &setup.phi_breve, &u);
    let mut v = v0;

    for n in 1..=n_steps {
        let t_n = grid.time_at(n);
        let h_field = h_factor_field(problem, model, &v, tau);
        let res = solve_nonlinear_step(problem, scheme, &setup.phi_breve, &h_field, &u, &w, tau)?;
        let failed = !res.trace.converged;
        record.traces.push(res.trace);
        if failed {
            record.failed_steps += 1;
            if options.abort_on_failure {
                record.aborted = true;
                record.wall_time_seconds = start.elapsed().as_secs_f64();
                finalize(&mut record);
                return Ok(record);
            }
        }
        u = res.u;
        w = res.w;
        v = match model.coupling {
            Coupling::Pde => {
                let v_prev = match &v {
                    VField::P1(f) => f,
                    VField::P0(_) => unreachable!("PDE coupling carries a P1 substrate"),
                };
                VField::P1(update_v_pde(problem, model, &u, v_prev, tau)?)
            }
            Coupling::Ode => {
                let v_prev = match &v {
                    VField::P0(f) => f,
                    VField::P1(_) => unreachable!("ODE coupling carries a P0 substrate"),
                };
                VField::P0(update_v_ode(model, &u, v_prev, tau))
            }
        };

        for &x in &u.values {
            record.max_u = record.max_u.max(x);
            record.min_u = record.min_u.min(x);
        }
        record.min_v = record.min_v.min(v.min_value());

        let fields = StepFields { time: t_n, u: u.clone(), w: w.clone(), v: v.clone() };
        if options
            .snapshot_times
            .iter()
            .any(|&t| (t - t_n).abs() <= 0.5 * tau * (1.0 + 1e-12))
        {
            record.snapshots.push(fields.clone());
        }
        if options.store_fields {
            record.steps.push(fields);
        }
    }

    record.wall_time_seconds = start.elapsed().as_secs_f64();
    finalize(&mut record);
    Ok(record)
}

fn finalize(record: &mut RunRecord) {
    let converged: Vec<usize> =
        record.traces.iter().filter(|t| t.converged).map(|t| t.iterations).collect();
    record.avg_iterations = if converged.is_empty() {
        f64::NAN
    } else {
        converged.iter().sum::<usize>() as f64 / converged.len() as f64
    };
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_mesh, BcKind, BoundarySpec, Domain, SideSpec};
    use crate::model::Coupling;
    use crate::scheme::SchemeKind;
    use std::sync::Arc;

    fn problem_1d(n: usize, u_bc: BcKind, v_left: BcKind) -> FeProblem {
        let mesh = Arc::new(build_mesh(Domain::Interval { a: -1.0, b: 1.0 }, 2.0 / n as f64).unwrap());
        FeProblem::new(
            mesh,
            BoundarySpec {
                u: SideSpec::uniform(u_bc),
                v: SideSpec {
                    left: v_left,
                    right: BcKind::NeumannZero,
                    bottom: BcKind::NeumannZero,
                    top: BcKind::NeumannZero,
                },
            },
        )
        .unwrap()
    }

    fn biofilm() -> ModelSystem {
        ModelSystem::biofilm(0.4, 0.01, 1.0, 0.42, 1e-6, 1.0, 4.0, 4.0, Coupling::Ode)
    }

    #[test]
    fn time_grid_counts_steps() {
        let g = TimeGrid { t_start: 0.5, t_end: 1.0, tau: 0.1 };
        assert_eq!(g.n_steps().unwrap(), 5);
        let bad = TimeGrid { t_start: 0.0, t_end: 1.0, tau: 0.3 };
        assert!(bad.n_steps().is_err());
        // snapping rounds to the nearest whole step count
        let snapped = TimeGrid::snapped(0.0, 1.2, 10.0_f64.powf(-1.5));
        assert_eq!(snapped.n_steps().unwrap(), 38);
        assert!((snapped.t_end - 38.0 * snapped.tau).abs() < 1e-12);
    }

    #[test]
    fn v_ode_examples() {
        let model = biofilm();
        let mesh = build_mesh(Domain::Interval { a: 0.0, b: 1.0 }, 0.5).unwrap();
        // u = 0 leaves v unchanged (g(0, v) = 0)
        let u0 = FieldP0::zeros(&mesh);
        let v0 = FieldP0::constant(&mesh, 0.7);
        let v1 = update_v_ode(&model, &u0, &v0, 0.1);
        assert_eq!(v1.values, v0.values);
        // u = 1, v = 1: v_n = 1 - 0.1·0.4/1.01
        let u1 = FieldP0::constant(&mesh, 1.0);
        let v0 = FieldP0::constant(&mesh, 1.0);
        let v1 = update_v_ode(&model, &u1, &v0, 0.1);
        let expect = 1.0 - 0.1 * 0.4 / 1.01;
        assert!((v1.values[0] - expect).abs() < 1e-15);
        assert!((v1.values[0] - 0.960396).abs() < 1e-6);
    }

    #[test]
    fn v_ode_constant_reaction() {
        let mut model = biofilm();
        model.g = Arc::new(|_, _| 1.0);
        let mesh = build_mesh(Domain::Interval { a: 0.0, b: 1.0 }, 0.5).unwrap();
        let v1 = update_v_ode(&model, &FieldP0::zeros(&mesh), &FieldP0::zeros(&mesh), 0.1);
        assert!(v1.values.iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn v_pde_constant_steady_state() {
        // g ≡ 0, D const, v_prev ≡ c with Dirichlet c on the left: v stays c
        let mut model = biofilm();
        model.coupling = Coupling::Pde;
        model.g = Arc::new(|_, _| 0.0);
        let p = problem_1d(16, BcKind::NeumannZero, BcKind::DirichletValue(0.8));
        let u = FieldP0::constant(&p.mesh, 0.5);
        let v_prev = FieldP1::constant(&p.mesh, 0.8);
        let v = update_v_pde(&p, &model, &u, &v_prev, 0.05).unwrap();
        for x in &v.values {
            assert!((x - 0.8).abs() < 1e-11, "{x}");
        }
    }

    #[test]
    fn v_pde_vanishing_tau_returns_previous() {
        let mut model = biofilm();
        model.coupling = Coupling::Pde;
        let p = problem_1d(16, BcKind::NeumannZero, BcKind::NeumannZero);
        let u = FieldP0::constant(&p.mesh, 0.3);
        let v_prev = FieldP1::from_fn(&p.mesh, |x| 0.5 + 0.3 * x[0]);
        let v = update_v_pde(&p, &model, &u, &v_prev, 1e-12).unwrap();
        for (a, b) in v.values.iter().zip(&v_prev.values) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn v_pde_two_cell_hand_system() {
        // 2 cells on (0,1): mesh h = 0.5, D = 2, g ≡ 1, Dirichlet v = 0 both
        // ends. Free vertex 1: (M + τ K)_{11} = 2·(h/3) + τ·2·(2/h) = 1/3 + 8τ.
        // rhs_1 = (M v_prev)_1 + τ·∫ φ_1 = 0 + τ·0.5 with v_prev = 0.
        let mut model = biofilm();
        model.coupling = Coupling::Pde;
        model.g = Arc::new(|_, _| 1.0);
        model.d = Arc::new(|_| 2.0);
        let mesh = Arc::new(build_mesh(Domain::Interval { a: 0.0, b: 1.0 }, 0.5).unwrap());
        let p = FeProblem::new(
            Arc::clone(&mesh),
            BoundarySpec {
                u: SideSpec::uniform(BcKind::NeumannZero),
                v: SideSpec::uniform(BcKind::DirichletZero),
            },
        )
        .unwrap();
        let tau = 0.1;
        let u = FieldP0::constant(&mesh, 0.0);
        let v_prev = FieldP1::zeros(&mesh);
        let v = update_v_pde(&p, &model, &u, &v_prev, tau).unwrap();
        let expect = tau * 0.5 / (1.0 / 3.0 + 8.0 * tau);
        assert!((v.values[1] - expect).abs() < 1e-13, "{} vs {expect}", v.values[1]);
    }

    #[test]
    fn zero_run_stays_zero() {
        let model = ModelSystem::pme(4.0, 0.0);
        let p = problem_1d(8, BcKind::DirichletZero, BcKind::NeumannZero);
        let grid = TimeGrid { t_start: 0.0, t_end: 0.5, tau: 0.1 };
        let scheme = SchemeConfig::new(SchemeKind::MScheme { m: 1e-3, gamma: 1.0 / 3.0 });
        let u0 = FieldP0::zeros(&p.mesh);
        let v0 = VField::P0(FieldP0::zeros(&p.mesh));
        let rec = run(&model, &p, &grid, &scheme, u0, v0, &RunOptions::default()).unwrap();
        assert_eq!(rec.failed_steps, 0);
        assert_eq!(rec.max_u, 0.0);
        assert!((rec.avg_iterations - 1.0).abs() < 1e-15);
    }

    #[test]
    fn density_step_is_decoupled_from_substrate_update() {
        // u_1 depends only on (u_0, v_0): with identical v_0 values, the ODE
        // and PDE substrate branches produce bitwise identical u_1
        let run_one = |coupling: Coupling| {
            let mut model = biofilm();
            model.coupling = coupling;
            let p = problem_1d(20, BcKind::NeumannZero, BcKind::NeumannZero);
            let grid = TimeGrid { t_start: 0.0, t_end: 0.01, tau: 0.01 };
            let scheme = SchemeConfig::new(SchemeKind::MScheme { m: 1e-2, gamma: 0.25 });
            let u0 = FieldP0::from_fn(&p.mesh, |x| 0.5 * (-(x[0] * x[0]) / 0.08).exp());
            let v0 = match coupling {
                Coupling::Ode => VField::P0(FieldP0::constant(&p.mesh, 1.0)),
                Coupling::Pde => VField::P1(FieldP1::constant(&p.mesh, 1.0)),
            };
            let mut opts = RunOptions::default();
            opts.store_fields = true;
            run(&model, &p, &grid, &scheme, u0, v0, &opts).unwrap()
        };
        let a = run_one(Coupling::Ode);
        let b = run_one(Coupling::Pde);
        assert_eq!(a.steps[0].u.values, b.steps[0].u.values);
    }

    #[test]
    fn tau_guard_rejects_large_steps() {
        let model = ModelSystem::pme(4.0, 1.0);
        let p = problem_1d(8, BcKind::DirichletZero, BcKind::NeumannZero);
        let grid = TimeGrid { t_start: 0.0, t_end: 2.0, tau: 1.0 };
        let scheme = SchemeConfig::new(SchemeKind::MScheme { m: 1e-3, gamma: 1.0 / 3.0 });
        let u0 = FieldP0::zeros(&p.mesh);
        let v0 = VField::P0(FieldP0::zeros(&p.mesh));
        assert!(matches!(
            run(&model, &p, &grid, &scheme, u0, v0, &RunOptions::default()),
            Err(StepperError::TauTooLarge { .. })
        ));
    }
}
