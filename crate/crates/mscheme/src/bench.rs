//! Benchmark machinery: the Barenblatt family of exact solutions, space-time
//! error norms, order fitting, contraction-rate measurement against a
//! converged reference, and the (scheme, τ, h) sweep harness.

use crate::fem::{
    grad_l2_norm_sq_p1, l2_dist_sq_p0_fn, l2_dist_sq_p1_fn, FeProblem, FieldP0, FieldP1, Mesh,
    VField,
};
use crate::model::RegularizedPhi;
use crate::scheme::{
    clip_positive, l_factor_field, linear_iteration, solve_nonlinear_step, SchemeConfig,
    SchemeError, SchemeKind,
};
use crate::stepper::{RunRecord, StepperError};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("record stores no per-step fields; rerun with store_fields")]
    MissingFields,
    #[error("need at least {need} data points, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("log-log fit requires positive values, got {0}")]
    NonPositive(f64),
    #[error("zero error in the contraction denominator")]
    ZeroDenominator,
    #[error("the modified equation requires beta != 0; use the plain profile with a time shift")]
    ZeroBeta,
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}

/// Parameters of the self-similar profile
/// z(x,t) = t^(-d/(d(m-1)+2)) [C - κ |x t^(-1/(d(m-1)+2))|²]₊^(1/(m-1)),
/// κ = (m-1)/(2m(d(m-1)+2)).
#[derive(Clone, Copy, Debug)]
pub struct BarenblattParams {
    pub m: f64,
    pub d: usize,
    pub c: f64,
    pub beta: f64,
}

impl BarenblattParams {
    fn denom(&self) -> f64 {
        self.d as f64 * (self.m - 1.0) + 2.0
    }

    pub fn kappa(&self) -> f64 {
        (self.m - 1.0) / (2.0 * self.m * self.denom())
    }

    /// Edge of the support at profile time t.
    pub fn support_radius(&self, t: f64) -> f64 {
        (self.c / self.kappa()).sqrt() * t.powf(1.0 / self.denom())
    }

    /// C such that the support at physical time t0 has the given radius.
    pub fn with_initial_support(m: f64, d: usize, beta: f64, t0: f64, radius: f64) -> Self {
        let mut p = BarenblattParams { m, d, c: 1.0, beta };
        let s0 = self_similar_time(t0, &p);
        p.c = p.kappa() * radius * radius * s0.powf(-2.0 / p.denom());
        p
    }
}

pub fn barenblatt(x: [f64; 2], t: f64, p: &BarenblattParams) -> f64 {
    let r_sq = if p.d == 1 { x[0] * x[0] } else { x[0] * x[0] + x[1] * x[1] };
    let denom = p.denom();
    let core = p.c - p.kappa() * r_sq * t.powf(-2.0 / denom);
    if core <= 0.0 {
        return 0.0;
    }
    t.powf(-(p.d as f64) / denom) * core.powf(1.0 / (p.m - 1.0))
}

/// s(t) = e^(β(m-1)t) / (β(m-1)), mapping the reaction-rescaled equation
/// back to the plain porous medium equation.
pub fn self_similar_time(t: f64, p: &BarenblattParams) -> f64 {
    (p.beta * (p.m - 1.0) * t).exp() / (p.beta * (p.m - 1.0))
}

/// Exact solution of ∂_t u = Δ(u^m) + βu: u(x,t) = e^(βt) z(x, s(t)).
pub fn exact_modified_pme(x: [f64; 2], t: f64, p: &BarenblattParams) -> Result<f64, BenchError> {
    if p.beta == 0.0 {
        return Err(BenchError::ZeroBeta);
    }
    Ok((p.beta * t).exp() * barenblatt(x, self_similar_time(t, p), p))
}

/// Analytic reference for the space-time error: u, w = Φ(u), and optionally v.
pub struct ExactTriple<'a> {
    pub u: &'a dyn Fn([f64; 2], f64) -> f64,
    pub w: &'a dyn Fn([f64; 2], f64) -> f64,
    pub v: Option<&'a dyn Fn([f64; 2], f64) -> f64>,
}

/// Σ_n ∫_{t_{n-1}}^{t_n} (‖u_n - u(t)‖² + ‖w_n - Φ(u(t))‖² + ‖v_n - v(t)‖²) dt,
/// the time integral by 2-point Gauss per step.
pub fn spacetime_error(
    mesh: &Mesh,
    record: &RunRecord,
    exact: &ExactTriple,
) -> Result<f64, BenchError> {
    if record.steps.is_empty() {
        return Err(BenchError::MissingFields);
    }
    let tau = record.tau;
    let offset = 0.5 * tau / 3.0_f64.sqrt();
    let mut total = 0.0;
    for step in &record.steps {
        let mid = step.time - 0.5 * tau;
        for t_g in [mid - offset, mid + offset] {
            let mut part =
                l2_dist_sq_p0_fn(mesh, &step.u, |x| (exact.u)(x, t_g)).expect("run fields match mesh");
            part += l2_dist_sq_p1_fn(mesh, &step.w, |x| (exact.w)(x, t_g)).expect("run fields match mesh");
            if let Some(v_exact) = exact.v {
                part += match &step.v {
                    VField::P0(f) => l2_dist_sq_p0_fn(mesh, f, |x| v_exact(x, t_g)),
                    VField::P1(f) => l2_dist_sq_p1_fn(mesh, f, |x| v_exact(x, t_g)),
                }
                .expect("run fields match mesh");
            }
            total += 0.5 * tau * part;
        }
    }
    Ok(total)
}

/// Rows of (control, value) with the fitted log-log line.
#[derive(Clone, Debug)]
pub struct StudyResult {
    pub rows: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
}

impl StudyResult {
    pub fn from_rows(rows: Vec<(f64, f64)>) -> Result<Self, BenchError> {
        let (slope, intercept) = fit_line(&rows)?;
        Ok(StudyResult { rows, slope, intercept })
    }
}

/// Least-squares (slope, intercept) of log(value) against log(control).
pub fn fit_line(pairs: &[(f64, f64)]) -> Result<(f64, f64), BenchError> {
    if pairs.len() < 2 {
        return Err(BenchError::InsufficientData { need: 2, got: pairs.len() });
    }
    let mut logs = Vec::with_capacity(pairs.len());
    for &(c, e) in pairs {
        if c <= 0.0 || e <= 0.0 {
            return Err(BenchError::NonPositive(if c <= 0.0 { c } else { e }));
        }
        logs.push((c.ln(), e.ln()));
    }
    let n = logs.len() as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    Ok((slope, intercept))
}

pub fn fit_order(pairs: &[(f64, f64)]) -> Result<f64, BenchError> {
    fit_line(pairs).map(|(slope, _)| slope)
}

/// Geometric mean of the first three error ratios: (e_3/e_0)^(1/3).
pub fn contraction_rate(errors: &[f64]) -> Result<f64, BenchError> {
    if errors.len() < 4 {
        return Err(BenchError::InsufficientData { need: 4, got: errors.len() });
    }
    if errors[..3].iter().any(|&e| e <= 0.0) {
        return Err(BenchError::ZeroDenominator);
    }
    Ok((errors[3] / errors[0]).powf(1.0 / 3.0))
}

/// Gradient-term coefficient of the contraction norm the convergence
/// theorems use: 2τ/(L + φ_m) for the L-scheme, 2τ/(φ_m + Mτ^γ) otherwise.
pub fn theorem_grad_coeff(kind: SchemeKind, phi_m: f64, tau: f64) -> f64 {
    match kind {
        SchemeKind::LScheme { l } => 2.0 * tau / (l + phi_m),
        SchemeKind::MScheme { m, gamma } | SchemeKind::Newton { m_reg: m, gamma } => {
            2.0 * tau / (phi_m + m * tau.powf(gamma))
        }
    }
}

/// Inputs of one instrumented contraction measurement on a single time step.
pub struct ContractionProbe<'a> {
    pub problem: &'a FeProblem,
    pub scheme: &'a SchemeConfig,
    pub phi_breve: &'a RegularizedPhi,
    pub h_field: &'a FieldP0,
    pub u_prev: &'a FieldP0,
    pub w_prev: &'a FieldP1,
    pub tau: f64,
    /// Coefficient of ‖∇e_w‖² in the measurement norm; the u-term carries
    /// the h-factor weight.
    pub grad_coeff: f64,
    /// Number of iterates to record beyond the initial error e_0.
    pub n_iterations: usize,
}

fn reference_distance(
    probe: &ContractionProbe,
    u: &FieldP0,
    w: &FieldP1,
    u_ref: &FieldP0,
    w_ref: &FieldP1,
) -> f64 {
    let mesh = &probe.problem.mesh;
    let mut s = 0.0;
    for c in 0..mesh.n_cells() {
        let d = u.values[c] - u_ref.values[c];
        s += probe.h_field.values[c] * d * d * mesh.measure(c);
    }
    let dw = FieldP1 {
        values: w.values.iter().zip(&w_ref.values).map(|(a, b)| a - b).collect(),
    };
    let grad = grad_l2_norm_sq_p1(mesh, &dw).expect("fields live on the probe mesh");
    (s + probe.grad_coeff * grad).sqrt()
}

/// Double-run contraction measurement: first solves the step to a tight
/// tolerance, then replays the iteration recording the distance of each
/// iterate to that reference. Returns [e_0, ..., e_n].
pub fn measure_contraction(probe: &ContractionProbe) -> Result<Vec<f64>, BenchError> {
    let mut tight = *probe.scheme;
    tight.tol = 1e-22;
    tight.max_iter = probe.scheme.max_iter.max(5000);
    let reference = solve_nonlinear_step(
        probe.problem,
        &tight,
        probe.phi_breve,
        probe.h_field,
        probe.u_prev,
        probe.w_prev,
        probe.tau,
    )?;

    let mut errors = Vec::with_capacity(probe.n_iterations + 1);
    let mut u_iter = probe.u_prev.clone();
    let mut w_iter = probe.w_prev.clone();
    errors.push(reference_distance(probe, &u_iter, &w_iter, &reference.u, &reference.w));
    for _ in 0..probe.n_iterations {
        let l_field = l_factor_field(probe.scheme, probe.phi_breve, &u_iter, probe.tau);
        let (u_tilde, w_new) = linear_iteration(
            probe.problem,
            probe.h_field,
            probe.u_prev,
            &u_iter,
            &l_field,
            probe.phi_breve,
            probe.tau,
        )?;
        u_iter = clip_positive(&u_tilde);
        w_iter = w_new;
        errors.push(reference_distance(probe, &u_iter, &w_iter, &reference.u, &reference.w));
    }
    Ok(errors)
}

/// One cell of the robustness table.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub scheme: String,
    pub param: f64,
    pub tau: f64,
    pub h: f64,
    pub avg_iterations: f64,
    pub failures: usize,
    /// The run aborted before producing a record (setup or solver error).
    pub errored: bool,
}

/// The stabilization parameter of a scheme (L or M).
pub fn scheme_parameter(kind: &SchemeKind) -> f64 {
    match kind {
        SchemeKind::LScheme { l } => *l,
        SchemeKind::MScheme { m, .. } => *m,
        SchemeKind::Newton { m_reg, .. } => *m_reg,
    }
}

/// Runs the full (scheme, τ, h) grid. Jobs are independent and may run on a
/// worker pool; rows come back in deterministic grid order (scheme-major,
/// then τ, then h) regardless of completion order. Individual failures are
/// recorded, never fatal.
pub fn sweep<F>(
    schemes: &[SchemeConfig],
    taus: &[f64],
    hs: &[f64],
    workers: usize,
    run_one: F,
) -> Vec<SweepRow>
where
    F: Fn(&SchemeConfig, f64, f64) -> Result<RunRecord, StepperError> + Sync,
{
    let mut jobs = Vec::new();
    for scheme in schemes {
        for &tau in taus {
            for &h in hs {
                jobs.push((*scheme, tau, h));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("worker pool construction");
    pool.install(|| {
        jobs.par_iter()
            .map(|(scheme, tau, h)| {
                let base = SweepRow {
                    scheme: scheme.kind.label(),
                    param: scheme_parameter(&scheme.kind),
                    tau: *tau,
                    h: *h,
                    avg_iterations: f64::NAN,
                    failures: 0,
                    errored: false,
                };
                match run_one(scheme, *tau, *h) {
                    Ok(rec) => SweepRow {
                        avg_iterations: rec.avg_iterations,
                        failures: rec.failed_steps,
                        ..base
                    },
                    Err(_) => SweepRow { errored: true, ..base },
                }
            })
            .collect()
    })
}
