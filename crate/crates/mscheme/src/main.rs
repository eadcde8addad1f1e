//! Command-line entry point: load a TOML run description, execute the
//! requested study, and emit CSV/VTK artifacts plus a metadata file.

use clap::{Parser, Subcommand};
use mscheme::bench::{
    contraction_rate, exact_modified_pme, fit_order, measure_contraction, spacetime_error, sweep,
    theorem_grad_coeff, ContractionProbe, ExactTriple,
};
use mscheme::config::{
    barenblatt_params, build_model, build_problem, default_gamma, echo_config, initial_fields,
    parse_config, scheme_config, time_grid, RunConfig,
};
use mscheme::io::{
    fmt_float, write_contraction_csv, write_convergence_csv, write_metadata, write_run_summary,
    write_snapshot_csv, write_snapshot_vtk, write_sweep_csv,
};
use mscheme::model::ModelSystem;
use mscheme::scheme::SchemeConfig;
use mscheme::stepper::{h_factor_field, initial_w, prepare_run, run, RunOptions, TimeGrid};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mscheme", version, about = "Splitting linearisation schemes for degenerate parabolic systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run description.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// key.path=value overrides applied on top of the config file.
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,
    /// Output directory (defaults to the config's output.dir, then ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker pool size for sweeps.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Single time-stepping run with optional snapshots.
    Run,
    /// Time-convergence study against the exact solution.
    Convergence,
    /// Contraction-rate measurement over a τ list.
    Contraction,
    /// (scheme, τ, h) robustness sweep.
    Sweep,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(err.as_ref());
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::FAILURE
        }
    }
}

type AnyError = Box<dyn std::error::Error>;

fn execute(cli: &Cli) -> Result<ExitCode, AnyError> {
    let path = cli
        .config
        .as_ref()
        .ok_or("missing --config <path>")?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let config = parse_config(&text, &cli.overrides)?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let model = build_model(&config)?;
    match cli.command {
        Command::Run => cmd_run(&config, &model, &out),
        Command::Convergence => cmd_convergence(&config, &model, &out),
        Command::Contraction => cmd_contraction(&config, &model, &out),
        Command::Sweep => cmd_sweep(cli, &config, &model, &out),
    }
}

fn cmd_run(config: &RunConfig, model: &ModelSystem, out: &PathBuf) -> Result<ExitCode, AnyError> {
    let problem = build_problem(config, config.h)?;
    let scheme = scheme_config(&config.scheme, default_gamma(&config.model))?;
    let grid = time_grid(config);
    let (u0, v0) = initial_fields(config, &problem, model)?;
    let options = RunOptions {
        store_fields: false,
        abort_on_failure: true,
        snapshot_times: config.output.snapshot_times.clone(),
    };
    let record = run(model, &problem, &grid, &scheme, u0, v0, &options)?;
    for step in &record.snapshots {
        write_snapshot_csv(out, &problem.mesh, step)?;
        if problem.mesh.dim == 2 {
            write_snapshot_vtk(out, &problem.mesh, step)?;
        }
    }
    write_run_summary(out, "run-0", &scheme.kind, &record)?;
    write_metadata(
        out,
        &echo_config(config),
        &[
            ("study", "\"run\"".to_string()),
            ("u_breve", fmt_float(record.u_breve)),
            ("wall_time_seconds", fmt_float(record.wall_time_seconds)),
            ("failed_steps", record.failed_steps.to_string()),
            ("aborted", record.aborted.to_string()),
            ("max_u", fmt_float(record.max_u)),
            ("min_v", fmt_float(record.min_v)),
        ],
    )?;
    Ok(if record.aborted { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn study_taus(config: &RunConfig) -> Vec<f64> {
    if config.study.taus.is_empty() {
        vec![config.time.tau]
    } else {
        config.study.taus.clone()
    }
}

fn cmd_convergence(
    config: &RunConfig,
    model: &ModelSystem,
    out: &PathBuf,
) -> Result<ExitCode, AnyError> {
    let (params, center) = barenblatt_params(config)
        .ok_or("the convergence study needs initial.kind = \"barenblatt\"")?;
    let problem = build_problem(config, config.h)?;
    let scheme = scheme_config(&config.scheme, default_gamma(&config.model))?;
    let m = params.m;
    let u_exact = move |x: [f64; 2], t: f64| {
        exact_modified_pme([x[0] - center, x[1]], t, &params).expect("beta nonzero")
    };
    let w_exact = move |x: [f64; 2], t: f64| u_exact(x, t).powf(m);
    let mut rows = Vec::new();
    let mut aborted = false;
    for tau in study_taus(config) {
        let grid = TimeGrid::snapped(config.time.t_start, config.time.t_end, tau);
        let (u0, v0) = initial_fields(config, &problem, model)?;
        let options = RunOptions {
            store_fields: true,
            abort_on_failure: true,
            snapshot_times: Vec::new(),
        };
        let record = run(model, &problem, &grid, &scheme, u0, v0, &options)?;
        aborted |= record.aborted;
        let exact = ExactTriple { u: &u_exact, w: &w_exact, v: None };
        let error = spacetime_error(&problem.mesh, &record, &exact)?.sqrt();
        rows.push((tau, error));
    }
    write_convergence_csv(out, &rows)?;
    let slope = fit_order(&rows)?;
    write_metadata(
        out,
        &echo_config(config),
        &[
            ("study", "\"time_convergence\"".to_string()),
            ("fitted_order", fmt_float(slope)),
            ("aborted", aborted.to_string()),
        ],
    )?;
    Ok(if aborted { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn cmd_contraction(
    config: &RunConfig,
    model: &ModelSystem,
    out: &PathBuf,
) -> Result<ExitCode, AnyError> {
    let problem = build_problem(config, config.h)?;
    let scheme = scheme_config(&config.scheme, default_gamma(&config.model))?;
    let mut rows = Vec::new();
    for tau in study_taus(config) {
        let grid = TimeGrid::snapped(config.time.t_start, config.time.t_end, tau);
        let (u0, v0) = initial_fields(config, &problem, model)?;
        let setup = prepare_run(model, &problem, &grid, &u0)?;
        let h_field = h_factor_field(&problem, model, &v0, tau);
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
        let errors = measure_contraction(&probe)?;
        rows.push((tau, contraction_rate(&errors)?));
    }
    write_contraction_csv(out, &rows)?;
    let slope = fit_order(&rows)?;
    write_metadata(
        out,
        &echo_config(config),
        &[
            ("study", "\"contraction\"".to_string()),
            ("fitted_scaling", fmt_float(slope)),
        ],
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(
    cli: &Cli,
    config: &RunConfig,
    model: &ModelSystem,
    out: &PathBuf,
) -> Result<ExitCode, AnyError> {
    let gamma = default_gamma(&config.model);
    let schemes: Vec<SchemeConfig> = if config.study.schemes.is_empty() {
        vec![scheme_config(&config.scheme, gamma)?]
    } else {
        config
            .study
            .schemes
            .iter()
            .map(|s| scheme_config(s, gamma))
            .collect::<Result<_, _>>()?
    };
    let taus = study_taus(config);
    let hs = if config.study.hs.is_empty() { vec![config.h] } else { config.study.hs.clone() };
    let workers = cli.workers.unwrap_or(config.study.workers);
    let rows = sweep(&schemes, &taus, &hs, workers, |scheme, tau, h| {
        let problem = build_problem(config, h).expect("validated config");
        let (u0, v0) = initial_fields(config, &problem, model).expect("validated config");
        let grid = TimeGrid::snapped(config.time.t_start, config.time.t_end, tau);
        let options = RunOptions {
            store_fields: false,
            abort_on_failure: false,
            snapshot_times: Vec::new(),
        };
        run(model, &problem, &grid, scheme, u0, v0, &options)
    });
    write_sweep_csv(out, &rows)?;
    let total_failures: usize = rows.iter().map(|r| r.failures).sum();
    let errored = rows.iter().filter(|r| r.errored).count();
    write_metadata(
        out,
        &echo_config(config),
        &[
            ("study", "\"sweep\"".to_string()),
            ("grid_points", rows.len().to_string()),
            ("total_failed_steps", total_failures.to_string()),
            ("errored_points", errored.to_string()),
        ],
    )?;
    Ok(ExitCode::SUCCESS)
}
