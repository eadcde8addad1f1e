//! Artifact writers: CSV tables, per-snapshot field dumps, legacy VTK for 2D
//! meshes, and the run metadata file. All floats are written with 17
//! significant digits so repeated runs diff bitwise.

use crate::bench::{scheme_parameter, SweepRow};
use crate::fem::{Mesh, VField};
use crate::scheme::SchemeKind;
use crate::stepper::{RunRecord, StepFields};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_file(path: &Path, content: &str) -> Result<(), IoError> {
    let io = |source| IoError::Write { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(content.as_bytes()).map_err(io)
}

/// RFC 4180 quoting for fields that contain separators or quotes, such as
/// scheme labels like `M-scheme(M=0.01,gamma=0.25)`.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), IoError> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn write_convergence_csv(dir: &Path, rows: &[(f64, f64)]) -> Result<(), IoError> {
    let table: Vec<Vec<String>> =
        rows.iter().map(|&(tau, e)| vec![fmt_float(tau), fmt_float(e)]).collect();
    write_csv(&dir.join("convergence.csv"), &["tau", "error"], &table)
}

pub fn write_contraction_csv(dir: &Path, rows: &[(f64, f64)]) -> Result<(), IoError> {
    let table: Vec<Vec<String>> =
        rows.iter().map(|&(tau, r)| vec![fmt_float(tau), fmt_float(r)]).collect();
    write_csv(&dir.join("contraction.csv"), &["tau", "rate"], &table)
}

pub fn write_sweep_csv(dir: &Path, rows: &[SweepRow]) -> Result<(), IoError> {
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                csv_field(&r.scheme),
                fmt_float(r.param),
                fmt_float(r.tau),
                fmt_float(r.h),
                fmt_float(r.avg_iterations),
                if r.errored { "error".to_string() } else { r.failures.to_string() },
            ]
        })
        .collect();
    write_csv(
        &dir.join("sweep.csv"),
        &["scheme", "param", "tau", "h", "avg_iterations", "failures"],
        &table,
    )
}

fn scheme_gamma(kind: &SchemeKind) -> f64 {
    match kind {
        SchemeKind::LScheme { .. } => f64::NAN,
        SchemeKind::MScheme { gamma, .. } | SchemeKind::Newton { gamma, .. } => *gamma,
    }
}

pub fn write_run_summary(
    dir: &Path,
    run_id: &str,
    kind: &SchemeKind,
    record: &RunRecord,
) -> Result<(), IoError> {
    let row = vec![
        csv_field(run_id),
        csv_field(&record.scheme_label),
        fmt_float(scheme_parameter(kind)),
        fmt_float(scheme_gamma(kind)),
        fmt_float(record.tau),
        fmt_float(record.h),
        fmt_float(record.avg_iterations),
        record.failed_steps.to_string(),
        fmt_float(record.wall_time_seconds),
    ];
    write_csv(
        &dir.join("run_summary.csv"),
        &[
            "run_id",
            "scheme",
            "M_or_L",
            "gamma",
            "tau",
            "h",
            "avg_iterations",
            "failed_steps",
            "wall_time_seconds",
        ],
        &[row],
    )
}

/// Per-cell snapshot table: centroid coordinates, u, and centroid values of
/// w and v.
pub fn write_snapshot_csv(dir: &Path, mesh: &Mesh, step: &StepFields) -> Result<(), IoError> {
    let mut rows = Vec::with_capacity(mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let x = mesh.centroid(c);
        let verts = mesh.cell(c);
        let w_c = verts.iter().map(|&v| step.w.values[v]).sum::<f64>() / verts.len() as f64;
        let v_c = step.v.at_centroid(mesh, c);
        rows.push(vec![
            fmt_float(x[0]),
            fmt_float(x[1]),
            fmt_float(step.u.values[c]),
            fmt_float(w_c),
            fmt_float(v_c),
        ]);
    }
    let name = format!("snapshot_t{:.6}.csv", step.time);
    write_csv(&dir.join(name), &["x", "y", "u", "w", "v"], &rows)
}

/// Legacy ASCII VTK dump of a 2D snapshot: u as cell data, w (and v when
/// vertex-based) as point data.
pub fn write_snapshot_vtk(dir: &Path, mesh: &Mesh, step: &StepFields) -> Result<(), IoError> {
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(out, "fields at t = {}", fmt_float(step.time));
    out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {} double", mesh.n_vertices());
    for v in &mesh.vertices {
        let _ = writeln!(out, "{} {} 0.0", fmt_float(v[0]), fmt_float(v[1]));
    }
    let _ = writeln!(out, "CELLS {} {}", mesh.n_cells(), 4 * mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let verts = mesh.cell(c);
        let _ = writeln!(out, "3 {} {} {}", verts[0], verts[1], verts[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {}", mesh.n_cells());
    for _ in 0..mesh.n_cells() {
        out.push_str("5\n");
    }
    let _ = writeln!(out, "CELL_DATA {}", mesh.n_cells());
    out.push_str("SCALARS u double 1\nLOOKUP_TABLE default\n");
    for &u in &step.u.values {
        let _ = writeln!(out, "{}", fmt_float(u));
    }
    if let VField::P0(v) = &step.v {
        out.push_str("SCALARS v double 1\nLOOKUP_TABLE default\n");
        for &x in &v.values {
            let _ = writeln!(out, "{}", fmt_float(x));
        }
    }
    let _ = writeln!(out, "POINT_DATA {}", mesh.n_vertices());
    out.push_str("SCALARS w double 1\nLOOKUP_TABLE default\n");
    for &w in &step.w.values {
        let _ = writeln!(out, "{}", fmt_float(w));
    }
    if let VField::P1(v) = &step.v {
        out.push_str("SCALARS v double 1\nLOOKUP_TABLE default\n");
        for &x in &v.values {
            let _ = writeln!(out, "{}", fmt_float(x));
        }
    }
    let name = format!("snapshot_t{:.6}.vtk", step.time);
    write_file(&dir.join(name), &out)
}

/// Metadata: config echo, the a-priori bound, wall time, failure summary,
/// and any study-specific key-value pairs.
pub fn write_metadata(
    dir: &Path,
    config_echo: &str,
    entries: &[(&str, String)],
) -> Result<(), IoError> {
    let mut out = String::new();
    for (key, value) in entries {
        let _ = writeln!(out, "{key} = {value}");
    }
    out.push_str("\n# --- config echo ---\n");
    out.push_str(config_echo);
    write_file(&dir.join("metadata.toml"), &out)
}
