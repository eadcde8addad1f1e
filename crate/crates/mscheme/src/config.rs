//! TOML run descriptions: model presets, domain, time grid, scheme, boundary
//! conditions, initial data, and study selection, with validation and the
//! builders that turn a config into solver objects.

use crate::bench::{exact_modified_pme, BarenblattParams};
use crate::fem::{build_mesh, BcKind, BoundarySpec, Domain, FeProblem, FieldP0, FieldP1, SideSpec, VField};
use crate::model::{Coupling, ModelSystem};
use crate::scheme::{SchemeConfig, SchemeKind};
use crate::stepper::TimeGrid;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("override `{0}` is not of the form key.path=value")]
    BadOverride(String),
    #[error(transparent)]
    Bc(#[from] crate::fem::BcError),
    #[error(transparent)]
    Mesh(#[from] crate::fem::MeshError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), reason: reason.into() }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Pme {
        m: f64,
        #[serde(default = "default_one")]
        beta_reaction: f64,
    },
    Biofilm {
        k1: f64,
        k2: f64,
        k3: f64,
        k4: f64,
        d1: f64,
        #[serde(default = "default_one")]
        d2: f64,
        #[serde(default = "default_four")]
        alpha: f64,
        #[serde(default = "default_four")]
        beta: f64,
        /// Substrate mobility: 0 (ODE coupling) or 1 (PDE coupling).
        mu: u8,
    },
}

fn default_one() -> f64 {
    1.0
}
fn default_four() -> f64 {
    4.0
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    Interval { a: f64, b: f64 },
    Rectangle { x0: f64, x1: f64, y0: f64, y1: f64 },
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default)]
    pub t_start: f64,
    pub t_end: f64,
    pub tau: f64,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    /// "l_scheme", "m_scheme", or "newton".
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    /// "dirichlet_zero" or "neumann" per side.
    #[serde(default = "default_u_bc")]
    pub u: [String; 4],
    /// Additionally "dirichlet=<value>" per side.
    #[serde(default = "default_v_bc")]
    pub v: [String; 4],
}

fn default_u_bc() -> [String; 4] {
    std::array::from_fn(|_| "dirichlet_zero".to_string())
}
fn default_v_bc() -> [String; 4] {
    std::array::from_fn(|_| "neumann".to_string())
}

impl Default for BoundarySection {
    fn default() -> Self {
        BoundarySection { u: default_u_bc(), v: default_v_bc() }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Zero,
    Constant {
        value: f64,
    },
    /// Exact modified-PME profile at time t0; C defaults to the
    /// support-fits-domain rule when absent.
    Barenblatt {
        m: f64,
        beta: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        c: Option<f64>,
        t0: f64,
    },
    /// Two scaled hemispheres on an interval domain.
    Hemispheres {
        height: f64,
        radius: f64,
        x1: f64,
        x2: f64,
    },
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    /// "single", "time_convergence", "contraction", or "sweep".
    #[serde(default = "default_study_kind")]
    pub kind: String,
    /// τ list for convergence/contraction studies and the sweep grid.
    #[serde(default)]
    pub taus: Vec<f64>,
    /// h list for the sweep grid.
    #[serde(default)]
    pub hs: Vec<f64>,
    /// Scheme variants compared by a sweep; empty means use [scheme].
    #[serde(default)]
    pub schemes: Vec<SchemeSection>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_study_kind() -> String {
    "single".to_string()
}
fn default_workers() -> usize {
    1
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            kind: default_study_kind(),
            taus: Vec::new(),
            hs: Vec::new(),
            schemes: Vec::new(),
            workers: 1,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Target mesh width.
    pub h: f64,
    /// Uniform initial substrate value; defaults to 1 for biofilm, 0 for PME.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_initial: Option<f64>,
    pub model: ModelConfig,
    pub domain: DomainConfig,
    pub time: TimeConfig,
    pub scheme: SchemeSection,
    #[serde(default)]
    pub boundary: BoundarySection,
    pub initial: InitialConfig,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub study: StudySection,
}

/// Parses, applies `key.path=value` overrides, validates, and fills defaults.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut value: toml::Value = text.parse()?;
    for ov in overrides {
        apply_override(&mut value, ov)?;
    }
    let config: RunConfig = value.try_into()?;
    validate(&config)?;
    Ok(config)
}

fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.is_empty() || keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::BadOverride(spec.to_string()));
    }
    let mut node = root;
    for &key in &keys[..keys.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
        node = table
            .entry(key)
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
    let parsed = if let Ok(i) = raw.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = raw.parse::<f64>() {
        toml::Value::Float(f)
    } else if let Ok(b) = raw.parse::<bool>() {
        toml::Value::Boolean(b)
    } else {
        toml::Value::String(raw.to_string())
    };
    table.insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}

fn validate(config: &RunConfig) -> Result<(), ConfigError> {
    if config.h <= 0.0 {
        return Err(invalid("h", "mesh width must be positive"));
    }
    let t = &config.time;
    if t.tau <= 0.0 {
        return Err(invalid("time.tau", "time step must be positive"));
    }
    if t.t_end <= t.t_start {
        return Err(invalid("time.t_end", "final time must exceed t_start"));
    }
    let model = build_model(config)?;
    let tau_disc = model.tau_disc();
    for &tau in config.study.taus.iter().chain(std::iter::once(&t.tau)) {
        if tau >= tau_disc {
            return Err(invalid(
                "time.tau",
                format!(
                    "tau = {tau} violates the time-discrete bound tau < min(1/f_M, 1/g_M) = {tau_disc}"
                ),
            ));
        }
    }
    match &config.model {
        ModelConfig::Pme { m, .. } => {
            if *m <= 1.0 {
                return Err(invalid("model.m", "exponent must exceed 1"));
            }
        }
        ModelConfig::Biofilm { mu, k2, d1, d2, alpha, beta, .. } => {
            if *mu > 1 {
                return Err(invalid("model.mu", "mobility flag must be 0 or 1"));
            }
            for (key, v) in [("model.k2", k2), ("model.d1", d1), ("model.d2", d2), ("model.alpha", alpha), ("model.beta", beta)]
            {
                if *v <= 0.0 {
                    return Err(invalid(key, "must be positive"));
                }
            }
        }
    }
    for (i, s) in config.boundary.u.iter().enumerate() {
        match s.as_str() {
            "dirichlet_zero" | "neumann" => {}
            other => {
                return Err(invalid(
                    &format!("boundary.u[{i}]"),
                    format!("`{other}` is not a density condition (dirichlet_zero | neumann)"),
                ))
            }
        }
    }
    for (i, s) in config.boundary.v.iter().enumerate() {
        parse_bc(s).map_err(|reason| invalid(&format!("boundary.v[{i}]"), reason))?;
    }
    scheme_config(&config.scheme, default_gamma(&config.model))?;
    for (i, s) in config.study.schemes.iter().enumerate() {
        scheme_config(s, default_gamma(&config.model))
            .map_err(|e| invalid(&format!("study.schemes[{i}]"), e.to_string()))?;
    }
    match config.study.kind.as_str() {
        "single" | "time_convergence" | "contraction" | "sweep" => {}
        other => {
            return Err(invalid(
                "study.kind",
                format!("`{other}` is not a study (single | time_convergence | contraction | sweep)"),
            ))
        }
    }
    Ok(())
}

fn parse_bc(s: &str) -> Result<BcKind, String> {
    match s {
        "dirichlet_zero" => Ok(BcKind::DirichletZero),
        "neumann" => Ok(BcKind::NeumannZero),
        other => {
            if let Some(v) = other.strip_prefix("dirichlet=") {
                v.parse::<f64>()
                    .map(BcKind::DirichletValue)
                    .map_err(|_| format!("`{other}` has a non-numeric Dirichlet value"))
            } else {
                Err(format!("`{other}` is not a condition (dirichlet_zero | neumann | dirichlet=<v>)"))
            }
        }
    }
}

/// γ default: 1/(m-1) for the power law, 1/α for the singular nonlinearity.
pub fn default_gamma(model: &ModelConfig) -> f64 {
    match model {
        ModelConfig::Pme { m, .. } => 1.0 / (m - 1.0),
        ModelConfig::Biofilm { alpha, .. } => 1.0 / alpha,
    }
}

pub fn build_model(config: &RunConfig) -> Result<ModelSystem, ConfigError> {
    Ok(match &config.model {
        ModelConfig::Pme { m, beta_reaction } => ModelSystem::pme(*m, *beta_reaction),
        ModelConfig::Biofilm { k1, k2, k3, k4, d1, d2, alpha, beta, mu } => ModelSystem::biofilm(
            *k1,
            *k2,
            *k3,
            *k4,
            *d1,
            *d2,
            *alpha,
            *beta,
            if *mu == 0 { Coupling::Ode } else { Coupling::Pde },
        ),
    })
}

pub fn scheme_config(section: &SchemeSection, gamma_default: f64) -> Result<SchemeConfig, ConfigError> {
    let gamma = section.gamma.unwrap_or(gamma_default);
    let kind = match section.kind.as_str() {
        "l_scheme" => SchemeKind::LScheme {
            l: section.l.ok_or_else(|| invalid("scheme.l", "the L-scheme requires `l`"))?,
        },
        "m_scheme" => SchemeKind::MScheme {
            m: section.m.ok_or_else(|| invalid("scheme.m", "the M-scheme requires `m`"))?,
            gamma,
        },
        "newton" => SchemeKind::newton(gamma),
        other => {
            return Err(invalid(
                "scheme.kind",
                format!("`{other}` is not a scheme (l_scheme | m_scheme | newton)"),
            ))
        }
    };
    let mut config = SchemeConfig::new(kind);
    if let Some(tol) = section.tol {
        if tol <= 0.0 {
            return Err(invalid("scheme.tol", "tolerance must be positive"));
        }
        config.tol = tol;
    }
    if let Some(max_iter) = section.max_iter {
        if max_iter == 0 {
            return Err(invalid("scheme.max_iter", "iteration budget must be positive"));
        }
        config.max_iter = max_iter;
    }
    Ok(config)
}

fn domain(config: &RunConfig) -> Domain {
    match config.domain {
        DomainConfig::Interval { a, b } => Domain::Interval { a, b },
        DomainConfig::Rectangle { x0, x1, y0, y1 } => Domain::Rectangle { x0, x1, y0, y1 },
    }
}

pub fn build_problem(config: &RunConfig, h: f64) -> Result<FeProblem, ConfigError> {
    let mesh = Arc::new(build_mesh(domain(config), h)?);
    let u_sides: Vec<BcKind> = config
        .boundary
        .u
        .iter()
        .map(|s| parse_bc(s).expect("validated"))
        .collect();
    let v_sides: Vec<BcKind> = config
        .boundary
        .v
        .iter()
        .map(|s| parse_bc(s).expect("validated"))
        .collect();
    let bc = BoundarySpec {
        u: SideSpec { left: u_sides[0], right: u_sides[1], bottom: u_sides[2], top: u_sides[3] },
        v: SideSpec { left: v_sides[0], right: v_sides[1], bottom: v_sides[2], top: v_sides[3] },
    };
    Ok(FeProblem::new(mesh, bc)?)
}

pub fn time_grid(config: &RunConfig) -> TimeGrid {
    TimeGrid { t_start: config.time.t_start, t_end: config.time.t_end, tau: config.time.tau }
}

/// The Barenblatt parameters implied by the config, with C defaulted so the
/// initial support radius is 60% of the domain half-width.
pub fn barenblatt_params(config: &RunConfig) -> Option<(BarenblattParams, f64)> {
    let InitialConfig::Barenblatt { m, beta, c, t0 } = config.initial else {
        return None;
    };
    let (a, b) = match config.domain {
        DomainConfig::Interval { a, b } => (a, b),
        DomainConfig::Rectangle { x0, x1, .. } => (x0, x1),
    };
    let center = 0.5 * (a + b);
    let d = match config.domain {
        DomainConfig::Interval { .. } => 1,
        DomainConfig::Rectangle { .. } => 2,
    };
    let params = match c {
        Some(c) => BarenblattParams { m, d, c, beta },
        None => BarenblattParams::with_initial_support(m, d, beta, t0, 0.3 * (b - a)),
    };
    Some((params, center))
}

/// Initial (u, v) fields: u from centroid samples of the named profile, v a
/// uniform value in the μ-appropriate space.
pub fn initial_fields(
    config: &RunConfig,
    problem: &FeProblem,
    model: &ModelSystem,
) -> Result<(FieldP0, VField), ConfigError> {
    let mesh = &problem.mesh;
    let u0 = match &config.initial {
        InitialConfig::Zero => FieldP0::zeros(mesh),
        InitialConfig::Constant { value } => FieldP0::constant(mesh, *value),
        InitialConfig::Barenblatt { .. } => {
            let (params, center) = barenblatt_params(config).expect("variant checked");
            let t0 = match config.initial {
                InitialConfig::Barenblatt { t0, .. } => t0,
                _ => unreachable!(),
            };
            FieldP0::from_fn(mesh, |x| {
                exact_modified_pme([x[0] - center, x[1]], t0, &params)
                    .expect("beta validated nonzero")
            })
        }
        InitialConfig::Hemispheres { height, radius, x1, x2 } => {
            let (h, r, c1, c2) = (*height, *radius, *x1, *x2);
            FieldP0::from_fn(mesh, |x| {
                let bump = |c: f64| {
                    let s = 1.0 - ((x[0] - c) / r).powi(2);
                    if s > 0.0 {
                        h * s.sqrt()
                    } else {
                        0.0
                    }
                };
                bump(c1).max(bump(c2))
            })
        }
    };
    let v_value = config.v_initial.unwrap_or(match config.model {
        ModelConfig::Biofilm { .. } => 1.0,
        ModelConfig::Pme { .. } => 0.0,
    });
    let v0 = match model.coupling {
        Coupling::Ode => VField::P0(FieldP0::constant(mesh, v_value)),
        Coupling::Pde => VField::P1(FieldP1::constant(mesh, v_value)),
    };
    Ok((u0, v0))
}

/// Config echo for the metadata file; parsing it back yields the same config.
pub fn echo_config(config: &RunConfig) -> String {
    toml::to_string_pretty(config).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL_PME: &str = r#"
        h = 0.01

        [model]
        preset = "pme"
        m = 4.0

        [domain]
        kind = "interval"
        a = -1.0
        b = 1.0

        [time]
        t_end = 1.0
        tau = 0.01

        [scheme]
        kind = "m_scheme"
        m = 1e-3

        [initial]
        kind = "zero"
    "#;

    fn minimal() -> String {
        MINIMAL_PME.to_string()
    }

    #[test]
    fn minimal_pme_config_fills_defaults() {
        let config = parse_config(&minimal(), &[]).unwrap();
        let scheme = scheme_config(&config.scheme, default_gamma(&config.model)).unwrap();
        assert!((scheme.tol - 1e-5).abs() < 1e-20);
        assert_eq!(scheme.max_iter, 500);
        match scheme.kind {
            SchemeKind::MScheme { m, gamma } => {
                assert_eq!(m, 1e-3);
                assert!((gamma - 1.0 / 3.0).abs() < 1e-15);
            }
            _ => panic!("wrong scheme kind"),
        }
    }

    #[test]
    fn tau_guard_names_the_bound() {
        let config = parse_config(&minimal(), &["model.beta_reaction=1.0".into(), "time.tau=1.5".into()]);
        let err = config.unwrap_err().to_string();
        assert!(err.contains("time.tau") && err.contains("min(1/f_M, 1/g_M)"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("mystery = 3\n{}", minimal());
        assert!(parse_config(&text, &[]).is_err());
        let text = minimal().replace("[time]", "[time]\n        warp = 9");
        assert!(parse_config(&text, &[]).is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let config = parse_config(&minimal(), &["time.tau=0.005".into(), "scheme.kind=newton".into()]).unwrap();
        assert_eq!(config.time.tau, 0.005);
        assert_eq!(config.scheme.kind, "newton");
        assert!(parse_config(&minimal(), &["no_equals_sign".into()]).is_err());
    }

    #[test]
    fn biofilm_preset_reports_u_breve() {
        let text = r#"
            h = 0.01
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
            tau = 0.01

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
        "#;
        let config = parse_config(text, &[]).unwrap();
        assert!((default_gamma(&config.model) - 0.25).abs() < 1e-15);
        let model = build_model(&config).unwrap();
        let problem = build_problem(&config, config.h).unwrap();
        let (u0, v0) = initial_fields(&config, &problem, &model).unwrap();
        assert!(matches!(v0, VField::P0(_)));
        let max_u0 = u0.values.iter().cloned().fold(0.0_f64, f64::max);
        assert!((max_u0 - 0.9).abs() < 1e-2, "{max_u0}");
        let setup =
            crate::stepper::prepare_run(&model, &problem, &time_grid(&config), &u0).unwrap();
        assert!((setup.u_breve - 0.992).abs() < 2e-3, "{}", setup.u_breve);
    }

    #[test]
    fn config_echo_round_trips() {
        let config = parse_config(&minimal(), &["study.kind=time_convergence".into()]).unwrap();
        let echoed = echo_config(&config);
        let reparsed = parse_config(&echoed, &[]).unwrap();
        assert_eq!(config, reparsed);
    }

    #[test]
    fn barenblatt_default_c_fits_the_domain() {
        let config = parse_config(
            &minimal(),
            &[
                "initial.kind=barenblatt".into(),
                "initial.m=4.0".into(),
                "initial.beta=1.0".into(),
                "initial.t0=0.5".into(),
                "time.t_start=0.5".into(),
            ],
        )
        .unwrap();
        let (params, center) = barenblatt_params(&config).unwrap();
        assert_eq!(center, 0.0);
        let s0 = crate::bench::self_similar_time(0.5, &params);
        assert!((params.support_radius(s0) - 0.6).abs() < 1e-12);
    }
}
