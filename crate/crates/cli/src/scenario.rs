//! Scenario files: TOML documents describing a system, its projections,
//! numerics, requested checks and outputs.
//!
//! A file either spells the system out in `[system]`, `[bounds]` and
//! `[projections]`, or names a `builtin` whose tables are generated from
//! `[parameters]`. Explicit tables in the file are merged over the generated
//! ones, and `--set` overrides are applied to the file before either step.

use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::sync::Arc;

use linearize_core::dynamics::{BoundMode, LinearPart, Perturbation, PerturbationBounds, SystemSpec};
use linearize_core::trichotomy::{CertificationGrid, ProjectionPair};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::expr::{parse_with_dimension, Expr, ParseError};

pub const BUILTINS: [&str; 3] = ["example_2_5", "example_5_1", "example_5_2"];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Syntax(String),
    #[error("{location}: {message}")]
    Invalid { location: String, message: String },
    #[error("unknown builtin `{0}` (known: example_2_5, example_5_1, example_5_2)")]
    UnknownBuiltin(String),
    #[error("override `{text}`: {message}")]
    Override { text: String, message: String },
}

fn invalid(location: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        location: location.into(),
        message: message.into(),
    }
}

/// The resolved scenario document.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub parameters: Table,
    pub system: SystemSection,
    pub bounds: BoundsSection,
    pub projections: ProjectionsSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub checks: ChecksSection,
    #[serde(default)]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub dimension: usize,
    /// Rows of `A(t)`, one expression per entry.
    pub a: Vec<Vec<String>>,
    /// Components of `f(t, x)`.
    pub f: Vec<String>,
    #[serde(default)]
    pub period: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub mode: BoundMode,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Expressions of `t`.
    #[serde(default)]
    pub phi: Option<String>,
    #[serde(default)]
    pub psi: Option<String>,
    #[serde(default)]
    pub c1: Option<f64>,
    #[serde(default)]
    pub c2: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProjectionsSection {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    /// Sizes of the coordinate blocks `P1..P4`.
    #[serde(default)]
    pub blocks: Option<[usize; 4]>,
    /// Replace the sampled κ estimates.
    #[serde(default)]
    pub kappa1: Option<f64>,
    #[serde(default)]
    pub kappa2: Option<f64>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn to_grid(self, location: &str) -> Result<CertificationGrid, ScenarioError> {
        CertificationGrid::new(self.start, self.end, self.step).map_err(|e| invalid(location, e.to_string()))
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsSection {
    pub window: (f64, f64),
    pub base: f64,
    pub transition_tol: f64,
    pub certification: GridSpec,
    pub alpha_seed: Option<f64>,
    pub fp_tol: f64,
    pub tail_tol: f64,
    pub step: f64,
    pub max_sweeps: usize,
    pub half_width: Option<f64>,
    pub orbit_tol: f64,
    /// Sampling step and tolerance of the declared-bounds audit.
    pub audit_step: f64,
    pub audit_tol: f64,
    pub kappa_guard: f64,
}

impl Default for NumericsSection {
    fn default() -> Self {
        let evaluator = linearize_core::conjugacy::EvaluatorConfig::default();
        Self {
            window: (-40.0, 40.0),
            base: 0.0,
            transition_tol: 1e-11,
            certification: GridSpec {
                start: -10.0,
                end: 10.0,
                step: 0.1,
            },
            alpha_seed: None,
            fp_tol: evaluator.fp_tol,
            tail_tol: evaluator.tail_tol,
            step: evaluator.step,
            max_sweeps: evaluator.max_sweeps,
            half_width: evaluator.half_width,
            orbit_tol: evaluator.orbit_tol,
            audit_step: 0.05,
            audit_tol: 1e-9,
            kappa_guard: linearize_core::trichotomy::DEFAULT_KAPPA_GUARD,
        }
    }
}

/// Requested checks; a present table enables the check.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksSection {
    pub seed: u64,
    pub conjugacy: Option<ConjugacySection>,
    pub glue: Option<GlueSection>,
    pub holder: Option<HolderSection>,
    pub flow_periodicity: Option<FlowPeriodicitySection>,
    pub kernel_periodicity: Option<KernelPeriodicitySection>,
    pub nonperiodicity: Option<NonperiodicitySection>,
}

impl Default for ChecksSection {
    fn default() -> Self {
        Self {
            seed: 7,
            conjugacy: None,
            glue: None,
            holder: None,
            flow_periodicity: None,
            kernel_periodicity: None,
            nonperiodicity: None,
        }
    }
}

impl ChecksSection {
    /// Whether any check needs an evaluator.
    pub fn needs_evaluator(&self) -> bool {
        self.conjugacy.is_some() || self.glue.is_some() || self.holder.is_some() || self.nonperiodicity.is_some()
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ConjugacySection {
    pub samples: usize,
    pub transport_samples: usize,
    pub seed: Option<u64>,
    pub t_range: (f64, f64),
    pub state_range: (f64, f64),
    pub composition_tol: Option<f64>,
    pub displacement_slack: f64,
    pub transport_tol: f64,
    pub fd_step: f64,
}

impl Default for ConjugacySection {
    fn default() -> Self {
        let d = linearize_core::verify::ConjugacyCheckConfig::default();
        Self {
            samples: d.samples,
            transport_samples: d.transport_samples,
            seed: None,
            t_range: d.t_range,
            state_range: d.state_range,
            composition_tol: d.composition_tol,
            displacement_slack: d.displacement_slack,
            transport_tol: d.transport_tol,
            fd_step: d.fd_step,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GlueSection {
    pub samples: usize,
    pub seed: Option<u64>,
    pub state_range: (f64, f64),
}

impl Default for GlueSection {
    fn default() -> Self {
        Self {
            samples: 10,
            seed: None,
            state_range: (-2.0, 2.0),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct HolderSection {
    pub q: f64,
    /// `None`: the smallest admissible `p` from the premise.
    pub p: Option<f64>,
    pub premise_t_samples: Vec<f64>,
    pub t_samples: Vec<f64>,
    pub separations: Vec<f64>,
    pub bases_per_time: usize,
    pub state_range: (f64, f64),
    pub seed: Option<u64>,
    pub directions: Vec<String>,
}

impl Default for HolderSection {
    fn default() -> Self {
        let d = linearize_core::verify::HolderConfig::default();
        Self {
            q: d.q,
            p: None,
            premise_t_samples: vec![-6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0],
            t_samples: d.t_samples,
            separations: d.separations,
            bases_per_time: d.bases_per_time,
            state_range: d.state_range,
            seed: None,
            directions: vec!["h".into(), "l".into()],
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FlowPeriodicitySection {
    pub period: Option<f64>,
    pub samples: usize,
    pub seed: Option<u64>,
    pub t_range: (f64, f64),
    /// Largest `|t − s|` of a sampled pair.
    pub span: f64,
    pub state_range: (f64, f64),
    /// Integration tolerance; the threshold is ten times this.
    pub tol: f64,
}

impl Default for FlowPeriodicitySection {
    fn default() -> Self {
        Self {
            period: None,
            samples: 10,
            seed: None,
            t_range: (-3.0, 3.0),
            span: 3.0,
            state_range: (-2.0, 2.0),
            tol: 1e-7,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct KernelPeriodicitySection {
    pub period: Option<f64>,
    pub grid: GridSpec,
    pub threshold: f64,
}

impl Default for KernelPeriodicitySection {
    fn default() -> Self {
        Self {
            period: None,
            grid: GridSpec {
                start: -3.0,
                end: 3.0,
                step: 0.25,
            },
            threshold: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NonperiodicitySection {
    #[serde(default)]
    pub period: Option<f64>,
    pub t_samples: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Positive floor fixed before the run.
    pub floor: f64,
    #[serde(default = "default_agreement_tol")]
    pub agreement_tol: f64,
}

fn default_agreement_tol() -> f64 {
    1e-4
}

/// Points at which `H` and `L` are tabulated into the CSV grid.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
    pub report: String,
    pub csv: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: ".".into(),
            report: "report.json".into(),
            csv: "grid.csv".into(),
        }
    }
}

/// A validated scenario ready to run.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub config: ScenarioConfig,
    pub system: SystemSpec,
    pub pair: ProjectionPair,
}

/// `key.path=value`; the value is read as a TOML value, or as a string when it
/// does not parse as one.
pub fn parse_override(text: &str) -> Result<(Vec<String>, Value), ScenarioError> {
    let err = |message: &str| ScenarioError::Override {
        text: text.to_string(),
        message: message.to_string(),
    };
    let (key, raw) = text.split_once('=').ok_or_else(|| err("expected key.path=value"))?;
    let path: Vec<String> = key.trim().split('.').map(|s| s.trim().to_string()).collect();
    if path.iter().any(String::is_empty) {
        return Err(err("empty key segment"));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply_override(table: &mut Table, path: &[String], value: Value) -> Result<(), String> {
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut cursor = table;
    for segment in parents {
        let entry = cursor
            .entry(segment.clone())
            .or_insert_with(|| Value::Table(Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| format!("`{segment}` is not a table"))?;
    }
    cursor.insert(last.clone(), value);
    Ok(())
}

fn merge(base: &mut Table, over: Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Read and validate a scenario file.
pub fn load_scenario(path: &Path, overrides: &[String]) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let fallback = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    scenario_from_str(&text, overrides, fallback)
}

/// A built-in scenario with optional overrides, without a file.
pub fn builtin_scenario(name: &str, overrides: &[String]) -> Result<Scenario, ScenarioError> {
    scenario_from_str(&format!("builtin = \"{name}\"\n"), overrides, Some(name.to_string()))
}

pub fn scenario_from_str(
    text: &str,
    overrides: &[String],
    fallback_name: Option<String>,
) -> Result<Scenario, ScenarioError> {
    let mut table: Table = text.parse().map_err(|e: toml::de::Error| ScenarioError::Syntax(e.to_string()))?;
    for o in overrides {
        let (path, value) = parse_override(o)?;
        apply_override(&mut table, &path, value).map_err(|message| ScenarioError::Override {
            text: o.clone(),
            message,
        })?;
    }
    let config: ScenarioConfig = match table.get("builtin") {
        None if overrides.is_empty() && !has_check_switches(&table) => {
            // Straight from the text so that errors carry line and column.
            toml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?
        }
        None => Value::Table(resolve_check_switches(table))
            .try_into()
            .map_err(|e: toml::de::Error| ScenarioError::Syntax(e.to_string()))?,
        Some(builtin) => {
            let name = builtin
                .as_str()
                .ok_or_else(|| invalid("builtin", "must be a string"))?
                .to_string();
            let parameters = match table.get("parameters") {
                Some(Value::Table(t)) => t.clone(),
                Some(_) => return Err(invalid("parameters", "must be a table")),
                None => Table::new(),
            };
            let mut base = builtin_table(&name, &parameters)?;
            merge(&mut base, table);
            Value::Table(resolve_check_switches(base))
                .try_into()
                .map_err(|e: toml::de::Error| ScenarioError::Syntax(e.to_string()))?
        }
    };
    validate(config, text, fallback_name)
}

fn has_check_switches(table: &Table) -> bool {
    matches!(table.get("checks"), Some(Value::Table(c)) if c.values().any(Value::is_bool))
}

/// `checks.<name> = false` removes a check, `true` enables it with defaults.
fn resolve_check_switches(mut table: Table) -> Table {
    if let Some(Value::Table(checks)) = table.get_mut("checks") {
        checks.retain(|_, v| !matches!(v, Value::Boolean(false)));
        for (_, v) in checks.iter_mut() {
            if matches!(v, Value::Boolean(true)) {
                *v = Value::Table(Table::new());
            }
        }
    }
    table
}

fn number(parameters: &Table, key: &str, default: f64) -> Result<f64, ScenarioError> {
    match parameters.get(key) {
        None => Ok(default),
        Some(Value::Float(v)) => Ok(*v),
        Some(Value::Integer(v)) => Ok(*v as f64),
        Some(_) => Err(invalid(format!("parameters.{key}"), "must be a number")),
    }
}

fn check_parameters(name: &str, parameters: &Table, allowed: &[&str]) -> Result<(), ScenarioError> {
    match parameters.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(invalid(
            format!("parameters.{k}"),
            format!("not a parameter of {name} (allowed: {})", allowed.join(", ")),
        )),
        None => Ok(()),
    }
}

/// Tables of a built-in system. The defaults are the published constants:
/// `δ = 0.1` for the bounded example and `ε = 0.05` for the integrable one.
pub fn builtin_table(name: &str, parameters: &Table) -> Result<Table, ScenarioError> {
    let text = match name {
        "example_2_5" => {
            check_parameters(name, parameters, &[])?;
            r#"
[system]
dimension = 1
a = [["-tanh(t)"]]
f = ["0"]

[bounds]
mode = "bounded_lipschitz"
mu = 0.0
gamma = 0.0

[projections]
p = [[1.0]]
q = [[1.0]]
"#
            .to_string()
        }
        "example_5_1" => {
            check_parameters(name, parameters, &["delta"])?;
            let delta = number(parameters, "delta", 0.1)?;
            if !(delta >= 0.0 && delta.is_finite()) {
                return Err(invalid("parameters.delta", "must be finite and nonnegative"));
            }
            format!(
                r#"
[system]
dimension = 1
a = [["-tanh(t)"]]
f = ["{delta:?}*sin(t)*sin(x1)"]
period = {TAU:?}

[bounds]
mode = "bounded_lipschitz"
mu = {delta:?}
gamma = {delta:?}

[projections]
p = [[1.0]]
q = [[1.0]]

[checks.conjugacy]
[checks.glue]
[checks.holder]
"#
            )
        }
        "example_5_2" => {
            check_parameters(name, parameters, &["epsilon"])?;
            let eps = number(parameters, "epsilon", 0.05)?;
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(invalid("parameters.epsilon", "must be finite and positive"));
            }
            let c = eps * PI;
            format!(
                r#"
[system]
dimension = 1
a = [["-tanh(t)"]]
f = ["{eps:?}/(1 + t^2)*sin(x1)"]

[bounds]
mode = "integrable"
phi = "{eps:?}/(1 + t^2)"
psi = "{eps:?}/(1 + t^2)"
c1 = {c:?}
c2 = {c:?}

[projections]
p = [[1.0]]
q = [[1.0]]
blocks = [0, 1, 0, 0]

[checks.conjugacy]
[checks.holder]
"#
            )
        }
        other => return Err(ScenarioError::UnknownBuiltin(other.to_string())),
    };
    Ok(text.parse().expect("built-in tables are valid TOML"))
}

/// `key: column c` or, when the expression appears verbatim in the source,
/// `key (line l, column c)`.
fn expression_location(source: &str, key: &str, expression: &str, err: &ParseError) -> String {
    let quoted = format!("\"{expression}\"");
    for (l, line) in source.lines().enumerate() {
        if let Some(pos) = line.find(&quoted) {
            let column = line[..pos + 1].chars().count() + expression[..err.span().start].chars().count() + 1;
            return format!("{key} (line {}, column {column})", l + 1);
        }
    }
    key.to_string()
}

fn parse_field(source: &str, key: &str, text: &str, dimension: Option<usize>) -> Result<Expr, ScenarioError> {
    parse_with_dimension(text, dimension).map_err(|e| invalid(expression_location(source, key, text, &e), e.to_string()))
}

fn matrix(rows: &[Vec<f64>], n: usize, key: &str) -> Result<DMatrix<f64>, ScenarioError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(invalid(key, format!("must be a {n}x{n} matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn positive(value: f64, key: &str) -> Result<(), ScenarioError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("must be positive and finite, got {value}")))
    }
}

fn probe_expressions(exprs: &[(String, &Expr)], n: usize) -> Result<(), ScenarioError> {
    let probes = [-1.0, 0.0, 0.5, 2.0];
    for (key, e) in exprs {
        for &t in &probes {
            let x = vec![0.25 * t; n];
            e.eval(t, &x).map_err(|err| invalid(key.clone(), format!("at t = {t}: {err}")))?;
        }
    }
    Ok(())
}

fn validate(config: ScenarioConfig, source: &str, fallback_name: Option<String>) -> Result<Scenario, ScenarioError> {
    let sys = &config.system;
    let n = sys.dimension;
    if n == 0 {
        return Err(invalid("system.dimension", "must be at least 1"));
    }
    if sys.a.len() != n || sys.a.iter().any(|r| r.len() != n) {
        return Err(invalid("system.a", format!("must have {n} rows of {n} entries")));
    }
    if sys.f.len() != n {
        return Err(invalid("system.f", format!("must have {n} components, got {}", sys.f.len())));
    }
    let mut a_exprs = Vec::with_capacity(n * n);
    for (i, row) in sys.a.iter().enumerate() {
        for (j, text) in row.iter().enumerate() {
            let key = format!("system.a[{i}][{j}]");
            let e = parse_field(source, &key, text, Some(n))?;
            if e.depends_on_state() {
                return Err(invalid(key, "entries of A may depend on t only"));
            }
            a_exprs.push((key, e));
        }
    }
    let mut f_exprs = Vec::with_capacity(n);
    for (i, text) in sys.f.iter().enumerate() {
        let key = format!("system.f[{i}]");
        f_exprs.push((key.clone(), parse_field(source, &key, text, Some(n))?));
    }
    if let Some(period) = sys.period {
        positive(period, "system.period")?;
    }

    let b = &config.bounds;
    let required = |v: Option<f64>, key: &str| -> Result<f64, ScenarioError> {
        let v = v.ok_or_else(|| invalid(format!("bounds.{key}"), format!("required in {} mode", b.mode)))?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(invalid(format!("bounds.{key}"), format!("must be finite and nonnegative, got {v}")));
        }
        Ok(v)
    };
    let mut bound_exprs = Vec::new();
    let bounds = match b.mode {
        BoundMode::BoundedLipschitz => {
            if b.phi.is_some() || b.psi.is_some() || b.c1.is_some() || b.c2.is_some() {
                return Err(invalid("bounds", "phi, psi, c1, c2 belong to integrable mode"));
            }
            PerturbationBounds::BoundedLipschitz {
                mu: required(b.mu, "mu")?,
                gamma: required(b.gamma, "gamma")?,
            }
        }
        BoundMode::Integrable => {
            if b.mu.is_some() || b.gamma.is_some() {
                return Err(invalid("bounds", "mu and gamma belong to bounded_lipschitz mode"));
            }
            let mut function = |key: &str, text: &Option<String>| -> Result<Arc<Expr>, ScenarioError> {
                let location = format!("bounds.{key}");
                let text = text
                    .as_ref()
                    .ok_or_else(|| invalid(location.clone(), "required in integrable mode"))?;
                let e = parse_field(source, &location, text, Some(n))?;
                if e.depends_on_state() {
                    return Err(invalid(location, "must depend on t only"));
                }
                bound_exprs.push((location, e.clone()));
                Ok(Arc::new(e))
            };
            let phi = function("phi", &b.phi)?;
            let psi = function("psi", &b.psi)?;
            let c1 = required(b.c1, "c1")?;
            let c2 = required(b.c2, "c2")?;
            PerturbationBounds::Integrable {
                phi: Arc::new(move |t| phi.eval(t, &[]).unwrap_or(f64::NAN)),
                psi: Arc::new(move |t| psi.eval(t, &[]).unwrap_or(f64::NAN)),
                c1,
                c2,
            }
        }
    };
    let probed: Vec<(String, &Expr)> = a_exprs
        .iter()
        .chain(&f_exprs)
        .chain(&bound_exprs)
        .map(|(k, e)| (k.clone(), e))
        .collect();
    probe_expressions(&probed, n)?;

    let pr = &config.projections;
    let pair = ProjectionPair::new(matrix(&pr.p, n, "projections.p")?, matrix(&pr.q, n, "projections.q")?)
        .map_err(|e| invalid("projections", e.to_string()))?;
    if let Some(blocks) = pr.blocks {
        if blocks.iter().sum::<usize>() != n {
            return Err(invalid("projections.blocks", format!("block sizes must sum to {n}")));
        }
    }
    if b.mode == BoundMode::Integrable && pr.blocks.is_none() {
        return Err(invalid("projections.blocks", "required in integrable mode"));
    }

    let num = &config.numerics;
    if !(num.window.0 <= num.base && num.base <= num.window.1 && num.window.0 < num.window.1) {
        return Err(invalid("numerics.window", "must be nonempty and contain numerics.base"));
    }
    for (value, key) in [
        (num.transition_tol, "numerics.transition_tol"),
        (num.fp_tol, "numerics.fp_tol"),
        (num.tail_tol, "numerics.tail_tol"),
        (num.step, "numerics.step"),
        (num.orbit_tol, "numerics.orbit_tol"),
        (num.audit_step, "numerics.audit_step"),
        (num.audit_tol, "numerics.audit_tol"),
        (num.kappa_guard, "numerics.kappa_guard"),
    ] {
        positive(value, key)?;
    }
    if let Some(s) = num.half_width {
        positive(s, "numerics.half_width")?;
    }
    if num.max_sweeps == 0 {
        return Err(invalid("numerics.max_sweeps", "must be at least 1"));
    }
    num.certification.to_grid("numerics.certification")?;
    validate_checks(&config, n)?;

    if let Some(grid) = &config.grid {
        if grid.states.iter().any(|s| s.len() != n) {
            return Err(invalid("grid.states", format!("every state must have {n} components")));
        }
    }

    let a_compiled: Arc<Vec<Expr>> = Arc::new(a_exprs.into_iter().map(|(_, e)| e).collect());
    let f_compiled: Arc<Vec<Expr>> = Arc::new(f_exprs.into_iter().map(|(_, e)| e).collect());
    let linear: LinearPart = Arc::new(move |t| {
        DMatrix::from_fn(n, n, |i, j| a_compiled[i * n + j].eval(t, &[]).unwrap_or(f64::NAN))
    });
    let nonlinear: Perturbation = Arc::new(move |t, x: &DVector<f64>| {
        DVector::from_fn(n, |i, _| f_compiled[i].eval(t, x.as_slice()).unwrap_or(f64::NAN))
    });
    let mut system = SystemSpec::new(n, linear, nonlinear, bounds).map_err(|e| invalid("system", e.to_string()))?;
    if let Some(period) = sys.period {
        system = system.with_period(period).map_err(|e| invalid("system.period", e.to_string()))?;
    }
    let name = config
        .name
        .clone()
        .or_else(|| config.builtin.clone())
        .or(fallback_name)
        .unwrap_or_else(|| "scenario".into());
    Ok(Scenario {
        name,
        config,
        system,
        pair,
    })
}

fn validate_checks(config: &ScenarioConfig, n: usize) -> Result<(), ScenarioError> {
    let checks = &config.checks;
    let has_period = |p: Option<f64>, key: &str| -> Result<(), ScenarioError> {
        match p.or(config.system.period) {
            Some(v) => positive(v, key),
            None => Err(invalid(key, "no period given and the system declares none")),
        }
    };
    if let Some(c) = &checks.conjugacy {
        if c.samples == 0 {
            return Err(invalid("checks.conjugacy.samples", "must be at least 1"));
        }
    }
    if let Some(g) = &checks.glue {
        if g.samples == 0 {
            return Err(invalid("checks.glue.samples", "must be at least 1"));
        }
        if config.bounds.mode != BoundMode::BoundedLipschitz {
            return Err(invalid("checks.glue", "the glue check needs bounded_lipschitz bounds"));
        }
    }
    if let Some(h) = &checks.holder {
        if !(h.q > 0.0 && h.q < 1.0) {
            return Err(invalid("checks.holder.q", "must lie in (0, 1)"));
        }
        if let Some(p) = h.p {
            positive(p, "checks.holder.p")?;
        }
        if h.premise_t_samples.is_empty() {
            return Err(invalid("checks.holder.premise_t_samples", "must not be empty"));
        }
        if let Some(d) = h.directions.iter().find(|d| !matches!(d.as_str(), "h" | "l")) {
            return Err(invalid("checks.holder.directions", format!("unknown direction `{d}` (use h or l)")));
        }
    }
    if let Some(f) = &checks.flow_periodicity {
        has_period(f.period, "checks.flow_periodicity.period")?;
        positive(f.tol, "checks.flow_periodicity.tol")?;
        if f.samples == 0 {
            return Err(invalid("checks.flow_periodicity.samples", "must be at least 1"));
        }
    }
    if let Some(k) = &checks.kernel_periodicity {
        has_period(k.period, "checks.kernel_periodicity.period")?;
        k.grid.to_grid("checks.kernel_periodicity.grid")?;
    }
    if let Some(np) = &checks.nonperiodicity {
        has_period(np.period, "checks.nonperiodicity.period")?;
        positive(np.floor, "checks.nonperiodicity.floor")?;
        if np.t_samples.is_empty() || np.states.is_empty() {
            return Err(invalid("checks.nonperiodicity", "t_samples and states must not be empty"));
        }
        if np.states.iter().any(|s| s.len() != n) {
            return Err(invalid("checks.nonperiodicity.states", format!("every state must have {n} components")));
        }
    }
    Ok(())
}
