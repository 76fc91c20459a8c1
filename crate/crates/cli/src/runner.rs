//! Pipeline execution: certify, build the evaluator, run the requested checks,
//! write the report and grids.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use linearize_core::conjugacy::{
    build_evaluator, glue_check_zero, ConjugacyError, ConjugacyEvaluator, EvaluatorConfig, EvaluatorSummary,
};
use linearize_core::dynamics::{
    fundamental_matrix, separation_envelope, DynamicsError, EnvelopeKind, TransitionOperator,
};
use linearize_core::report::CheckReport;
use linearize_core::trichotomy::{
    certify_trichotomy, check_projection_algebra, estimate_kappas, kernel_periodicity_check, SplitProjections,
    TrichotomyCertificate, TrichotomyError,
};
use linearize_core::verify::{
    check_conjugacy, check_flow_periodicity, check_holder_premise, check_nonperiodicity, fit_holder,
    sample_points, ConjugacyCheckConfig, HolderConfig, MapDirection, NonperiodicityConfig, VerifyError,
};
use nalgebra::DVector;
use serde::Serialize;

use crate::scenario::{Scenario, ScenarioConfig, ScenarioError};

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Pass,
    CheckFailure,
    Configuration,
    Numerical,
}

impl ExitStatus {
    pub fn code(self) -> u8 {
        match self {
            ExitStatus::Pass => 0,
            ExitStatus::CheckFailure => 1,
            ExitStatus::Configuration => 2,
            ExitStatus::Numerical => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Scenario,
    Certify,
    Build,
    Verify,
    Output,
    Complete,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Scenario => "scenario",
            Stage::Certify => "certify",
            Stage::Build => "build",
            Stage::Verify => "verify",
            Stage::Output => "output",
            Stage::Complete => "complete",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Certification only.
    Certify,
    /// Certification, evaluator and the CSV grid.
    Conjugate,
    /// Certification, evaluator and the requested checks.
    Verify,
    /// Everything.
    Run,
}

impl Command {
    fn runs_checks(self) -> bool {
        matches!(self, Command::Verify | Command::Run)
    }

    fn writes_grid(self) -> bool {
        matches!(self, Command::Conjugate | Command::Run)
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub command: Command,
    /// Replaces `output.directory`.
    pub out_dir: Option<PathBuf>,
    /// Replaces every check seed.
    pub seed: Option<u64>,
    pub timestamp: bool,
}

impl RunOptions {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            out_dir: None,
            seed: None,
            timestamp: true,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StageError {
    pub stage: Stage,
    pub kind: ExitStatus,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub command: Command,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp_unix: Option<u64>,
    /// Stage reached; `complete` unless a stage failed.
    pub stage: Stage,
    pub passed: bool,
    pub exit_code: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<ScenarioConfig>,
    pub certificate: Option<TrichotomyCertificate>,
    pub evaluator: Option<EvaluatorSummary>,
    pub checks: Vec<CheckReport>,
    pub artifacts: Vec<String>,
    pub error: Option<StageError>,
}

impl RunReport {
    fn new(scenario: &str, command: Command, timestamp: bool) -> Self {
        Self {
            scenario: scenario.to_string(),
            command,
            timestamp_unix: timestamp.then(|| {
                SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs())
            }),
            stage: Stage::Scenario,
            passed: false,
            exit_code: ExitStatus::Configuration.code(),
            config: None,
            certificate: None,
            evaluator: None,
            checks: Vec::new(),
            artifacts: Vec::new(),
            error: None,
        }
    }

    fn fail(&mut self, stage: Stage, kind: ExitStatus, message: String) {
        self.stage = stage;
        self.passed = false;
        self.exit_code = kind.code();
        self.error = Some(StageError { stage, kind, message });
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }
}

/// Report of a scenario that failed to load.
pub fn scenario_failure(name: &str, command: Command, timestamp: bool, err: &ScenarioError) -> RunReport {
    let mut report = RunReport::new(name, command, timestamp);
    report.fail(Stage::Scenario, ExitStatus::Configuration, err.to_string());
    report
}

pub struct RunOutcome {
    pub report: RunReport,
    pub report_path: PathBuf,
    pub status: ExitStatus,
}

fn trichotomy_status(e: &TrichotomyError) -> ExitStatus {
    match e {
        TrichotomyError::NotTrichotomic { .. } | TrichotomyError::UnboundedBlock { .. } => ExitStatus::CheckFailure,
        TrichotomyError::Dynamics(d) => dynamics_status(d),
        _ => ExitStatus::Configuration,
    }
}

fn dynamics_status(e: &DynamicsError) -> ExitStatus {
    match e {
        DynamicsError::InvalidSystem(_) | DynamicsError::InvalidArgument(_) | DynamicsError::OutOfWindow { .. } => {
            ExitStatus::Configuration
        }
        _ => ExitStatus::Numerical,
    }
}

fn conjugacy_status(e: &ConjugacyError) -> ExitStatus {
    match e {
        ConjugacyError::PremiseViolated { .. } => ExitStatus::CheckFailure,
        ConjugacyError::NonConvergence { .. } => ExitStatus::Numerical,
        ConjugacyError::Dynamics(d) => dynamics_status(d),
        ConjugacyError::Trichotomy(t) => trichotomy_status(t),
        _ => ExitStatus::Configuration,
    }
}

fn verify_status(e: &VerifyError) -> ExitStatus {
    match e {
        VerifyError::DivergentPremise { .. } => ExitStatus::CheckFailure,
        VerifyError::MissingPeriod | VerifyError::InvalidSamples(_) => ExitStatus::Configuration,
        VerifyError::Conjugacy(c) => conjugacy_status(c),
        VerifyError::Dynamics(d) => dynamics_status(d),
        VerifyError::Trichotomy(t) => trichotomy_status(t),
    }
}

/// Stage failure with its exit status.
struct Failure(Stage, ExitStatus, String);

fn at<E: fmt::Display>(stage: Stage, status: impl Fn(&E) -> ExitStatus) -> impl Fn(E) -> Failure {
    move |e| Failure(stage, status(&e), e.to_string())
}

/// Output location of a file named in the scenario.
fn output_path(scenario: &Scenario, options: &RunOptions, file: &str) -> PathBuf {
    let file = Path::new(file);
    if file.is_absolute() {
        return file.to_path_buf();
    }
    let dir = options
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(&scenario.config.output.directory));
    dir.join(file)
}

/// Write `contents` next to `path` and rename it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}

/// Execute the pipeline for `options.command` and write the report.
pub fn run_scenario(scenario: &Scenario, options: &RunOptions) -> RunOutcome {
    let mut report = RunReport::new(&scenario.name, options.command, options.timestamp);
    report.config = Some(scenario.config.clone());
    let report_path = output_path(scenario, options, &scenario.config.output.report);
    if let Err(Failure(stage, kind, message)) = execute(scenario, options, &mut report) {
        report.fail(stage, kind, message);
    } else {
        report.stage = Stage::Complete;
        report.passed = report.checks.iter().all(|c| c.passed);
        let status = if report.passed { ExitStatus::Pass } else { ExitStatus::CheckFailure };
        report.exit_code = status.code();
    }
    if let Err(e) = write_atomic(&report_path, report.to_json().as_bytes()) {
        report.fail(Stage::Output, ExitStatus::Configuration, format!("{}: {e}", report_path.display()));
    }
    let status = match report.exit_code {
        0 => ExitStatus::Pass,
        1 => ExitStatus::CheckFailure,
        2 => ExitStatus::Configuration,
        _ => ExitStatus::Numerical,
    };
    RunOutcome {
        report,
        report_path,
        status,
    }
}

fn execute(scenario: &Scenario, options: &RunOptions, report: &mut RunReport) -> Result<(), Failure> {
    let config = &scenario.config;
    let num = &config.numerics;
    let seed_for = |own: Option<u64>| options.seed.or(own).unwrap_or(config.checks.seed);

    // Certification.
    report.stage = Stage::Certify;
    let probes: Vec<DVector<f64>> = std::iter::once(DVector::zeros(scenario.system.dimension()))
        .chain(
            sample_points(scenario.system.dimension(), 8, seed_for(None), (0.0, 0.0), (-2.0, 2.0))
                .into_iter()
                .map(|(_, x)| x),
        )
        .collect();
    let audit = scenario.system.audit_bounds(num.window, num.audit_step, &probes);
    let mut audit_details = format!(
        "sup excess {:e}, Lipschitz excess {:e}",
        audit.sup_excess, audit.lipschitz_excess
    );
    if let (Some(ip), Some(iq)) = (audit.integral_phi, audit.integral_psi) {
        audit_details.push_str(&format!("; integral of phi {ip:.12}, integral of psi {iq:.12} over the window"));
    }
    let worst_excess = audit.sup_excess.max(audit.lipschitz_excess).max(audit.integral_excess);
    report.checks.push(
        CheckReport::at_most("declared_bounds", worst_excess, num.audit_tol)
            .with_details(audit_details)
            .with_samples(audit.samples),
    );
    report
        .checks
        .push(check_projection_algebra(&scenario.pair).map_err(at(Stage::Certify, trichotomy_status))?);

    let op: Arc<TransitionOperator> = Arc::new(
        fundamental_matrix(&scenario.system, num.base, num.window, num.transition_tol)
            .map_err(at(Stage::Certify, dynamics_status))?,
    );
    let grid = num
        .certification
        .to_grid("numerics.certification")
        .map_err(|e| Failure(Stage::Scenario, ExitStatus::Configuration, e.to_string()))?;
    let certificate = certify_trichotomy(&op, &scenario.pair, &grid, num.alpha_seed)
        .map_err(at(Stage::Certify, trichotomy_status))?;
    let worst_residual = certificate.residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    report.checks.push(
        CheckReport::at_most("trichotomy_residuals", worst_residual, 0.0)
            .with_details(format!("beta {:.6}, alpha {:.6}", certificate.beta, certificate.alpha))
            .with_samples(grid.points().len().pow(2)),
    );
    report.certificate = Some(certificate.clone());

    let split = match config.projections.blocks {
        None => None,
        Some(blocks) => {
            let split = SplitProjections::from_blocks(blocks).map_err(at(Stage::Certify, trichotomy_status))?;
            let (k1, k2) = match (config.projections.kappa1, config.projections.kappa2) {
                (Some(k1), Some(k2)) => (k1, k2),
                (k1, k2) => {
                    let (e1, e2) = estimate_kappas(&op, &split, &grid, num.kappa_guard)
                        .map_err(at(Stage::Certify, trichotomy_status))?;
                    (k1.unwrap_or(e1), k2.unwrap_or(e2))
                }
            };
            Some(split.with_kappas(k1, k2))
        }
    };

    if options.command.runs_checks() {
        if let Some(k) = &config.checks.kernel_periodicity {
            let period = k.period.or(config.system.period).expect("validated period");
            let kgrid = k
                .grid
                .to_grid("checks.kernel_periodicity.grid")
                .map_err(|e| Failure(Stage::Scenario, ExitStatus::Configuration, e.to_string()))?;
            report.checks.push(
                kernel_periodicity_check(&op, &scenario.pair, split.as_ref(), period, &kgrid, k.threshold)
                    .map_err(at(Stage::Verify, trichotomy_status))?,
            );
        }
    }

    let needs_evaluator = options.command.writes_grid() && config.grid.is_some()
        || options.command.runs_checks() && config.checks.needs_evaluator()
        || options.command == Command::Conjugate;
    if options.command == Command::Certify || !needs_evaluator {
        return Ok(());
    }

    // Evaluator.
    report.stage = Stage::Build;
    let evaluator_config = EvaluatorConfig {
        fp_tol: num.fp_tol,
        max_sweeps: num.max_sweeps,
        tail_tol: num.tail_tol,
        step: num.step,
        half_width: num.half_width,
        orbit_tol: num.orbit_tol,
    };
    let ev = build_evaluator(&scenario.system, op, &certificate, split.as_ref(), evaluator_config)
        .map_err(at(Stage::Build, conjugacy_status))?;
    report.evaluator = Some(ev.summary());

    if options.command.runs_checks() {
        report.stage = Stage::Verify;
        run_checks(scenario, &ev, &seed_for, report)?;
    }

    if options.command.writes_grid() {
        if let Some(grid) = &config.grid {
            report.stage = Stage::Output;
            let path = output_path(scenario, options, &config.output.csv);
            let csv = grid_csv(&ev, &grid.times, &grid.states).map_err(at(Stage::Output, conjugacy_status))?;
            write_atomic(&path, csv.as_bytes())
                .map_err(|e| Failure(Stage::Output, ExitStatus::Configuration, format!("{}: {e}", path.display())))?;
            report.artifacts.push(path.display().to_string());
        }
    }
    Ok(())
}

fn run_checks(
    scenario: &Scenario,
    ev: &ConjugacyEvaluator,
    seed_for: &dyn Fn(Option<u64>) -> u64,
    report: &mut RunReport,
) -> Result<(), Failure> {
    let checks = &scenario.config.checks;
    let n = scenario.system.dimension();
    let verify = at(Stage::Verify, verify_status);

    if let Some(c) = &checks.conjugacy {
        let cfg = ConjugacyCheckConfig {
            samples: c.samples,
            transport_samples: c.transport_samples,
            seed: seed_for(c.seed),
            t_range: c.t_range,
            state_range: c.state_range,
            composition_tol: c.composition_tol,
            displacement_slack: c.displacement_slack,
            transport_tol: c.transport_tol,
            fd_step: c.fd_step,
        };
        report.checks.push(check_conjugacy(ev, &cfg).map_err(&verify)?);
    }

    if let Some(g) = &checks.glue {
        let etas: Vec<DVector<f64>> = sample_points(n, g.samples, seed_for(g.seed), (0.0, 0.0), g.state_range)
            .into_iter()
            .map(|(_, x)| x)
            .collect();
        report
            .checks
            .push(glue_check_zero(ev, &etas).map_err(at(Stage::Verify, conjugacy_status))?);
    }

    if let Some(h) = &checks.holder {
        let window = ev.operator().window();
        let envelopes = (
            separation_envelope(&scenario.system, EnvelopeKind::Linear, window).map_err(&verify_dyn)?,
            separation_envelope(&scenario.system, EnvelopeKind::Nonlinear, window).map_err(&verify_dyn)?,
        );
        match check_holder_premise(ev, h.q, h.p.unwrap_or(1.0), envelopes, &h.premise_t_samples) {
            Err(VerifyError::DivergentPremise { product, alpha }) => {
                report.checks.push(
                    CheckReport::at_most("holder_premise", product, alpha)
                        .with_details("q times the envelope rate is not below alpha; the premise integrals diverge"),
                );
            }
            Err(e) => return Err(verify(e)),
            Ok(first) => {
                // Without a declared p, the smallest admissible one (nudged up
                // so the premise holds despite rounding).
                let derived = h.p.is_none() && first.p_min.is_finite();
                let p = h.p.unwrap_or(if derived { first.p_min * (1.0 + 1e-9) } else { 1.0 });
                let premise = if derived {
                    check_holder_premise(ev, h.q, p, envelopes, &h.premise_t_samples).map_err(&verify)?
                } else {
                    first
                };
                report.checks.push(premise.report.clone());
                let fit_config = HolderConfig {
                    t_samples: h.t_samples.clone(),
                    separations: h.separations.clone(),
                    bases_per_time: h.bases_per_time,
                    state_range: h.state_range,
                    seed: seed_for(h.seed),
                    q: h.q,
                    p,
                };
                for d in &h.directions {
                    let direction = if d == "h" { MapDirection::H } else { MapDirection::L };
                    let fit = fit_holder(ev, direction, &fit_config).map_err(&verify)?;
                    report.checks.push(fit.report);
                }
            }
        }
    }

    if let Some(f) = &checks.flow_periodicity {
        let seed = seed_for(f.seed);
        let starts = sample_points(n, f.samples, seed, f.t_range, f.state_range);
        let spans = sample_points(0, f.samples, seed.wrapping_add(1), (-f.span, f.span), (0.0, 0.0));
        let samples: Vec<(f64, f64, DVector<f64>)> = starts
            .into_iter()
            .zip(spans)
            .map(|((s, x), (d, _))| (s, s + d, x))
            .collect();
        report
            .checks
            .push(check_flow_periodicity(&scenario.system, f.period, &samples, f.tol).map_err(&verify)?);
    }

    if let Some(np) = &checks.nonperiodicity {
        let cfg = NonperiodicityConfig {
            t_samples: np.t_samples.clone(),
            states: np.states.clone(),
            floor: np.floor,
            agreement_tol: np.agreement_tol,
        };
        let (check, _) = check_nonperiodicity(ev, np.period, &cfg).map_err(&verify)?;
        report.checks.push(check);
    }
    Ok(())
}

fn verify_dyn(e: DynamicsError) -> Failure {
    Failure(Stage::Verify, dynamics_status(&e), e.to_string())
}

/// 17 significant digits.
fn digits(v: f64) -> String {
    format!("{v:.16e}")
}

/// Rows `t, y…, H…, L…, sweeps, last_delta` for every `(t, state)` pair.
pub fn grid_csv(ev: &ConjugacyEvaluator, times: &[f64], states: &[Vec<f64>]) -> Result<String, ConjugacyError> {
    let n = ev.system().dimension();
    let points: Vec<(f64, DVector<f64>)> = times
        .iter()
        .flat_map(|&t| states.iter().map(move |s| (t, DVector::from_column_slice(s))))
        .collect();
    let rows = ev.evaluate_points(&points);
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    for prefix in ["y", "H", "L"] {
        header.extend((1..=n).map(|k| format!("{prefix}{k}")));
    }
    header.extend(["sweeps".to_string(), "last_delta".to_string()]);
    writer.write_record(&header).expect("in-memory write");
    for row in rows {
        let row = row?;
        let mut record = vec![digits(row.t)];
        record.extend(row.state.iter().chain(&row.h_image).chain(&row.l_image).map(|v| digits(*v)));
        record.push(row.sweeps.to_string());
        record.push(digits(row.last_delta));
        writer.write_record(&record).expect("in-memory write");
    }
    Ok(String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("ASCII output"))
}
