use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use linearize_cli::runner::{run_scenario, scenario_failure, write_atomic, Command, RunOptions};
use linearize_cli::scenario::{builtin_scenario, load_scenario};

#[derive(Parser)]
#[command(name = "linearize", version, about = "Certify trichotomies and verify conjugacies of non-autonomous ODEs")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Fit and check the trichotomy constants.
    Certify(Shared),
    /// Build the evaluator and tabulate H and L on the scenario grid.
    Conjugate(Shared),
    /// Build the evaluator and run the requested checks.
    Verify(Shared),
    /// Checks and grid.
    Run(Shared),
}

#[derive(Args)]
struct Shared {
    /// Scenario file.
    #[arg(long, value_name = "PATH", required_unless_present = "builtin", conflicts_with = "builtin")]
    scenario: Option<PathBuf>,
    /// Built-in scenario instead of a file.
    #[arg(long, value_name = "NAME")]
    builtin: Option<String>,
    /// Override a scenario key, e.g. parameters.delta=0.05 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for every sampled check.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Leave the timestamp out of the report.
    #[arg(long)]
    no_timestamp: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::Certify(a) => (Command::Certify, a),
        Sub::Conjugate(a) => (Command::Conjugate, a),
        Sub::Verify(a) => (Command::Verify, a),
        Sub::Run(a) => (Command::Run, a),
    };
    let loaded = match (&args.scenario, &args.builtin) {
        (Some(path), _) => load_scenario(path, &args.overrides),
        (None, Some(name)) => builtin_scenario(name, &args.overrides),
        (None, None) => unreachable!("clap requires one of --scenario, --builtin"),
    };
    let scenario = match loaded {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error [scenario]: {e}");
            let name = args
                .scenario
                .as_ref()
                .and_then(|p| p.file_stem())
                .map(|s| s.to_string_lossy().into_owned())
                .or(args.builtin.clone())
                .unwrap_or_default();
            let report = scenario_failure(&name, command, !args.no_timestamp, &e);
            if let Some(dir) = &args.out {
                let path = dir.join("report.json");
                if let Err(io) = write_atomic(&path, report.to_json().as_bytes()) {
                    eprintln!("error [output]: {}: {io}", path.display());
                }
            }
            return ExitCode::from(report.exit_code);
        }
    };

    let options = RunOptions {
        command,
        out_dir: args.out,
        seed: args.seed,
        timestamp: !args.no_timestamp,
    };
    let outcome = run_scenario(&scenario, &options);
    for check in &outcome.report.checks {
        println!(
            "{} {} measured {:e} threshold {:e}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.measured,
            check.threshold
        );
    }
    if let Some(err) = &outcome.report.error {
        eprintln!("error [{}]: {}", err.stage, err.message);
    }
    println!("report: {}", outcome.report_path.display());
    ExitCode::from(outcome.status.code())
}
