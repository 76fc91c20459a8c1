//! Scenario runner: an expression language for right-hand sides, scenario
//! files with built-in examples, and the certify → construct → verify
//! pipeline with JSON reports and CSV grids.

pub mod expr;
pub mod runner;
pub mod scenario;

pub use expr::{parse_expression, Expr, ParseError};
pub use runner::{run_scenario, Command, ExitStatus, RunOptions, RunReport};
pub use scenario::{builtin_scenario, load_scenario, Scenario, ScenarioConfig, ScenarioError};
