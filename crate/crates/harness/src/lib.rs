//! Deterministic scenario runner, adversarial fault injection and an
//! exhaustive model checker for the agent identity fabric.

pub mod adversary;
pub mod modelcheck;
pub mod report;
pub mod scenario;
pub mod world;

pub use report::{compare_reports, CompareError, RunRecord, RunReport, REPORT_SCHEMA};
pub use scenario::{run_scenario, Attack, Scenario, ScenarioName};
pub use world::{SetupError, TransportKind, World};
