//! Discrete-event simulation harness.

pub mod gen;
pub mod report;
pub mod run;
pub mod scenario;

pub use gen::{generate_random_scenario, GenParams};
pub use report::{emit_report, parse_report, ReportFormat, RunReport, TopicReport};
pub use run::{run, run_async, RunMode, SimError};
pub use scenario::{load_scenario, parse_scenario, Event, EventKind, Scenario, ScenarioError};
