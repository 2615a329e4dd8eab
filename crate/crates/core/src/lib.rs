//! Discrete-event simulator for an energy-harvesting sensor node whose power
//! management is orchestrated in hardware: a PMIC mode machine, a wake latch
//! fed by touch and RTC triggers, a storage element with an OCV curve, and a
//! scripted activity burst on the switched rail.

pub mod compare;
pub mod energy;
pub mod engine;
pub mod latch;
pub mod oracle;
pub mod pmic;
pub mod quantities;
pub mod report;
pub mod scenario;
pub mod sweep;

pub use compare::{compare_dpm, CompareError, ComparisonReport};
pub use engine::{run, EngineError, Simulation};
pub use oracle::{run_oracle, OracleRun};
pub use report::{emit_report, Report, ReportFormat};
pub use scenario::{emit_scenario, parse_scenario, ParsedScenario, Scenario, ScenarioError};
pub use sweep::{sweep_lux, SweepError, SweepResult};
