//! Scenario runner, brute-force oracle and metrics for the simulated
//! publish/subscribe network.

pub mod metrics;
pub mod oracle;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod sweep;

pub use metrics::MetricsReport;
pub use runner::{run_scenario, Run, RunOutput};
pub use scenario::{Scenario, ScenarioError, ScenarioKind, Script, Variant};
pub use sweep::{replication_sweep, Check, SweepConfig};
