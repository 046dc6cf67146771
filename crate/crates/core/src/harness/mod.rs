//! Scenarios, nominal controllers, the simulation loop and its outputs.

pub mod controllers;
pub mod output;
pub mod scenario;
pub mod simulate;
pub mod slice;

pub use controllers::{di_reference, doublet, tracking_controller_di, DoubletSpec, PidSas, SasGains, TrackingGains};
pub use output::{trace_header, trace_to_csv, write_metrics_json, write_trace_csv};
pub use scenario::{Controller, Plant, Scenario, ScenarioFile};
pub use simulate::{run_scenario, Metrics, VIOLATION_TOL};
pub use slice::{linspace, safe_set_slice, SliceCell, SliceSpec};
