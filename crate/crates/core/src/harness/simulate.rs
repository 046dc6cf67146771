//! The closed-loop driver and run metrics.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use crate::error::Result;
use crate::ode::{rk4_step, Trace};
use crate::qpfilter::{filter_step, FilterMode, QpStatus};

/// Margins below `-VIOLATION_TOL` (natural units) count as violations.
pub const VIOLATION_TOL: f64 = 1e-3;

/// Summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub mode: FilterMode,
    pub steps: usize,
    /// Minimum of each barrier's `h` over the run.
    pub min_h: Vec<f64>,
    /// Minimum over time and barriers of the raw safety margin.
    pub min_margin: f64,
    pub violated: bool,
    /// First time the filter changed the nominal input.
    pub first_activation_time: Option<f64>,
    /// Rows whose applied input touches the input bounds.
    pub saturation_steps: usize,
    pub qp_infeasible_steps: usize,
    /// Rows where the double-integrator recovery push was in charge.
    pub recovery_steps: usize,
}

/// Column names of the per-row annotations, in output order.
pub fn annotation_names(m: usize, barriers: usize, input_names: &[String]) -> Vec<String> {
    let mut names: Vec<String> = input_names.iter().take(m).map(|n| format!("u_nom_{n}")).collect();
    names.extend((0..barriers).map(|i| format!("h_{i}")));
    names.extend((0..barriers).map(|i| format!("hP_{i}")));
    names.extend(["delta_h", "active", "filter_on", "qp_status"].map(String::from));
    names
}

/// Simulates the scenario with a zero-order hold on the filtered input.
///
/// Row `k` holds the state at `t = k * dt_sim` and the input applied over
/// the following step; the last row's input is computed but never applied.
pub fn run_scenario(scenario: &Scenario) -> Result<(Trace, Metrics)> {
    let system = scenario.system();
    let barriers = &scenario.barriers;
    let input_names: Vec<String> = system.input_labels().into_iter().map(|l| l.name).collect();
    let mut controller = scenario.controller.clone();
    let steps = (scenario.duration / scenario.dt_sim).round() as usize;

    let mut trace = Trace::new();
    let mut metrics = Metrics {
        scenario: scenario.name.clone(),
        mode: scenario.filter.mode,
        steps,
        min_h: vec![f64::INFINITY; barriers.len()],
        min_margin: f64::INFINITY,
        violated: false,
        first_activation_time: None,
        saturation_steps: 0,
        qp_infeasible_steps: 0,
        recovery_steps: 0,
    };

    let mut x = scenario.x0.clone();
    for k in 0..=steps {
        let t = k as f64 * scenario.dt_sim;
        let u_nom = scenario.nominal(&controller, &x, t);
        let out = filter_step(system, barriers, &scenario.filter, &x, &u_nom)?;
        let d = &out.diagnostics;

        trace.push(t, x.clone(), out.input.clone());
        for (name, value) in input_names.iter().zip(u_nom.iter()) {
            trace.annotate(&format!("u_nom_{name}"), *value);
        }
        for (i, entry) in barriers.iter().enumerate() {
            trace.annotate(&format!("h_{i}"), d.h[i]);
            trace.annotate(&format!("hP_{i}"), d.h_p[i]);
            metrics.min_h[i] = metrics.min_h[i].min(d.h[i]);
            metrics.min_margin = metrics.min_margin.min(entry.barrier.margin(&x)?);
        }
        trace.annotate("delta_h", d.delta_h);
        trace.annotate("active", d.active.map_or(-1.0, |i| i as f64));
        trace.annotate("filter_on", if d.filter_on { 1.0 } else { 0.0 });
        trace.annotate("qp_status", d.status.code() as f64);

        if d.filter_on && scenario.filter.mode != FilterMode::None && metrics.first_activation_time.is_none() {
            metrics.first_activation_time = Some(t);
        }
        if system.bounds().saturated(&out.input, 1e-9) {
            metrics.saturation_steps += 1;
        }
        if d.status == QpStatus::Infeasible {
            metrics.qp_infeasible_steps += 1;
        }
        if controller.recovering(&x) {
            metrics.recovery_steps += 1;
        }

        if k == steps {
            break;
        }
        controller.advance(&x, scenario.dt_sim);
        let u = out.input;
        x = rk4_step(|_, y: &DVector<f64>| system.dynamics(y, &u), &x, t, scenario.dt_sim)?;
    }
    if barriers.is_empty() {
        metrics.min_margin = f64::INFINITY;
    }
    metrics.violated = metrics.min_margin < -VIOLATION_TOL;
    Ok((trace, metrics))
}
