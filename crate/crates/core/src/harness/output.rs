//! CSV traces and JSON metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::simulate::{annotation_names, Metrics};
use crate::error::{Error, Result};
use crate::ode::Trace;
use crate::system::AffineSystem;

const INTEGER_COLUMNS: [&str; 3] = ["active", "filter_on", "qp_status"];

/// Header fields for a trace of `system` with `barriers` barriers.
pub fn trace_header(system: &dyn AffineSystem, barriers: usize) -> Vec<String> {
    let inputs: Vec<String> = system.input_labels().into_iter().map(|l| l.name).collect();
    let mut header = vec!["t".to_string()];
    header.extend(system.state_labels().into_iter().map(|l| l.name));
    header.extend(inputs.iter().cloned());
    header.extend(annotation_names(inputs.len(), barriers, &inputs));
    header
}

/// Renders the trace as CSV text. Floats use 17 significant digits;
/// annotation channels that were never written come out as zeros.
pub fn trace_to_csv(trace: &Trace, system: &dyn AffineSystem, barriers: usize) -> String {
    let header = trace_header(system, barriers);
    let n = system.state_dim();
    let m = system.input_dim();
    let annotations = &header[1 + n + m..];
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..trace.len() {
        let _ = write!(out, "{:.16e}", trace.times[i]);
        for v in trace.states[i].iter().chain(trace.inputs[i].iter()) {
            let _ = write!(out, ",{v:.16e}");
        }
        for name in annotations {
            let v = trace.value(name, i);
            if INTEGER_COLUMNS.contains(&name.as_str()) {
                let _ = write!(out, ",{}", v as i64);
            } else {
                let _ = write!(out, ",{v:.16e}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_trace_csv(trace: &Trace, system: &dyn AffineSystem, barriers: usize, path: &Path) -> Result<()> {
    write_text(path, &trace_to_csv(trace, system, barriers))
}

pub fn write_metrics_json(metrics: &Metrics, path: &Path) -> Result<()> {
    let text =
        serde_json::to_string_pretty(metrics).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    write_text(path, &(text + "\n"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::DoubleIntegratorPolar;
    use nalgebra::DVector;

    #[test]
    fn header_and_unwritten_annotations() {
        let sys = DoubleIntegratorPolar::new(1.0).unwrap();
        let header = trace_header(&sys, 1);
        assert_eq!(
            header.join(","),
            "t,r,theta,v_r,omega,u_r,u_theta,u_nom_u_r,u_nom_u_theta,h_0,hP_0,delta_h,active,filter_on,qp_status"
        );
        let mut trace = Trace::new();
        trace.push(0.0, DVector::from_column_slice(&[1.0, 0.0, 0.0, 0.0]), DVector::zeros(2));
        trace.annotate("h_0", 0.25);
        let csv = trace_to_csv(&trace, &sys, 1);
        let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row.len(), header.len());
        assert_eq!(row[9], "2.5000000000000000e-1");
        assert_eq!(row[10], "0.0000000000000000e0");
        assert_eq!(&row[12..], ["0", "0", "0"]);
    }
}
