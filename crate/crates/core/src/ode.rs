//! Fixed-step integration and event-terminated propagation.
//!
//! Everything here is a pure function of its arguments. Time stamps are
//! computed as `t0 + k * dt` rather than accumulated, so traces keep a
//! uniform grid regardless of length.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::error::{check_finite, Error, Result};

/// Time-indexed record of a simulated trajectory.
///
/// `inputs` holds one vector per time stamp (zero-length when the
/// trajectory was produced without an explicit input). Annotation channels
/// are padded with zeros when a channel first appears part-way through.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub annotations: BTreeMap<String, Vec<f64>>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: f64, state: DVector<f64>, input: DVector<f64>) {
        self.times.push(t);
        self.states.push(state);
        self.inputs.push(input);
    }

    /// Sets `name` on the most recently pushed row.
    pub fn annotate(&mut self, name: &str, value: f64) {
        let len = self.times.len();
        assert!(len > 0, "annotate called on an empty trace");
        let channel = self.annotations.entry(name.to_string()).or_default();
        channel.resize(len, 0.0);
        channel[len - 1] = value;
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.times.last().copied()
    }

    /// Annotation value at row `i`; missing channels and rows read as zero.
    pub fn value(&self, name: &str, i: usize) -> f64 {
        self.annotations.get(name).and_then(|c| c.get(i)).copied().unwrap_or(0.0)
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.annotations.get(name).map(Vec::as_slice)
    }
}

/// One classical fourth-order Runge-Kutta step of `x' = derivative(t, x)`.
pub fn rk4_step<F>(derivative: F, x: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if !(dt > 0.0) {
        return Err(Error::Invalid(format!("integration step must be positive, got {dt}")));
    }
    let half = 0.5 * dt;
    let k1 = derivative(t, x)?;
    check_finite(k1.as_slice(), "rk4 stage 1")?;
    let k2 = derivative(t + half, &(x + &k1 * half))?;
    check_finite(k2.as_slice(), "rk4 stage 2")?;
    let k3 = derivative(t + half, &(x + &k2 * half))?;
    check_finite(k3.as_slice(), "rk4 stage 3")?;
    let k4 = derivative(t + dt, &(x + &k3 * dt))?;
    check_finite(k4.as_slice(), "rk4 stage 4")?;

    let next = x + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
    check_finite(next.as_slice(), "rk4 update")?;
    Ok(next)
}

/// Final point of an event-terminated propagation.
#[derive(Debug, Clone)]
pub struct StopPoint {
    /// Number of completed integration steps.
    pub steps: usize,
    pub time: f64,
    pub state: DVector<f64>,
}

/// Integrates from `x0` at `t = 0`, calling `visit(step, t, x)` on every
/// grid point (including the initial one) until it returns `true`.
///
/// This is the allocation-light core behind [`propagate_until`]; callers
/// that only need the stop point or a running sum use it directly.
pub fn propagate_with<F, V>(derivative: F, x0: &DVector<f64>, dt: f64, t_max: f64, mut visit: V) -> Result<StopPoint>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
    V: FnMut(usize, f64, &DVector<f64>) -> Result<bool>,
{
    if !(dt > 0.0) || !(t_max > 0.0) {
        return Err(Error::Invalid(format!("propagation needs dt > 0 and t_max > 0 (got dt = {dt}, t_max = {t_max})")));
    }
    let mut x = x0.clone();
    let mut step = 0usize;
    let mut t = 0.0;
    loop {
        if visit(step, t, &x)? {
            return Ok(StopPoint { steps: step, time: t, state: x });
        }
        if t >= t_max {
            return Err(Error::HorizonExceeded { t_max });
        }
        x = rk4_step(&derivative, &x, t, dt)?;
        step += 1;
        t = step as f64 * dt;
    }
}

/// Integrates until `stop(t, x)` holds, recording every grid point.
///
/// The returned trace ends at the first grid point where `stop` is true;
/// the event is resolved at step granularity. Fails with
/// [`Error::HorizonExceeded`] if `t_max` is reached first.
pub fn propagate_until<F, S>(derivative: F, x0: &DVector<f64>, mut stop: S, dt: f64, t_max: f64) -> Result<Trace>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
    S: FnMut(f64, &DVector<f64>) -> bool,
{
    let mut trace = Trace::new();
    let empty = DVector::zeros(0);
    propagate_with(derivative, x0, dt, t_max, |_, t, x| {
        trace.push(t, x.clone(), empty.clone());
        Ok(stop(t, x))
    })?;
    Ok(trace)
}
