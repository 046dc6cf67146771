//! Nominal controllers and the elevator doublet.

use std::f64::consts::PI;

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::system::{polar_to_cartesian, InputBounds, Trim};

/// PD gains for the double-integrator reference tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingGains {
    pub kp: f64,
    pub kd: f64,
    /// Radius below which the recovery push replaces the tracking command.
    #[serde(default = "default_radius")]
    pub radius: f64,
}

fn default_radius() -> f64 {
    1.0
}

/// Reference path `[sin(pi t / 5), pi t / 10]` with its first two derivatives.
pub fn di_reference(t: f64) -> (Vector2<f64>, Vector2<f64>, Vector2<f64>) {
    let w = PI / 5.0;
    (
        Vector2::new((w * t).sin(), PI * t / 10.0),
        Vector2::new(w * (w * t).cos(), PI / 10.0),
        Vector2::new(-w * w * (w * t).sin(), 0.0),
    )
}

/// Cartesian PD tracking with acceleration feedforward, expressed in the
/// polar input channels `[u_r, u_theta]` and scaled into the ball of
/// radius `u_max`. Inside the unsafe circle the command is replaced by a
/// full outward push.
pub fn tracking_controller_di(x: &DVector<f64>, t: f64, gains: &TrackingGains, u_max: f64) -> DVector<f64> {
    if x[0] < gains.radius {
        return DVector::from_column_slice(&[u_max, 0.0]);
    }
    let (pos, vel) = polar_to_cartesian(x);
    let (r_ref, v_ref, a_ref) = di_reference(t);
    let accel = a_ref + (r_ref - pos) * gains.kp + (v_ref - vel) * gains.kd;
    let (s, c) = x[1].sin_cos();
    let u = DVector::from_column_slice(&[accel[0] * c + accel[1] * s, -accel[0] * s + accel[1] * c]);
    let norm = u.norm();
    if norm > u_max {
        u * (u_max / norm)
    } else {
        u
    }
}

/// Gains of the stability augmentation system and auto-throttle. Elevator
/// gains act on radians; throttle gains map airspeed error (m/s) to percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SasGains {
    pub k_p_alpha: f64,
    pub k_d_theta: f64,
    pub k_p_theta: f64,
    pub k_i_theta: f64,
    pub k_p_u: f64,
    pub k_i_u: f64,
    pub k_d_u: f64,
    /// Pole of the first-order filter on the airspeed derivative (rad/s).
    #[serde(default = "default_pole")]
    pub derivative_pole: f64,
}

fn default_pole() -> f64 {
    50.0
}

/// PID SAS + auto-throttle around a trim point, with integrator and
/// derivative-filter state.
#[derive(Debug, Clone)]
pub struct PidSas {
    pub gains: SasGains,
    trim: Trim,
    lower: DVector<f64>,
    upper: DVector<f64>,
    int_theta: f64,
    int_u: f64,
    /// Low-pass state of the airspeed error; the derivative estimate is
    /// `pole * (e - lag)`.
    lag: f64,
}

impl PidSas {
    pub fn new(gains: SasGains, trim: Trim, bounds: &InputBounds) -> Self {
        let (lower, upper) = bounds.bounding_box();
        Self { gains, trim, lower, upper, int_theta: 0.0, int_u: 0.0, lag: 0.0 }
    }

    fn errors(&self, x: &DVector<f64>) -> (f64, f64, f64) {
        let x0 = &self.trim.state;
        ((x[1] - x0[1]) / x0[0], x[3] - x0[3], x[0] - x0[0])
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        let g = &self.gains;
        let (w_err, theta_err, u_err) = self.errors(x);
        let elevator =
            g.k_p_alpha * w_err + g.k_d_theta * x[2] + g.k_p_theta * theta_err + g.k_i_theta * self.int_theta;
        let rate = g.derivative_pole * (u_err - self.lag);
        let throttle = g.k_p_u * u_err + g.k_i_u * self.int_u + g.k_d_u * rate;
        &self.trim.input + DVector::from_column_slice(&[elevator, throttle])
    }

    /// Advances integrators and the derivative filter by `dt`. An
    /// integrator is frozen while its channel sits at a bound and the error
    /// would push it further out.
    pub fn advance(&mut self, x: &DVector<f64>, dt: f64) {
        let out = self.output(x);
        let (_, theta_err, u_err) = self.errors(x);
        let winding = |channel: usize, push: f64| {
            (out[channel] >= self.upper[channel] && push > 0.0) || (out[channel] <= self.lower[channel] && push < 0.0)
        };
        if !winding(0, self.gains.k_i_theta * theta_err) {
            self.int_theta += theta_err * dt;
        }
        if !winding(1, self.gains.k_i_u * u_err) {
            self.int_u += u_err * dt;
        }
        self.lag += (1.0 - (-self.gains.derivative_pole * dt).exp()) * (u_err - self.lag);
    }
}

/// Two rectangular pulses on one input channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubletSpec {
    #[serde(default)]
    pub channel: usize,
    pub amplitude1: f64,
    pub amplitude2: f64,
    pub width: f64,
    pub start1: f64,
    pub start2: f64,
}

impl DoubletSpec {
    /// The flight-test doublet: +10 deg on [0, 5] s then -20 deg on [5, 10] s
    /// (amplitudes in the channel's own units, radians here).
    pub fn elevator_default() -> Self {
        Self {
            channel: 0,
            amplitude1: 10f64.to_radians(),
            amplitude2: -20f64.to_radians(),
            width: 5.0,
            start1: 0.0,
            start2: 5.0,
        }
    }
}

fn pulse(t: f64, start: f64, width: f64) -> f64 {
    if t >= start && t <= start + width {
        1.0
    } else {
        0.0
    }
}

/// Sum of the two closed pulses on `spec.channel`; at a shared endpoint both
/// contribute.
pub fn doublet(t: f64, spec: &DoubletSpec, m: usize) -> DVector<f64> {
    let mut u = DVector::zeros(m);
    u[spec.channel] =
        spec.amplitude1 * pulse(t, spec.start1, spec.width) + spec.amplitude2 * pulse(t, spec.start2, spec.width);
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::cartesian_to_polar;

    #[test]
    fn doublet_samples() {
        let spec = DoubletSpec::elevator_default();
        let deg = |t: f64| doublet(t, &spec, 2)[0].to_degrees();
        assert!((deg(2.5) - 10.0).abs() < 1e-12);
        assert!((deg(7.5) + 20.0).abs() < 1e-12);
        assert!((deg(5.0) + 10.0).abs() < 1e-12);
        assert_eq!(doublet(12.0, &spec, 2), DVector::zeros(2));
        assert_eq!(doublet(2.5, &spec, 2)[1], 0.0);
    }

    #[test]
    fn on_reference_tracking_is_feedforward() {
        let t = 1.3;
        let (r, v, a) = di_reference(t);
        let x = cartesian_to_polar(r, v);
        let gains = TrackingGains { kp: 4.0, kd: 3.0, radius: 0.1 };
        let u = tracking_controller_di(&x, t, &gains, 100.0);
        let (s, c) = x[1].sin_cos();
        assert!((u[0] - (a[0] * c + a[1] * s)).abs() < 1e-12);
        assert!((u[1] - (-a[0] * s + a[1] * c)).abs() < 1e-12);
    }

    #[test]
    fn radial_error_has_no_tangential_feedback() {
        let t = 0.0;
        let (r, v, a) = di_reference(t);
        // The reference starts at the origin, so use a point on the x axis
        // with matched velocity: the position error is radial.
        let pos = r + Vector2::new(2.0, 0.0);
        let x = cartesian_to_polar(pos, v);
        let gains = TrackingGains { kp: 4.0, kd: 3.0, radius: 1.0 };
        let u = tracking_controller_di(&x, t, &gains, 100.0);
        let (s, c) = x[1].sin_cos();
        assert!((u[1] - (-a[0] * s + a[1] * c)).abs() < 1e-12);
        assert!(u[0] < 0.0);
    }

    #[test]
    fn inside_circle_pushes_outward() {
        let gains = TrackingGains { kp: 4.0, kd: 3.0, radius: 1.0 };
        let x = DVector::from_column_slice(&[0.8, 1.0, -0.5, 0.2]);
        assert!(tracking_controller_di(&x, 3.0, &gains, 1.0)[0] > 0.0);
    }
}
