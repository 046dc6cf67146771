use nalgebra::{DMatrix, DVector, Vector2};

use super::{AffineSystem, InputBounds, Label};
use crate::error::{Error, Result};

/// Planar double integrator written in polar coordinates.
///
/// State `[r, theta, v_r, omega]`, input `[u_r, u_theta]` (radial and
/// tangential acceleration), bounded by `||u||_2 <= u_max`.
#[derive(Debug, Clone)]
pub struct DoubleIntegratorPolar {
    bounds: InputBounds,
    /// Dynamics evaluation fails below this radius (1/r singularity).
    pub r_floor: f64,
}

impl DoubleIntegratorPolar {
    pub fn new(u_max: f64) -> Result<Self> {
        Ok(Self { bounds: InputBounds::norm_ball(u_max, 2)?, r_floor: 1e-6 })
    }

    pub fn with_r_floor(mut self, r_floor: f64) -> Self {
        self.r_floor = r_floor;
        self
    }

    pub fn u_max(&self) -> f64 {
        match self.bounds {
            InputBounds::NormBall { radius, .. } => radius,
            InputBounds::Box { .. } => unreachable!("double integrator always uses a norm ball"),
        }
    }
}

impl AffineSystem for DoubleIntegratorPolar {
    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn drift_and_input_map(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (r, v_r, omega) = (x[0], x[2], x[3]);
        if !(r > self.r_floor) {
            return Err(Error::Domain(format!("radius {r} at or below r_floor {}", self.r_floor)));
        }
        let f = DVector::from_column_slice(&[v_r, omega, r * omega * omega, -2.0 * v_r * omega / r]);
        let mut g = DMatrix::zeros(4, 2);
        g[(2, 0)] = 1.0;
        g[(3, 1)] = 1.0 / r;
        Ok((f, g))
    }

    fn bounds(&self) -> &InputBounds {
        &self.bounds
    }

    fn state_labels(&self) -> Vec<Label> {
        vec![Label::new("r", "m"), Label::new("theta", "rad"), Label::new("v_r", "m/s"), Label::new("omega", "rad/s")]
    }

    fn input_labels(&self) -> Vec<Label> {
        vec![Label::new("u_r", "m/s^2"), Label::new("u_theta", "m/s^2")]
    }
}

/// Polar state from Cartesian position and velocity.
pub fn cartesian_to_polar(position: Vector2<f64>, velocity: Vector2<f64>) -> DVector<f64> {
    let r = position.norm();
    let theta = position.y.atan2(position.x);
    let v_r = position.dot(&velocity) / r;
    let omega = (position.x * velocity.y - position.y * velocity.x) / (r * r);
    DVector::from_column_slice(&[r, theta, v_r, omega])
}

/// Cartesian `(position, velocity)` from a polar state.
pub fn polar_to_cartesian(x: &DVector<f64>) -> (Vector2<f64>, Vector2<f64>) {
    let (r, theta, v_r, omega) = (x[0], x[1], x[2], x[3]);
    let (s, c) = theta.sin_cos();
    let radial = Vector2::new(c, s);
    let tangential = Vector2::new(-s, c);
    (radial * r, radial * v_r + tangential * (r * omega))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(x: &[f64]) -> DVector<f64> {
        let sys = DoubleIntegratorPolar::new(1.0).unwrap();
        sys.dynamics(&DVector::from_column_slice(x), &DVector::zeros(2)).unwrap()
    }

    #[test]
    fn rest_state_is_equilibrium() {
        assert_eq!(eval(&[2.0, 0.0, 0.0, 0.0]), DVector::zeros(4));
    }

    #[test]
    fn centripetal_term() {
        let xdot = eval(&[2.0, 0.0, 0.0, 1.0]);
        assert_eq!(xdot[2], 2.0);
        assert_eq!(xdot[3], 0.0);
    }

    #[test]
    fn coriolis_term() {
        let xdot = eval(&[2.0, 0.0, 1.0, 1.0]);
        assert_eq!(xdot[3], -1.0);
    }

    #[test]
    fn origin_is_outside_domain() {
        let sys = DoubleIntegratorPolar::new(1.0).unwrap();
        let err = sys.drift(&DVector::from_column_slice(&[0.0, 0.0, 1.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn input_map_reads_off_equations() {
        let sys = DoubleIntegratorPolar::new(1.0).unwrap();
        let g = sys.input_map(&DVector::from_column_slice(&[2.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(g.row(2).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
        assert_eq!(g.row(3).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.5]);
    }

    #[test]
    fn coordinate_round_trip() {
        let p = Vector2::new(-2.0, 1.0);
        let v = Vector2::new(1.0, 0.25);
        let (p2, v2) = polar_to_cartesian(&cartesian_to_polar(p, v));
        assert!((p - p2).norm() < 1e-14 && (v - v2).norm() < 1e-14);
    }
}
