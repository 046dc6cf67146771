use nalgebra::{DMatrix, DVector};

use super::{AffineSystem, InputBounds, Label};
use crate::error::{Error, Result};

/// Single-lane adaptive cruise control: state `[v, z]` (own speed and gap
/// to a lead vehicle moving at `v_front`), input the wheel force `F_w`.
#[derive(Debug, Clone)]
pub struct AdaptiveCruise {
    pub mass: f64,
    pub v_front: f64,
    pub a_max: f64,
    /// Rolling resistance `F_r(v) = sum_k coeffs[k] * v^k`; empty means zero.
    pub resistance: Vec<f64>,
    bounds: InputBounds,
}

impl AdaptiveCruise {
    pub fn new(mass: f64, v_front: f64, a_max: f64, resistance: Vec<f64>) -> Result<Self> {
        if !(mass > 0.0) || !(a_max > 0.0) {
            return Err(Error::Invalid(format!("ACC needs m > 0 and a_max > 0 (got {mass}, {a_max})")));
        }
        let f_max = mass * a_max;
        let bounds = InputBounds::new_box(vec![-f_max], vec![f_max])?;
        Ok(Self { mass, v_front, a_max, resistance, bounds })
    }

    pub fn rolling_resistance(&self, v: f64) -> f64 {
        self.resistance.iter().rev().fold(0.0, |acc, c| acc * v + c)
    }
}

impl AffineSystem for AdaptiveCruise {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn drift_and_input_map(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let v = x[0];
        let f = DVector::from_column_slice(&[-self.rolling_resistance(v) / self.mass, self.v_front - v]);
        let g = DMatrix::from_column_slice(2, 1, &[1.0 / self.mass, 0.0]);
        Ok((f, g))
    }

    fn bounds(&self) -> &InputBounds {
        &self.bounds
    }

    fn state_labels(&self) -> Vec<Label> {
        vec![Label::new("v", "m/s"), Label::new("z", "m")]
    }

    fn input_labels(&self) -> Vec<Label> {
        vec![Label::new("F_w", "N")]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_force_at_matched_speed() {
        let sys = AdaptiveCruise::new(1650.0, 20.0, 3.0, vec![50.0, 2.0]).unwrap();
        let x = DVector::from_column_slice(&[20.0, 40.0]);
        let u = DVector::from_column_slice(&[sys.rolling_resistance(20.0)]);
        let xdot = sys.dynamics(&x, &u).unwrap();
        assert!(xdot.norm() < 1e-12);
    }

    #[test]
    fn full_brake_gives_a_max() {
        let sys = AdaptiveCruise::new(1650.0, 20.0, 3.0, vec![]).unwrap();
        let (lower, _) = sys.bounds().bounding_box();
        let xdot = sys.dynamics(&DVector::from_column_slice(&[25.0, 10.0]), &lower).unwrap();
        assert!((xdot[0] + 3.0).abs() < 1e-12);
    }

    #[test]
    fn gap_rate() {
        let sys = AdaptiveCruise::new(1000.0, 20.0, 3.0, vec![]).unwrap();
        let xdot = sys.dynamics(&DVector::from_column_slice(&[30.0, 10.0]), &DVector::zeros(1)).unwrap();
        assert_eq!(xdot[1], -10.0);
    }
}
