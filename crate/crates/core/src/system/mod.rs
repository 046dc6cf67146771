//! Control-affine models `x' = f(x) + G(x) u` with hard input bounds.

mod acc;
mod aircraft;
mod double_integrator;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::numdiff;

pub use acc::AdaptiveCruise;
pub use aircraft::{angle_of_attack, trim_solve, AircraftParams, LongitudinalAircraft, Trim};
pub use double_integrator::{cartesian_to_polar, polar_to_cartesian, DoubleIntegratorPolar};

/// A state or input channel name with its unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Label {
    pub name: String,
    pub unit: String,
}

impl Label {
    pub fn new(name: &str, unit: &str) -> Self {
        Self { name: name.to_string(), unit: unit.to_string() }
    }
}

/// Admissible input set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputBounds {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    NormBall { radius: f64, dim: usize },
}

impl InputBounds {
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let bounds = InputBounds::Box { lower, upper };
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn norm_ball(radius: f64, dim: usize) -> Result<Self> {
        let bounds = InputBounds::NormBall { radius, dim };
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InputBounds::Box { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(Error::Invalid("box bounds have mismatched lengths".into()));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(Error::Invalid(format!("box bounds need lower <= upper: {lower:?} / {upper:?}")));
                }
            }
            InputBounds::NormBall { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(Error::Invalid(format!("norm-ball radius must be positive, got {radius}")));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            InputBounds::Box { lower, .. } => lower.len(),
            InputBounds::NormBall { dim, .. } => *dim,
        }
    }

    /// Smallest axis-aligned box containing the admissible set.
    pub fn bounding_box(&self) -> (DVector<f64>, DVector<f64>) {
        match self {
            InputBounds::Box { lower, upper } => (DVector::from_column_slice(lower), DVector::from_column_slice(upper)),
            InputBounds::NormBall { radius, dim } => {
                (DVector::from_element(*dim, -radius), DVector::from_element(*dim, *radius))
            }
        }
    }

    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        match self {
            InputBounds::Box { lower, upper } => {
                u.iter().zip(lower.iter().zip(upper)).all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
            }
            InputBounds::NormBall { radius, .. } => u.norm() <= radius + tol,
        }
    }

    /// Nearest admissible input (componentwise clamp or radial projection).
    pub fn clamp(&self, u: &DVector<f64>) -> DVector<f64> {
        match self {
            InputBounds::Box { lower, upper } => DVector::from_iterator(
                u.len(),
                u.iter().zip(lower.iter().zip(upper)).map(|(v, (l, h))| v.clamp(*l, *h)),
            ),
            InputBounds::NormBall { radius, .. } => {
                let norm = u.norm();
                if norm > *radius {
                    u * (*radius / norm)
                } else {
                    u.clone()
                }
            }
        }
    }

    /// True when some channel (or the ball radius) is within `tol` of its limit.
    pub fn saturated(&self, u: &DVector<f64>, tol: f64) -> bool {
        match self {
            InputBounds::Box { lower, upper } => {
                u.iter().zip(lower.iter().zip(upper)).any(|(v, (l, h))| (v - l).abs() <= tol || (h - v).abs() <= tol)
            }
            InputBounds::NormBall { radius, .. } => u.norm() >= radius - tol,
        }
    }
}

/// The control-affine model of a plant.
///
/// Implementations must be pure: evaluation may happen from several
/// threads and repeatedly at the same state.
pub trait AffineSystem: Send + Sync {
    fn state_dim(&self) -> usize;

    fn input_dim(&self) -> usize;

    /// Drift `f(x)` and input map `G(x)` evaluated together, since most
    /// models share intermediate quantities between the two.
    fn drift_and_input_map(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>;

    fn bounds(&self) -> &InputBounds;

    fn state_labels(&self) -> Vec<Label>;

    fn input_labels(&self) -> Vec<Label>;

    fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.drift_and_input_map(x)?.0)
    }

    fn input_map(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.drift_and_input_map(x)?.1)
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let (f, g) = self.drift_and_input_map(x)?;
        let xdot = f + g * u;
        check_finite(xdot.as_slice(), "system dynamics")?;
        Ok(xdot)
    }
}

/// `x' = A x + B u`; mostly useful for tests and as a reference model.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub bounds: InputBounds,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, bounds: InputBounds) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.nrows() || b.ncols() != bounds.dim() {
            return Err(Error::Invalid(format!(
                "linear system shapes disagree: A {}x{}, B {}x{}, bounds dim {}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                bounds.dim()
            )));
        }
        Ok(Self { a, b, bounds })
    }
}

impl AffineSystem for LinearSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn drift_and_input_map(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((&self.a * x, self.b.clone()))
    }

    fn bounds(&self) -> &InputBounds {
        &self.bounds
    }

    fn state_labels(&self) -> Vec<Label> {
        (0..self.state_dim()).map(|i| Label::new(&format!("x{i}"), "-")).collect()
    }

    fn input_labels(&self) -> Vec<Label> {
        (0..self.input_dim()).map(|i| Label::new(&format!("u{i}"), "-")).collect()
    }
}

/// Linearization about `(x0, u0)`.
///
/// `A` is the central-difference Jacobian of `f(x) + G(x) u0` (which is
/// `df/dx` whenever `u0 = 0` or `G` is constant); `B = G(x0)` exactly.
pub fn linearize(
    system: &dyn AffineSystem,
    x0: &DVector<f64>,
    u0: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let a = numdiff::jacobian(|x| system.dynamics(x, u0), x0)?;
    let b = system.input_map(x0)?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linearize_recovers_linear_model() {
        let a0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -3.0, -0.5]);
        let b0 = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        let sys =
            LinearSystem::new(a0.clone(), b0.clone(), InputBounds::new_box(vec![-1.0], vec![1.0]).unwrap()).unwrap();
        let x0 = DVector::from_column_slice(&[0.7, -1.2]);
        let (a, b) = linearize(&sys, &x0, &DVector::from_column_slice(&[0.3])).unwrap();
        assert!((a - a0).abs().max() < 1e-6);
        assert_eq!(b, b0);
    }

    #[test]
    fn box_bounds_reject_inverted_limits() {
        assert!(InputBounds::new_box(vec![1.0], vec![0.0]).is_err());
        assert!(InputBounds::norm_ball(0.0, 2).is_err());
    }

    #[test]
    fn clamp_projects_onto_ball() {
        let ball = InputBounds::norm_ball(1.0, 2).unwrap();
        let u = ball.clamp(&DVector::from_column_slice(&[3.0, 4.0]));
        assert!((u.norm() - 1.0).abs() < 1e-15);
        assert!((u[0] - 0.6).abs() < 1e-15);
        assert!(ball.saturated(&u, 1e-12));
    }
}
