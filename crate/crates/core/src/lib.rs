//! Prediction-based control barrier functions.
//!
//! A barrier `h` is augmented with a stopping margin `delta_h`: the total
//! change of `h` accumulated while a near time-optimal policy `u0` drives
//! the barrier rate `h_dot` from negative back to zero. The augmented
//! barrier `h + delta_h` keeps the per-step QP safety filter feasible under
//! hard input limits, since `u0` itself always satisfies the filter row.
//!
//! Modules, bottom-up:
//! - [`ode`]: fixed-step RK4 and event-terminated propagation
//! - [`system`]: control-affine models and linearization
//! - [`barrier`]: barrier functions, `h_dot`, the `h_ddot` quadratic form
//! - [`predictor`]: prediction policies and the stopping margin
//! - [`qpfilter`]: the small exact QP and the per-step safety filter
//! - [`harness`]: scenarios, nominal controllers, simulation and output

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod error;
pub mod harness;
pub mod numdiff;
pub mod ode;
pub mod predictor;
pub mod qpfilter;
pub mod system;

pub use error::{Error, Result};

/// State vectors are plain dense column vectors; units are per model.
pub type StateVector = nalgebra::DVector<f64>;
/// Input vectors, same representation as states.
pub type InputVector = nalgebra::DVector<f64>;
