//! Barrier functions and their time derivatives along the dynamics.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numdiff;
use crate::predictor::PredictionPolicy;
use crate::system::AffineSystem;

/// A continuously differentiable scalar field whose super-level set is the
/// safe set.
///
/// `gradient` and `hessian` default to central differences; built-in
/// barriers override them analytically.
pub trait Barrier: Send + Sync {
    fn name(&self) -> &str;

    fn value(&self, x: &DVector<f64>) -> Result<f64>;

    /// `c(x) = dh/dx`.
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        numdiff::gradient(|y| self.value(y), x)
    }

    /// `dc/dx`.
    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        numdiff::jacobian(|y| self.gradient(y), x)
    }

    /// The raw safety quantity in natural units (distance past a wall,
    /// angle past a limit). Defaults to `h` itself.
    fn margin(&self, x: &DVector<f64>) -> Result<f64> {
        self.value(x)
    }
}

impl fmt::Debug for dyn Barrier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Barrier({})", self.name())
    }
}

/// Keep-out circle for the polar double integrator with a backstepping
/// velocity term: `h = r - R - v_r^2 / (2 mu)`.
#[derive(Debug, Clone)]
pub struct RadialBarrier {
    pub radius: f64,
    pub mu: f64,
}

impl Barrier for RadialBarrier {
    fn name(&self) -> &str {
        "radial"
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(x[0] - self.radius - x[2] * x[2] / (2.0 * self.mu))
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_column_slice(&[1.0, 0.0, -x[2] / self.mu, 0.0]))
    }

    fn hessian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut h = DMatrix::zeros(4, 4);
        h[(2, 2)] = -1.0 / self.mu;
        Ok(h)
    }

    fn margin(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(x[0] - self.radius)
    }
}

/// Which side of an angle-of-attack limit a barrier guards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitSide {
    Upper,
    Lower,
}

/// `alpha_max - alpha` or `alpha - alpha_min` on the longitudinal aircraft
/// state `[U, W, Q, theta]`, with `alpha = atan2(W, U)`. Limits in radians.
#[derive(Debug, Clone)]
pub struct AngleOfAttackBarrier {
    pub limit: f64,
    pub side: LimitSide,
    name: String,
}

impl AngleOfAttackBarrier {
    pub fn upper(alpha_max: f64) -> Self {
        Self { limit: alpha_max, side: LimitSide::Upper, name: "alpha_max".into() }
    }

    pub fn lower(alpha_min: f64) -> Self {
        Self { limit: alpha_min, side: LimitSide::Lower, name: "alpha_min".into() }
    }

    fn sign(&self) -> f64 {
        match self.side {
            LimitSide::Upper => -1.0,
            LimitSide::Lower => 1.0,
        }
    }
}

impl Barrier for AngleOfAttackBarrier {
    fn name(&self) -> &str {
        &self.name
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let alpha = x[1].atan2(x[0]);
        Ok(self.sign() * (alpha - self.limit))
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (u, w) = (x[0], x[1]);
        let v2 = u * u + w * w;
        if v2 == 0.0 {
            return Err(Error::Domain("angle of attack undefined at zero airspeed".into()));
        }
        let s = self.sign();
        Ok(DVector::from_column_slice(&[-s * w / v2, s * u / v2, 0.0, 0.0]))
    }

    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (u, w) = (x[0], x[1]);
        let v2 = u * u + w * w;
        let v4 = v2 * v2;
        let s = self.sign();
        let mut h = DMatrix::zeros(4, 4);
        h[(0, 0)] = s * 2.0 * u * w / v4;
        h[(0, 1)] = s * (w * w - u * u) / v4;
        h[(1, 0)] = h[(0, 1)];
        h[(1, 1)] = -s * 2.0 * u * w / v4;
        Ok(h)
    }
}

/// Headway barrier for adaptive cruise control, `h = z - z_min - headway * v`
/// on the state `[v, z]`. With `headway = 0` this is a constant-gap barrier.
#[derive(Debug, Clone)]
pub struct GapBarrier {
    pub z_min: f64,
    pub headway: f64,
}

impl Barrier for GapBarrier {
    fn name(&self) -> &str {
        "gap"
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(x[1] - self.z_min - self.headway * x[0])
    }

    fn gradient(&self, _x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_column_slice(&[-self.headway, 1.0]))
    }

    fn hessian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(2, 2))
    }

    fn margin(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(x[1] - self.z_min)
    }
}

type ScalarField = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;
type VectorField = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// Barrier from closures; the gradient falls back to finite differences
/// when not supplied.
#[derive(Clone)]
pub struct FnBarrier {
    name: String,
    h: Arc<ScalarField>,
    c: Option<Arc<VectorField>>,
}

impl FnBarrier {
    pub fn new(name: &str, h: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.to_string(), h: Arc::new(h), c: None }
    }

    pub fn with_gradient(mut self, c: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.c = Some(Arc::new(c));
        self
    }
}

impl Barrier for FnBarrier {
    fn name(&self) -> &str {
        &self.name
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok((self.h)(x))
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.c {
            Some(c) => Ok(c(x)),
            None => numdiff::gradient(|y| self.value(y), x),
        }
    }
}

/// Extended class-K-infinity gain applied to the barrier value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassKappa {
    /// `alpha(z) = gamma * z`.
    Linear { gamma: f64 },
}

impl ClassKappa {
    pub fn linear(gamma: f64) -> Result<Self> {
        let k = ClassKappa::Linear { gamma };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ClassKappa::Linear { gamma } if *gamma > 0.0 && gamma.is_finite() => Ok(()),
            ClassKappa::Linear { gamma } => Err(Error::Invalid(format!("class-K gain must be positive, got {gamma}"))),
        }
    }

    pub fn eval(&self, z: f64) -> f64 {
        match self {
            ClassKappa::Linear { gamma } => gamma * z,
        }
    }
}

/// `h_ddot(x, u) = u^T Q u + q^T u + r0` for a fixed state, under the
/// affine dynamics with `u` held constant.
#[derive(Debug, Clone, PartialEq)]
pub struct HddotQuadraticForm {
    pub quad: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

impl HddotQuadraticForm {
    pub fn eval(&self, u: &DVector<f64>) -> f64 {
        (u.transpose() * &self.quad * u)[0] + self.linear.dot(u) + self.constant
    }

    /// `(Q + Q^T) / 2`; the quadratic form only sees the symmetric part.
    pub fn symmetric_quad(&self) -> DMatrix<f64> {
        (&self.quad + self.quad.transpose()) * 0.5
    }
}

/// `h_dot(x, u) = c(x)^T (f(x) + G(x) u)`.
pub fn h_dot(barrier: &dyn Barrier, system: &dyn AffineSystem, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    let c = barrier.gradient(x)?;
    Ok(c.dot(&system.dynamics(x, u)?))
}

/// Builds the `h_ddot` quadratic form at `x`.
///
/// With `H = dc/dx`, `J = df/dx` and `D_G[v] = sum_k (dG/dx_k) v_k`:
///
/// ```text
/// Q  = G^T H^T G + M,   u^T M u = c^T D_G[G u] u
/// q  = f^T (H^T + H) G + c^T J G + c^T D_G[f]
/// r0 = f^T H^T f + c^T J f
/// ```
///
/// `J` and `dG/dx_k` come from central differences.
pub fn h_ddot_form(barrier: &dyn Barrier, system: &dyn AffineSystem, x: &DVector<f64>) -> Result<HddotQuadraticForm> {
    let (f, g) = system.drift_and_input_map(x)?;
    let c = barrier.gradient(x)?;
    let hess = barrier.hessian(x)?;
    let jac_f = numdiff::jacobian(|y| system.drift(y), x)?;
    let dg = numdiff::matrix_partials(|y| system.input_map(y), x)?;
    let m = g.ncols();

    // c^T dG/dx_k, one row vector (length m) per state component k.
    let c_dg: Vec<DVector<f64>> = dg.iter().map(|d| d.transpose() * &c).collect();

    let mut mixed = DMatrix::zeros(m, m);
    for (k, row) in c_dg.iter().enumerate() {
        // u^T M u = sum_k (c^T dG/dx_k u) (G u)_k
        mixed += g.row(k).transpose() * row.transpose();
    }
    let quad = g.transpose() * hess.transpose() * &g + mixed;

    let mut dg_f = DVector::zeros(m);
    for (k, row) in c_dg.iter().enumerate() {
        dg_f += row * f[k];
    }
    let linear = (f.transpose() * (hess.transpose() + &hess) * &g).transpose()
        + (c.transpose() * &jac_f * &g).transpose()
        + dg_f;
    let constant = (f.transpose() * hess.transpose() * &f)[0] + (c.transpose() * &jac_f * &f)[0];
    crate::error::check_finite(quad.as_slice(), "h_ddot quadratic term")?;
    crate::error::check_finite(linear.as_slice(), "h_ddot linear term")?;
    Ok(HddotQuadraticForm { quad, linear, constant })
}

const ANTIPARALLEL_TOL: f64 = 1e-9;
const ZERO_GRADIENT: f64 = 1e-12;

/// True iff the unit gradients of `b1` and `b2` are antiparallel (within
/// 1e-9) at every sample state.
pub fn check_opposed_pair(b1: &dyn Barrier, b2: &dyn Barrier, samples: &[DVector<f64>]) -> Result<bool> {
    if samples.is_empty() {
        return Err(Error::Invalid("opposed-pair check needs at least one sample".into()));
    }
    for x in samples {
        let c1 = b1.gradient(x)?;
        let c2 = b2.gradient(x)?;
        let (n1, n2) = (c1.norm(), c2.norm());
        if n1 < ZERO_GRADIENT || n2 < ZERO_GRADIENT {
            return Err(Error::ZeroGradient(format!("{} / {} at {:?}", b1.name(), b2.name(), x.as_slice())));
        }
        if (c1 / n1 + c2 / n2).norm() > ANTIPARALLEL_TOL {
            return Ok(false);
        }
    }
    Ok(true)
}

/// A barrier together with the policy used to predict its stopping margin.
#[derive(Clone)]
pub struct GuardedBarrier {
    pub barrier: Arc<dyn Barrier>,
    pub policy: PredictionPolicy,
}

impl fmt::Debug for GuardedBarrier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GuardedBarrier").field("barrier", &self.barrier.name()).field("policy", &self.policy).finish()
    }
}

/// Per-barrier rates under each barrier's own prediction policy.
#[derive(Debug, Clone)]
pub struct Activity {
    pub active: Option<usize>,
    /// `h_dot(x, u0_i(x))` for every barrier.
    pub rates: Vec<f64>,
    /// `u0_i(x)` for every barrier.
    pub policy_inputs: Vec<DVector<f64>>,
}

/// Evaluates every barrier's rate under its own policy and picks the one
/// that is decreasing. A rate of exactly zero counts as inactive.
///
/// `nominal` is forwarded to the policies (it supplies the neutral value of
/// channels a policy does not drive).
pub fn assess_activity(
    barriers: &[GuardedBarrier],
    system: &dyn AffineSystem,
    x: &DVector<f64>,
    nominal: Option<&DVector<f64>>,
) -> Result<Activity> {
    let mut rates = Vec::with_capacity(barriers.len());
    let mut policy_inputs = Vec::with_capacity(barriers.len());
    for entry in barriers {
        let u0 = entry.policy.input(system, entry.barrier.as_ref(), x, nominal)?;
        rates.push(h_dot(entry.barrier.as_ref(), system, x, &u0)?);
        policy_inputs.push(u0);
    }
    let negative: Vec<usize> = rates.iter().enumerate().filter(|(_, r)| **r < 0.0).map(|(i, _)| i).collect();
    let active = match negative.as_slice() {
        [] => None,
        [i] => Some(*i),
        _ => return Err(Error::MultipleActive(negative)),
    };
    Ok(Activity { active, rates, policy_inputs })
}

/// Index of the barrier whose rate under its own policy is negative.
pub fn select_active(
    barriers: &[GuardedBarrier],
    system: &dyn AffineSystem,
    x: &DVector<f64>,
) -> Result<Option<usize>> {
    Ok(assess_activity(barriers, system, x, None)?.active)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{DoubleIntegratorPolar, InputBounds, LinearSystem};

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn radial_rate_matches_closed_form() {
        let sys = DoubleIntegratorPolar::new(1.0).unwrap();
        let b = RadialBarrier { radius: 1.0, mu: 1.5 };
        let rate = h_dot(&b, &sys, &dv(&[2.0, 0.0, -1.0, 0.0]), &dv(&[0.0, 0.0])).unwrap();
        assert!((rate + 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_flow_has_zero_rate() {
        let sys = DoubleIntegratorPolar::new(1.0).unwrap();
        let b = RadialBarrier { radius: 1.0, mu: 1.5 };
        // Pure rotation at constant radius with the centripetal term cancelled.
        let x = dv(&[2.0, 0.3, 0.0, 0.5]);
        assert_eq!(h_dot(&b, &sys, &x, &dv(&[-0.5, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn constant_gap_rate_ignores_input() {
        let sys = crate::system::AdaptiveCruise::new(1500.0, 20.0, 3.0, vec![]).unwrap();
        let b = GapBarrier { z_min: 5.0, headway: 0.0 };
        let x = dv(&[27.0, 40.0]);
        for force in [-4500.0, 0.0, 4500.0] {
            assert_eq!(h_dot(&b, &sys, &x, &dv(&[force])).unwrap(), -7.0);
        }
    }

    #[test]
    fn zero_dynamics_give_zero_form() {
        let sys = LinearSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            InputBounds::new_box(vec![-1.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        let b = FnBarrier::new("quad", |x| x[0] * x[0] + x[1]);
        let form = h_ddot_form(&b, &sys, &dv(&[0.4, -0.1])).unwrap();
        assert!(form.quad.abs().max() < 1e-9 && form.linear.abs().max() < 1e-9 && form.constant.abs() < 1e-9);
    }

    #[test]
    fn linear_barrier_on_lti_has_no_quadratic_term() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.3]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let sys =
            LinearSystem::new(a.clone(), b.clone(), InputBounds::new_box(vec![-1.0], vec![1.0]).unwrap()).unwrap();
        let c = dv(&[1.0, 0.5]);
        let cc = c.clone();
        let barrier = FnBarrier::new("lin", move |x| cc.dot(x));
        let x = dv(&[0.2, -0.7]);
        let form = h_ddot_form(&barrier, &sys, &x).unwrap();
        assert!(form.quad.abs().max() < 1e-9);
        let expected_q = (c.transpose() * &a * &b)[0];
        assert!((form.linear[0] - expected_q).abs() < 1e-6);
        let expected_r0 = (c.transpose() * &a * &a * &x)[0];
        assert!((form.constant - expected_r0).abs() < 1e-6);
    }

    #[test]
    fn radial_hddot_under_outward_push() {
        let sys = DoubleIntegratorPolar::new(1.0).unwrap();
        let (mu, u_max) = (1.5, 1.0);
        let b = RadialBarrier { radius: 1.0, mu };
        let x = dv(&[2.0, 0.0, -0.8, 0.0]);
        let form = h_ddot_form(&b, &sys, &x).unwrap();
        let value = form.eval(&dv(&[u_max, 0.0]));
        let expected = u_max * (mu - u_max) / mu;
        assert!((value - expected).abs() < 1e-6, "{value} vs {expected}");
        assert!(value > 0.0);
    }

    #[test]
    fn aoa_pair_is_opposed() {
        let hi = AngleOfAttackBarrier::upper(15f64.to_radians());
        let lo = AngleOfAttackBarrier::lower(-10f64.to_radians());
        let samples = vec![dv(&[85.0, 15.0, 0.0, 0.1]), dv(&[60.0, -3.0, 0.2, -0.1])];
        assert!(check_opposed_pair(&hi, &lo, &samples).unwrap());
        assert!(!check_opposed_pair(&hi, &hi, &samples).unwrap());
    }

    #[test]
    fn scaled_negation_is_opposed() {
        let b1 = FnBarrier::new("b1", |x| x[0] - 2.0 * x[1]);
        let b2 = FnBarrier::new("b2", |x| -3.0 * (x[0] - 2.0 * x[1]) + 7.0);
        let samples = vec![dv(&[0.0, 0.0]), dv(&[1.0, -4.0])];
        assert!(check_opposed_pair(&b1, &b2, &samples).unwrap());
    }

    #[test]
    fn flat_barrier_reports_zero_gradient() {
        let b1 = FnBarrier::new("flat", |_| 1.0).with_gradient(|_| DVector::zeros(2));
        let b2 = FnBarrier::new("b2", |x| x[0]);
        assert!(matches!(check_opposed_pair(&b1, &b2, &[dv(&[0.0, 0.0])]), Err(Error::ZeroGradient(_))));
    }

    #[test]
    fn linear_kappa_is_odd_and_increasing() {
        let k = ClassKappa::linear(2.5).unwrap();
        assert_eq!(k.eval(0.0), 0.0);
        let grid: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.5).collect();
        for w in grid.windows(2) {
            assert!(k.eval(w[1]) > k.eval(w[0]));
        }
        for z in grid {
            assert_eq!(k.eval(-z), -k.eval(z));
        }
        assert!(ClassKappa::linear(0.0).is_err());
    }
}
