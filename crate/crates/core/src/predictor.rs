//! Stopping-margin prediction: policies `u0` and the margin `delta_h`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::{h_ddot_form, h_dot, Barrier, HddotQuadraticForm};
use crate::error::{Error, Result};
use crate::ode::rk4_step;
use crate::system::{linearize, AffineSystem, InputBounds};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_T_MAX: f64 = 60.0;

/// Which input sensitivity drives the bang-bang law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSource {
    /// `c^T B`, the sensitivity of `h_dot`.
    #[serde(rename = "cb")]
    Cb,
    /// `c^T A B`, the sensitivity of `h_ddot` for the linearized model.
    #[default]
    #[serde(rename = "cab")]
    Cab,
}

/// Value a channel takes when the policy does not drive it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeutralValue {
    /// Midpoint of the channel's bounds.
    #[default]
    Midpoint,
    /// The nominal input at filter time (its value when the prediction starts).
    Nominal,
    Value(f64),
}

/// Where `A` and `B` of the bang-bang law come from.
#[derive(Debug, Clone)]
pub enum Linearization {
    /// Relinearize at every evaluated state, about the neutral input.
    Current,
    /// Fixed `A B` and `B` computed once, e.g. at trim.
    Fixed { ab: DMatrix<f64>, b: DMatrix<f64> },
}

impl Linearization {
    pub fn at(system: &dyn AffineSystem, x0: &DVector<f64>, u0: &DVector<f64>) -> Result<Self> {
        let (a, b) = linearize(system, x0, u0)?;
        Ok(Linearization::Fixed { ab: a * &b, b })
    }
}

/// Per-channel bang-bang law driven by the sign of `c^T B` or `c^T A B`.
#[derive(Debug, Clone)]
pub struct BangBang {
    pub source: GradientSource,
    pub linearization: Linearization,
    /// One entry per input channel; a single entry applies to all.
    pub neutral: Vec<NeutralValue>,
    /// Channels always held at their neutral value.
    pub hold: Vec<bool>,
    /// `|g_i| <= zero_tol * max_j |g_j|` counts as a zero gradient.
    pub zero_tol: f64,
}

impl BangBang {
    pub fn new(source: GradientSource, linearization: Linearization) -> Self {
        Self { source, linearization, neutral: vec![NeutralValue::Midpoint], hold: Vec::new(), zero_tol: 0.0 }
    }

    fn neutral_input(&self, bounds: &InputBounds, nominal: Option<&DVector<f64>>) -> DVector<f64> {
        let (lower, upper) = bounds.bounding_box();
        DVector::from_fn(lower.len(), |i, _| {
            let rule = self.neutral.get(i).or(self.neutral.last()).copied().unwrap_or_default();
            match (rule, nominal) {
                (NeutralValue::Value(v), _) => v,
                (NeutralValue::Nominal, Some(u)) => u[i],
                _ => 0.5 * (lower[i] + upper[i]),
            }
        })
    }

    fn input(
        &self,
        system: &dyn AffineSystem,
        barrier: &dyn Barrier,
        x: &DVector<f64>,
        nominal: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        let neutral = self.neutral_input(system.bounds(), nominal);
        let c = barrier.gradient(x)?;
        let mut g = match (&self.linearization, self.source) {
            (Linearization::Fixed { b, .. }, GradientSource::Cb) => b.tr_mul(&c),
            (Linearization::Fixed { ab, .. }, GradientSource::Cab) => ab.tr_mul(&c),
            (Linearization::Current, GradientSource::Cb) => system.input_map(x)?.tr_mul(&c),
            (Linearization::Current, GradientSource::Cab) => {
                let (a, b) = linearize(system, x, &neutral)?;
                (a * b).tr_mul(&c)
            }
        };
        for (i, held) in self.hold.iter().enumerate() {
            if *held && i < g.len() {
                g[i] = 0.0;
            }
        }
        if self.zero_tol > 0.0 {
            let scale = g.amax();
            g.apply(|gi| {
                if gi.abs() <= self.zero_tol * scale {
                    *gi = 0.0
                }
            });
        }
        let (lower, upper) = system.bounds().bounding_box();
        Ok(bang_bang_from_gradient(&g, &lower, &upper, &neutral))
    }
}

fn bang_bang_from_gradient(
    g: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    neutral: &DVector<f64>,
) -> DVector<f64> {
    DVector::from_fn(g.len(), |i, _| {
        if g[i] > 0.0 {
            upper[i]
        } else if g[i] < 0.0 {
            lower[i]
        } else {
            neutral[i]
        }
    })
}

/// Bang-bang stopping law: channel `i` goes to its upper bound when
/// `g_i > 0`, its lower bound when `g_i < 0`, and `neutral_i` when
/// `g_i = 0`, with `g = B^T c` or `(A B)^T c`. Norm-ball bounds use their
/// bounding box.
pub fn bang_bang_u0(
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    bounds: &InputBounds,
    source: GradientSource,
    neutral: &DVector<f64>,
) -> DVector<f64> {
    let g = match source {
        GradientSource::Cb => b.tr_mul(c),
        GradientSource::Cab => (a * b).tr_mul(c),
    };
    let (lower, upper) = bounds.bounding_box();
    bang_bang_from_gradient(&g, &lower, &upper, neutral)
}

/// `u_max * B^T c / |B^T c|`, the maximizer of `c^T B u` over the ball.
pub fn normball_u0(c: &DVector<f64>, b: &DMatrix<f64>, u_max: f64) -> Result<DVector<f64>> {
    let g = b.tr_mul(c);
    let norm = g.norm();
    // The direction stays meaningful for tiny norms: near the end of a
    // prediction `B^T c` shrinks with the rate and must not stall it.
    if !(norm >= f64::MIN_POSITIVE) {
        return Err(Error::ZeroGradient(format!("|B^T c| = {norm:.3e}")));
    }
    Ok(g * (u_max / norm))
}

#[derive(Clone, Copy)]
enum Face {
    Upper,
    Lower,
    Free,
}

/// Maximizes `u^T Q u + q^T u` over the box `[lower, upper]` exactly by
/// enumerating all `3^m` face assignments (each channel at its upper
/// bound, lower bound, or free at a stationary point). Ties keep the
/// first candidate found, which favours upper bounds.
pub fn qp_maximal_u0(form: &HddotQuadraticForm, lower: &DVector<f64>, upper: &DVector<f64>) -> Result<DVector<f64>> {
    let m = form.linear.len();
    if m > 3 {
        return Err(Error::UnsupportedDimension(m));
    }
    let q_sym = form.symmetric_quad();
    let objective = |u: &DVector<f64>| (u.transpose() * &q_sym * u)[0] + form.linear.dot(u);
    let total = 3usize.pow(m as u32);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..total {
        let mut faces = [Face::Free; 3];
        let mut rest = code;
        for face in faces.iter_mut().take(m).rev() {
            *face = match rest % 3 {
                0 => Face::Upper,
                1 => Face::Lower,
                _ => Face::Free,
            };
            rest /= 3;
        }
        let mut u = DVector::zeros(m);
        let mut free = Vec::new();
        for (i, face) in faces.iter().take(m).enumerate() {
            match face {
                Face::Upper => u[i] = upper[i],
                Face::Lower => u[i] = lower[i],
                Face::Free => free.push(i),
            }
        }
        if !free.is_empty() {
            // 2 Q_FF u_F = -q_F - 2 Q_FB u_B
            let k = free.len();
            let mut lhs = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for (a, &i) in free.iter().enumerate() {
                rhs[a] = -form.linear[i];
                for j in 0..m {
                    if let Some(b) = free.iter().position(|&f| f == j) {
                        lhs[(a, b)] = 2.0 * q_sym[(i, j)];
                    } else {
                        rhs[a] -= 2.0 * q_sym[(i, j)] * u[j];
                    }
                }
            }
            let Some(sol) = lhs.lu().solve(&rhs) else { continue };
            if sol.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let mut inside = true;
            for (a, &i) in free.iter().enumerate() {
                let tol = 1e-12 * (1.0 + upper[i].abs().max(lower[i].abs()));
                if sol[a] < lower[i] - tol || sol[a] > upper[i] + tol {
                    inside = false;
                }
                u[i] = sol[a].clamp(lower[i], upper[i]);
            }
            if !inside {
                continue;
            }
        }
        let value = objective(&u);
        if best.as_ref().is_none_or(|(v, _)| value > *v) {
            best = Some((value, u));
        }
    }
    // The all-vertex assignments are always candidates, so `best` is set.
    Ok(best.map(|(_, u)| u).unwrap_or_else(|| DVector::zeros(m)))
}

type InputField = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// The stopping policy `u0(x)` used to predict `delta_h`.
#[derive(Clone)]
pub enum PredictionPolicy {
    BangBang(BangBang),
    /// Maximizes the `h_ddot` quadratic form over the input box.
    QpMaximal,
    /// `u_max * B^T c / |B^T c|` for norm-ball input bounds.
    NormBallGradient,
    Custom(Arc<InputField>),
}

impl fmt::Debug for PredictionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictionPolicy::BangBang(b) => f.debug_tuple("BangBang").field(b).finish(),
            PredictionPolicy::QpMaximal => f.write_str("QpMaximal"),
            PredictionPolicy::NormBallGradient => f.write_str("NormBallGradient"),
            PredictionPolicy::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl PredictionPolicy {
    pub fn custom(map: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        PredictionPolicy::Custom(Arc::new(map))
    }

    /// `u0(x)`. `nominal` supplies neutral values for channels configured
    /// with [`NeutralValue::Nominal`]; without it they fall back to the
    /// bounds midpoint.
    pub fn input(
        &self,
        system: &dyn AffineSystem,
        barrier: &dyn Barrier,
        x: &DVector<f64>,
        nominal: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        match self {
            PredictionPolicy::BangBang(bb) => bb.input(system, barrier, x, nominal),
            PredictionPolicy::QpMaximal => {
                let form = h_ddot_form(barrier, system, x)?;
                let (lower, upper) = system.bounds().bounding_box();
                qp_maximal_u0(&form, &lower, &upper)
            }
            PredictionPolicy::NormBallGradient => {
                let InputBounds::NormBall { radius, .. } = system.bounds() else {
                    return Err(Error::Invalid("norm-ball policy needs norm-ball input bounds".into()));
                };
                let c = barrier.gradient(x)?;
                match normball_u0(&c, &system.input_map(x)?, *radius) {
                    Err(Error::ZeroGradient(msg)) => {
                        log::debug!("norm-ball policy degenerate ({msg}); holding zero input");
                        Ok(DVector::zeros(system.input_dim()))
                    }
                    other => other,
                }
            }
            PredictionPolicy::Custom(map) => Ok(map(x)),
        }
    }
}

/// Outcome of one stopping-margin prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    /// Accumulated change of `h` until its rate vanishes; never positive.
    pub delta_h: f64,
    /// Time at which the rate first became non-negative.
    pub horizon: f64,
    pub stop_state: DVector<f64>,
    pub steps: usize,
}

/// `delta_h` at `x` under `policy`, with step `dt` and horizon `t_max`.
pub fn compute_delta_h(
    system: &dyn AffineSystem,
    barrier: &dyn Barrier,
    policy: &PredictionPolicy,
    x: &DVector<f64>,
    dt: f64,
    t_max: f64,
) -> Result<PredictionResult> {
    compute_delta_h_with_nominal(system, barrier, policy, x, dt, t_max, None)
}

/// As [`compute_delta_h`], with the nominal input that seeds
/// [`NeutralValue::Nominal`] channels.
///
/// Propagates `x' = f + G u0` from `x`, holding `u0` over each step, and
/// sums `h_dot * dt` at the left end of every completed step while
/// `h_dot < 0`; the partial step in which the rate crosses zero is dropped.
/// Holding `u0` per step keeps a switching policy (such as a sign law)
/// from chattering inside the integrator.
pub fn compute_delta_h_with_nominal(
    system: &dyn AffineSystem,
    barrier: &dyn Barrier,
    policy: &PredictionPolicy,
    x: &DVector<f64>,
    dt: f64,
    t_max: f64,
    nominal: Option<&DVector<f64>>,
) -> Result<PredictionResult> {
    if !(dt > 0.0) || !(t_max > 0.0) {
        return Err(Error::Invalid(format!("prediction needs dt > 0 and t_max > 0 (dt = {dt}, t_max = {t_max})")));
    }
    let mut state = x.clone();
    let mut delta_h = 0.0;
    let mut steps = 0usize;
    loop {
        let t = steps as f64 * dt;
        let u0 = policy.input(system, barrier, &state, nominal)?;
        let rate = h_dot(barrier, system, &state, &u0)?;
        if rate >= 0.0 {
            return Ok(PredictionResult { delta_h, horizon: t, stop_state: state, steps });
        }
        if t >= t_max {
            return Err(Error::PolicyFailure { t_max });
        }
        delta_h += rate * dt;
        state = rk4_step(|_, y: &DVector<f64>| system.dynamics(y, &u0), &state, t, dt)?;
        steps += 1;
    }
}
