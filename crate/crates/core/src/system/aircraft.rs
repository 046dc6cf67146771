//! Three-degree-of-freedom longitudinal rigid-body aircraft.
//!
//! State `[U, W, Q, theta]` (body-axis velocities, pitch rate, pitch
//! angle), input `[delta_E, delta_th]` (elevator in radians, throttle in
//! percent). The alpha-dot aerodynamic terms make the raw equations
//! implicit in `[U', W', Q']`; they are brought into explicit affine form
//! by solving with the block-triangular coupling matrix
//!
//! ```text
//! | A_T   0  0 |
//! | a_R^T 1  0 |
//! | 0     0  1 |
//! ```
//!
//! Lift and drag coefficients are grouped as `[C_L, C_D]` in every block.
//! The stability-axis force is `-qbar S [C_D, C_L]` (drag along the
//! stability x-axis, lift along stability z), rotated into body axes by
//! `T_BS(alpha)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Matrix4x2, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::{AffineSystem, InputBounds, Label};
use crate::error::{check_finite, Error, Result};

/// Mass, geometry, aerodynamic and environment data for the longitudinal
/// model. JSON keys follow the coefficient symbols (`C_L_alpha`,
/// `X_delta_th`, ...). Coefficients multiplying `Q` or `alpha_dot` are per
/// rad/s; elevator limits are stored in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AircraftParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,

    pub m: f64,
    #[serde(rename = "Iy")]
    pub iy: f64,
    #[serde(rename = "S")]
    pub s: f64,
    pub c: f64,

    #[serde(rename = "C_L0")]
    pub c_l0: f64,
    #[serde(rename = "C_D0")]
    pub c_d0: f64,
    #[serde(rename = "C_L_alpha")]
    pub c_l_alpha: f64,
    #[serde(rename = "C_L_M")]
    pub c_l_mach: f64,
    #[serde(rename = "C_L_q")]
    pub c_l_q: f64,
    #[serde(rename = "C_D_alpha")]
    pub c_d_alpha: f64,
    #[serde(rename = "C_D_M")]
    pub c_d_mach: f64,
    #[serde(rename = "C_D_q")]
    pub c_d_q: f64,
    #[serde(rename = "C_L_alpha_dot")]
    pub c_l_alpha_dot: f64,
    #[serde(rename = "C_D_alpha_dot")]
    pub c_d_alpha_dot: f64,
    #[serde(rename = "C_L_delta_E")]
    pub c_l_delta_e: f64,
    #[serde(rename = "C_D_delta_E")]
    pub c_d_delta_e: f64,

    #[serde(rename = "C_m0")]
    pub c_m0: f64,
    #[serde(rename = "C_m_alpha")]
    pub c_m_alpha: f64,
    #[serde(rename = "C_m_M")]
    pub c_m_mach: f64,
    #[serde(rename = "C_m_q")]
    pub c_m_q: f64,
    #[serde(rename = "C_m_delta_E")]
    pub c_m_delta_e: f64,
    #[serde(rename = "C_m_alpha_dot")]
    pub c_m_alpha_dot: f64,

    #[serde(rename = "X_delta_th")]
    pub x_delta_th: f64,

    pub rho: f64,
    pub a: f64,
    pub g: f64,

    #[serde(rename = "delta_E_min")]
    pub delta_e_min_deg: f64,
    #[serde(rename = "delta_E_max")]
    pub delta_e_max_deg: f64,
    #[serde(rename = "delta_th_min", default)]
    pub delta_th_min: f64,
    #[serde(rename = "delta_th_max", default = "default_throttle_max")]
    pub delta_th_max: f64,
}

fn default_throttle_max() -> f64 {
    100.0
}

/// The coefficient matrices in their `[C_L, C_D]`-row layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientBlocks {
    pub c_f0: Vector2<f64>,
    pub c_fi: Matrix2x3<f64>,
    pub c_f_alpha_dot: Vector2<f64>,
    pub c_f_delta_e: Vector2<f64>,
    pub c_m0: f64,
    pub c_mi: Vector3<f64>,
    pub c_m_delta_e: f64,
    pub c_m_alpha_dot: f64,
}

impl AircraftParams {
    pub fn from_json_str(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: Self =
            serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("m", self.m), ("Iy", self.iy), ("S", self.s), ("c", self.c), ("rho", self.rho), ("a", self.a)];
        if let Some((name, value)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Invalid(format!("aircraft parameter {name} must be positive, got {value}")));
        }
        if !(self.delta_e_min_deg <= self.delta_e_max_deg) || !(self.delta_th_min <= self.delta_th_max) {
            return Err(Error::Invalid("aircraft input limits are inverted".into()));
        }
        Ok(())
    }

    pub fn blocks(&self) -> CoefficientBlocks {
        CoefficientBlocks {
            c_f0: Vector2::new(self.c_l0, self.c_d0),
            c_fi: Matrix2x3::new(
                self.c_l_alpha,
                self.c_l_mach,
                self.c_l_q, //
                self.c_d_alpha,
                self.c_d_mach,
                self.c_d_q,
            ),
            c_f_alpha_dot: Vector2::new(self.c_l_alpha_dot, self.c_d_alpha_dot),
            c_f_delta_e: Vector2::new(self.c_l_delta_e, self.c_d_delta_e),
            c_m0: self.c_m0,
            c_mi: Vector3::new(self.c_m_alpha, self.c_m_mach, self.c_m_q),
            c_m_delta_e: self.c_m_delta_e,
            c_m_alpha_dot: self.c_m_alpha_dot,
        }
    }

    pub fn input_bounds(&self) -> Result<InputBounds> {
        InputBounds::new_box(
            vec![self.delta_e_min_deg.to_radians(), self.delta_th_min],
            vec![self.delta_e_max_deg.to_radians(), self.delta_th_max],
        )
    }

    /// A copy with every aerodynamic coefficient set to zero.
    pub fn without_aerodynamics(&self) -> Self {
        Self {
            c_l0: 0.0,
            c_d0: 0.0,
            c_l_alpha: 0.0,
            c_l_mach: 0.0,
            c_l_q: 0.0,
            c_d_alpha: 0.0,
            c_d_mach: 0.0,
            c_d_q: 0.0,
            c_l_alpha_dot: 0.0,
            c_d_alpha_dot: 0.0,
            c_l_delta_e: 0.0,
            c_d_delta_e: 0.0,
            c_m0: 0.0,
            c_m_alpha: 0.0,
            c_m_mach: 0.0,
            c_m_q: 0.0,
            c_m_delta_e: 0.0,
            c_m_alpha_dot: 0.0,
            ..self.clone()
        }
    }
}

/// Angle of attack `atan2(W, U)`.
pub fn angle_of_attack(x: &DVector<f64>) -> f64 {
    x[1].atan2(x[0])
}

/// Intermediate quantities of one model evaluation, exposed for tests.
#[derive(Debug, Clone, Copy)]
pub struct AircraftTerms {
    pub alpha: f64,
    pub mach: f64,
    pub qbar: f64,
    /// `d alpha / d [U, W]`.
    pub c_prime: Vector2<f64>,
    pub f_t: Vector2<f64>,
    pub g_t: Matrix2<f64>,
    pub a_t: Matrix2<f64>,
    pub f_r: f64,
    pub g_r: Vector2<f64>,
    pub a_r: Vector2<f64>,
}

#[derive(Debug, Clone)]
pub struct LongitudinalAircraft {
    params: AircraftParams,
    blocks: CoefficientBlocks,
    bounds: InputBounds,
    /// Evaluation fails for `U` at or below this speed.
    pub u_floor: f64,
}

const MAX_COUPLING_CONDITION: f64 = 1e12;

impl LongitudinalAircraft {
    pub fn new(params: AircraftParams) -> Result<Self> {
        params.validate()?;
        let bounds = params.input_bounds()?;
        Ok(Self { blocks: params.blocks(), params, bounds, u_floor: 1.0 })
    }

    pub fn params(&self) -> &AircraftParams {
        &self.params
    }

    pub fn terms(&self, x: &DVector<f64>) -> Result<AircraftTerms> {
        let p = &self.params;
        let b = &self.blocks;
        let (u, w, q, theta) = (x[0], x[1], x[2], x[3]);
        if !(u > self.u_floor) {
            return Err(Error::Domain(format!("forward speed U = {u} at or below U_floor {}", self.u_floor)));
        }
        let speed_sq = u * u + w * w;
        let speed = speed_sq.sqrt();
        let alpha = w.atan2(u);
        let mach = speed / p.a;
        let qbar = 0.5 * p.rho * speed_sq;
        let c_prime = Vector2::new(-w, u) / speed_sq;

        let (sa, ca) = alpha.sin_cos();
        let (st, ct) = theta.sin_cos();
        // Stability -> body, applied to [C_L, C_D]-ordered blocks: the
        // drag entry goes to the stability x-axis, lift to z.
        let t_bs_lift_drag = Matrix2::new(-sa, ca, ca, sa);
        let zeta = Vector3::new(alpha, mach, q);
        let force_scale = qbar * p.s / p.m;
        let moment_scale = qbar * p.s * p.c / p.iy;

        let gravity = Vector2::new(-p.g * st, p.g * ct);
        let rotation = Vector2::new(q * w, -q * u);
        let f_t = gravity - rotation - t_bs_lift_drag * (b.c_f0 + b.c_fi * zeta) * force_scale;

        let elevator = -(t_bs_lift_drag * b.c_f_delta_e) * force_scale;
        let g_t = Matrix2::new(elevator.x, p.x_delta_th, elevator.y, 0.0);

        let a_t = Matrix2::identity() + (t_bs_lift_drag * b.c_f_alpha_dot) * c_prime.transpose() * force_scale;

        let f_r = moment_scale * (b.c_m0 + b.c_mi.dot(&zeta));
        let g_r = Vector2::new(moment_scale * b.c_m_delta_e, 0.0);
        let a_r = -c_prime * (moment_scale * b.c_m_alpha_dot);

        Ok(AircraftTerms { alpha, mach, qbar, c_prime, f_t, g_t, a_t, f_r, g_r, a_r })
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<(Vector4<f64>, Matrix4x2<f64>)> {
        let t = self.terms(x)?;
        let condition = condition_number(&t.a_t);
        let a_t_inv = match t.a_t.try_inverse() {
            Some(inv) if condition <= MAX_COUPLING_CONDITION => inv,
            _ => return Err(Error::SingularMassMatrix { condition }),
        };
        // Forward substitution through the block-triangular coupling matrix.
        let v_dot = a_t_inv * t.f_t;
        let q_dot = t.f_r - t.a_r.dot(&v_dot);
        let f = Vector4::new(v_dot.x, v_dot.y, q_dot, x[2]);

        let g_v = a_t_inv * t.g_t;
        let g_q = t.g_r.transpose() - t.a_r.transpose() * g_v;
        let g = Matrix4x2::new(
            g_v[(0, 0)],
            g_v[(0, 1)], //
            g_v[(1, 0)],
            g_v[(1, 1)],
            g_q[(0, 0)],
            g_q[(0, 1)],
            0.0,
            0.0,
        );
        check_finite(f.as_slice(), "aircraft drift")?;
        check_finite(g.as_slice(), "aircraft input map")?;
        Ok((f, g))
    }
}

fn condition_number(m: &Matrix2<f64>) -> f64 {
    // Singular values of a 2x2 from the eigenvalues of M^T M.
    let mtm = m.transpose() * m;
    let tr = mtm.trace();
    let det = mtm.determinant();
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let s_max = (0.5 * tr + disc).sqrt();
    let s_min = (0.5 * tr - disc).max(0.0).sqrt();
    if s_min == 0.0 {
        f64::INFINITY
    } else {
        s_max / s_min
    }
}

impl AffineSystem for LongitudinalAircraft {
    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn drift_and_input_map(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (f, g) = self.evaluate(x)?;
        Ok((DVector::from_column_slice(f.as_slice()), DMatrix::from_column_slice(4, 2, g.as_slice())))
    }

    fn bounds(&self) -> &InputBounds {
        &self.bounds
    }

    fn state_labels(&self) -> Vec<Label> {
        vec![Label::new("U", "m/s"), Label::new("W", "m/s"), Label::new("Q", "rad/s"), Label::new("theta", "rad")]
    }

    fn input_labels(&self) -> Vec<Label> {
        vec![Label::new("delta_E", "rad"), Label::new("delta_th", "%")]
    }
}

/// Equilibrium flight condition.
#[derive(Debug, Clone)]
pub struct Trim {
    pub state: DVector<f64>,
    pub input: DVector<f64>,
    pub alpha: f64,
    pub residual: f64,
    pub iterations: usize,
}

const TRIM_MAX_ITERATIONS: usize = 100;
const TRIM_TOLERANCE: f64 = 1e-9;

/// Finds `(alpha, delta_E, delta_th)` such that `f(x) + G(x) u = 0` with
/// airspeed `v0`, zero pitch rate and flight-path angle `gamma_path`
/// (so `theta = gamma_path + alpha`). Damped Newton iteration with a
/// finite-difference Jacobian.
pub fn trim_solve(params: &AircraftParams, v0: f64, gamma_path: f64) -> Result<Trim> {
    if !(v0 > 0.0) {
        return Err(Error::Invalid(format!("trim airspeed must be positive, got {v0}")));
    }
    let aircraft = LongitudinalAircraft::new(params.clone())?;
    let assemble = |z: &Vector3<f64>| {
        let alpha = z[0];
        let x = DVector::from_column_slice(&[v0 * alpha.cos(), v0 * alpha.sin(), 0.0, gamma_path + alpha]);
        let u = DVector::from_column_slice(&[z[1], z[2]]);
        (x, u)
    };
    let residual = |z: &Vector3<f64>| -> Result<(Vector3<f64>, f64)> {
        let (x, u) = assemble(z);
        let xdot = aircraft.dynamics(&x, &u)?;
        Ok((Vector3::new(xdot[0], xdot[1], xdot[2]), xdot.norm()))
    };

    let (lower, upper) = aircraft.bounds().bounding_box();
    let mut z = Vector3::new(5f64.to_radians(), 0.5 * (lower[0] + upper[0]), 0.5 * (lower[1] + upper[1]));
    let (mut r, mut norm) = residual(&z)?;
    let mut iterations = 0;
    while norm >= TRIM_TOLERANCE {
        if iterations == TRIM_MAX_ITERATIONS {
            return Err(Error::TrimNotConverged { iterations, residual: norm });
        }
        iterations += 1;
        let mut jac = nalgebra::Matrix3::zeros();
        for k in 0..3 {
            let h = crate::numdiff::step_size(z[k]);
            let mut plus = z;
            let mut minus = z;
            plus[k] += h;
            minus[k] -= h;
            let col = (residual(&plus)?.0 - residual(&minus)?.0) / (2.0 * h);
            jac.set_column(k, &col);
        }
        let step = match jac.lu().solve(&(-r)) {
            Some(step) if step.iter().all(|s| s.is_finite()) => step,
            _ => return Err(Error::TrimNotConverged { iterations, residual: norm }),
        };
        // Backtrack until the residual decreases.
        let mut scale = 1.0;
        loop {
            let candidate = z + step * scale;
            if let Ok((rc, nc)) = residual(&candidate) {
                if nc < norm || scale < 1e-6 {
                    z = candidate;
                    r = rc;
                    norm = nc;
                    break;
                }
            }
            scale *= 0.5;
            if scale < 1e-6 {
                return Err(Error::TrimNotConverged { iterations, residual: norm });
            }
        }
    }
    let (state, input) = assemble(&z);
    if !aircraft.bounds().contains(&input, 1e-12) {
        return Err(Error::TrimOutOfBounds { input: input.iter().copied().collect() });
    }
    Ok(Trim { alpha: z[0], state, input, residual: norm, iterations })
}
