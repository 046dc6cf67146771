//! The per-step safety filter and the small exact QP behind it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::{assess_activity, Barrier, ClassKappa, GuardedBarrier};
use crate::error::{Error, Result};
use crate::predictor::{compute_delta_h_with_nominal, DEFAULT_DT, DEFAULT_T_MAX};
use crate::system::{AffineSystem, InputBounds};

/// Which constraint the filter imposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// No filtering; the nominal input is only clamped to the bounds.
    None,
    /// The plain barrier condition `h_dot + alpha(h) >= 0`.
    Base,
    /// The prediction-based condition with `h + delta_h`.
    #[serde(alias = "prediction_based")]
    Pb,
}

impl FilterMode {
    pub fn label(&self) -> &'static str {
        match self {
            FilterMode::None => "none",
            FilterMode::Base => "base",
            FilterMode::Pb => "pb",
        }
    }
}

impl std::str::FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(FilterMode::None),
            "base" => Ok(FilterMode::Base),
            "pb" | "prediction_based" | "pb-cbf" => Ok(FilterMode::Pb),
            other => Err(Error::Invalid(format!("unknown filter mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilterConfig {
    weight: DMatrix<f64>,
    pub kappa: ClassKappa,
    pub dt_prediction: f64,
    pub t_max_prediction: f64,
    pub mode: FilterMode,
}

impl FilterConfig {
    /// Checks that `weight` is symmetric (to 1e-12) and positive definite.
    pub fn new(weight: DMatrix<f64>, kappa: ClassKappa, mode: FilterMode) -> Result<Self> {
        if !weight.is_square() || weight.nrows() == 0 {
            return Err(Error::Invalid("QP weight must be a non-empty square matrix".into()));
        }
        if (&weight - weight.transpose()).amax() > 1e-12 {
            return Err(Error::Invalid("QP weight is not symmetric".into()));
        }
        let smallest = weight.symmetric_eigenvalues().min();
        if !(smallest > 0.0) {
            return Err(Error::Invalid(format!("QP weight is not positive definite (eigenvalue {smallest:e})")));
        }
        kappa.validate()?;
        Ok(Self { weight, kappa, dt_prediction: DEFAULT_DT, t_max_prediction: DEFAULT_T_MAX, mode })
    }

    pub fn identity(m: usize, kappa: ClassKappa, mode: FilterMode) -> Result<Self> {
        Self::new(DMatrix::identity(m, m), kappa, mode)
    }

    pub fn with_prediction(mut self, dt: f64, t_max: f64) -> Result<Self> {
        if !(dt > 0.0) || !(t_max > dt) {
            return Err(Error::Invalid(format!("prediction needs 0 < dt < t_max (dt = {dt}, t_max = {t_max})")));
        }
        self.dt_prediction = dt;
        self.t_max_prediction = t_max;
        Ok(self)
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }
}

/// `a^T du >= b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub a: DVector<f64>,
    pub b: f64,
}

impl Row {
    pub fn residual(&self, du: &DVector<f64>) -> f64 {
        self.a.dot(du) - self.b
    }
}

/// `min 1/2 du^T H du` subject to `rows` and `lower <= du <= upper`.
///
/// `hints` are extra points known to be good candidates (feasible ones
/// are always considered, which guards against degenerate active sets).
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub weight: DMatrix<f64>,
    pub rows: Vec<Row>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub hints: Vec<DVector<f64>>,
}

impl QpProblem {
    pub fn objective(&self, du: &DVector<f64>) -> f64 {
        0.5 * (du.transpose() * &self.weight * du)[0]
    }

    fn all_constraints(&self) -> Vec<Row> {
        let m = self.lower.len();
        let mut all = self.rows.clone();
        for i in 0..m {
            let mut e = DVector::zeros(m);
            e[i] = 1.0;
            all.push(Row { a: e.clone(), b: self.lower[i] });
            all.push(Row { a: -e, b: -self.upper[i] });
        }
        all
    }

    pub fn is_feasible(&self, du: &DVector<f64>, tol: f64) -> bool {
        self.all_constraints().iter().all(|row| row.residual(du) >= -tol * (1.0 + row.b.abs()))
    }
}

const FEASIBILITY_TOL: f64 = 1e-9;
const MULTIPLIER_TOL: f64 = 1e-12;

fn subsets(n: usize, max_size: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for size in 1..=max_size.min(n) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.clone());
            let mut i = size;
            while i > 0 && idx[i - 1] == n - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    out
}

/// Exact active-set enumeration for `m <= 3`.
///
/// Every subset of at most `m` constraints (general rows and box faces) is
/// treated as active: the equality-constrained KKT system is solved and
/// the point kept if it is primal feasible with non-negative multipliers.
/// The cheapest surviving candidate wins.
pub fn solve_small_qp(problem: &QpProblem) -> Result<DVector<f64>> {
    let m = problem.lower.len();
    if m > 3 {
        return Err(Error::UnsupportedDimension(m));
    }
    if problem.weight.shape() != (m, m) || problem.rows.iter().any(|r| r.a.len() != m) {
        return Err(Error::Invalid("QP dimensions disagree".into()));
    }
    if problem.lower.iter().zip(problem.upper.iter()).any(|(l, u)| l > u) {
        return Err(Error::Infeasible("input box is empty".into()));
    }
    let constraints = problem.all_constraints();
    let feasible =
        |du: &DVector<f64>| constraints.iter().all(|row| row.residual(du) >= -FEASIBILITY_TOL * (1.0 + row.b.abs()));

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut consider = |du: DVector<f64>| {
        let value = problem.objective(&du);
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, du));
        }
    };

    for active in subsets(constraints.len(), m) {
        let k = active.len();
        // [H  -A^T] [du    ]   [0]
        // [A   0  ] [lambda] = [b]
        let mut kkt = DMatrix::zeros(m + k, m + k);
        let mut rhs = DVector::zeros(m + k);
        kkt.view_mut((0, 0), (m, m)).copy_from(&problem.weight);
        for (j, &c) in active.iter().enumerate() {
            let row = &constraints[c];
            for i in 0..m {
                kkt[(i, m + j)] = -row.a[i];
                kkt[(m + j, i)] = row.a[i];
            }
            rhs[m + j] = row.b;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        if sol.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let du = sol.rows(0, m).into_owned();
        let multipliers_ok = sol.rows(m, k).iter().all(|l| *l >= -MULTIPLIER_TOL);
        if multipliers_ok && feasible(&du) {
            consider(du);
        }
    }
    for hint in &problem.hints {
        if hint.len() == m && feasible(hint) {
            consider(hint.clone());
        }
    }
    match best {
        Some((_, du)) => Ok(DVector::from_fn(m, |i, _| du[i].clamp(problem.lower[i], problem.upper[i]))),
        None => Err(Error::Infeasible(format!("no feasible point among {} constraints", constraints.len()))),
    }
}

/// Filter row built from the predicted margin:
/// `c^T G du >= -c^T G (u - u0) - alpha(h + delta_h)`.
pub fn pb_row(
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    u_nominal: &DVector<f64>,
    u0: &DVector<f64>,
    h: f64,
    delta_h: f64,
    kappa: &ClassKappa,
) -> Row {
    let a = g.tr_mul(c);
    let b = -a.dot(&(u_nominal - u0)) - kappa.eval(h + delta_h);
    Row { a, b }
}

/// Plain barrier row: `c^T G du >= -c^T (f + G u) - alpha(h)`.
pub fn base_row(
    c: &DVector<f64>,
    f: &DVector<f64>,
    g: &DMatrix<f64>,
    u_nominal: &DVector<f64>,
    h: f64,
    kappa: &ClassKappa,
) -> Row {
    let a = g.tr_mul(c);
    let b = -c.dot(f) - a.dot(u_nominal) - kappa.eval(h);
    Row { a, b }
}

/// Outcome code of the per-step QP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    /// Mode `None`: the QP is skipped.
    Bypass,
    /// Every row holds at `du = 0`; nothing to solve.
    Inactive,
    Solved,
    /// Base mode only: rows dropped and the nominal input clamped.
    Infeasible,
}

impl QpStatus {
    pub fn code(&self) -> u8 {
        match self {
            QpStatus::Bypass | QpStatus::Inactive => 0,
            QpStatus::Solved => 1,
            QpStatus::Infeasible => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilterDiagnostics {
    pub h: Vec<f64>,
    /// `h + delta_h` per barrier (equal to `h` for inactive barriers).
    pub h_p: Vec<f64>,
    /// Margin of the active barrier, zero when none is active.
    pub delta_h: f64,
    /// Prediction horizon of the active barrier.
    pub horizon: f64,
    pub active: Option<usize>,
    /// `h_dot(x, u0_i(x))` per barrier (empty outside prediction mode).
    pub rates: Vec<f64>,
    /// `u0` of the active barrier.
    pub u0: Option<DVector<f64>>,
    /// Row residual `a^T du - b` per barrier at the returned input.
    pub row_residuals: Vec<f64>,
    pub status: QpStatus,
    /// `|u* - u_nominal| > 1e-9`.
    pub filter_on: bool,
    /// Norm-ball bounds forced a projection after the box QP.
    pub projected: bool,
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub input: DVector<f64>,
    pub diagnostics: FilterDiagnostics,
}

const FILTER_ON_TOL: f64 = 1e-9;

/// One step of the safety filter.
///
/// In prediction mode the barrier whose rate under its own policy is
/// negative gets the prediction row with `h + delta_h`; every other barrier
/// has `delta_h = 0` and gets the plain row, which is exact there. In base
/// mode all barriers get the plain row.
pub fn filter_step(
    system: &dyn AffineSystem,
    barriers: &[GuardedBarrier],
    config: &FilterConfig,
    x: &DVector<f64>,
    u_nominal: &DVector<f64>,
) -> Result<FilterOutput> {
    crate::error::check_finite(u_nominal.as_slice(), "nominal input")?;
    let m = system.input_dim();
    let bounds = system.bounds();
    let h: Vec<f64> = barriers.iter().map(|b| b.barrier.value(x)).collect::<Result<_>>()?;

    let mut diagnostics = FilterDiagnostics {
        h: h.clone(),
        h_p: h.clone(),
        delta_h: 0.0,
        horizon: 0.0,
        active: None,
        rates: Vec::new(),
        u0: None,
        row_residuals: vec![0.0; barriers.len()],
        status: QpStatus::Bypass,
        filter_on: false,
        projected: false,
    };

    if config.mode == FilterMode::None {
        let input = bounds.clamp(u_nominal);
        diagnostics.filter_on = (&input - u_nominal).amax() > FILTER_ON_TOL;
        return Ok(FilterOutput { input, diagnostics });
    }

    let (f, g) = system.drift_and_input_map(x)?;
    let mut rows = Vec::with_capacity(barriers.len());
    let mut hints = Vec::new();
    if config.mode == FilterMode::Pb {
        let activity = assess_activity(barriers, system, x, Some(u_nominal))?;
        diagnostics.rates = activity.rates.clone();
        diagnostics.active = activity.active;
        if let Some(i) = activity.active {
            let entry = &barriers[i];
            let prediction = compute_delta_h_with_nominal(
                system,
                entry.barrier.as_ref(),
                &entry.policy,
                x,
                config.dt_prediction,
                config.t_max_prediction,
                Some(u_nominal),
            )?;
            diagnostics.delta_h = prediction.delta_h;
            diagnostics.horizon = prediction.horizon;
            diagnostics.h_p[i] = h[i] + prediction.delta_h;
            let u0 = activity.policy_inputs[i].clone();
            hints.push(&u0 - u_nominal);
            diagnostics.u0 = Some(u0);
        }
        if let Some(i) = diagnostics.h_p.iter().position(|v| *v <= 0.0) {
            log::debug!("state outside the predicted safe set of barrier {i} (h_P = {:e})", diagnostics.h_p[i]);
        }
    }
    for (i, entry) in barriers.iter().enumerate() {
        let c = entry.barrier.gradient(x)?;
        let row = match (&diagnostics.u0, diagnostics.active) {
            (Some(u0), Some(a)) if a == i => pb_row(&c, &g, u_nominal, u0, h[i], diagnostics.delta_h, &config.kappa),
            _ => base_row(&c, &f, &g, u_nominal, h[i], &config.kappa),
        };
        rows.push(row);
    }

    let (lower, upper) = bounds.bounding_box();
    let problem =
        QpProblem { weight: config.weight.clone(), rows, lower: lower - u_nominal, upper: upper - u_nominal, hints };
    let zero = DVector::zeros(m);
    let (du, status) = if problem.is_feasible(&zero, 0.0) {
        (zero, QpStatus::Inactive)
    } else {
        match solve_small_qp(&problem) {
            Ok(du) => (du, QpStatus::Solved),
            Err(Error::Infeasible(msg)) if config.mode == FilterMode::Base => {
                log::debug!("base filter infeasible ({msg}); dropping barrier rows");
                let du = DVector::from_fn(m, |i, _| 0f64.clamp(problem.lower[i], problem.upper[i]));
                (du, QpStatus::Infeasible)
            }
            Err(Error::Infeasible(msg)) => {
                return Err(Error::Infeasible(format!(
                    "{msg}; prediction filter at x = {:?}, u_nominal = {:?}, h_P = {:?}, active = {:?}",
                    x.as_slice(),
                    u_nominal.as_slice(),
                    diagnostics.h_p,
                    diagnostics.active
                )))
            }
            Err(e) => return Err(e),
        }
    };

    let mut input = u_nominal + &du;
    if let InputBounds::NormBall { radius, .. } = bounds {
        if input.norm() > *radius {
            let shifted: Vec<Row> =
                problem.rows.iter().map(|r| Row { a: r.a.clone(), b: r.b + r.a.dot(u_nominal) }).collect();
            input = project_ball_halfspaces(u_nominal, *radius, &shifted);
            diagnostics.projected = true;
        }
    }
    let du = &input - u_nominal;
    diagnostics.row_residuals = problem.rows.iter().map(|r| r.residual(&du)).collect();
    diagnostics.status = status;
    diagnostics.filter_on = du.amax() > FILTER_ON_TOL;
    Ok(FilterOutput { input, diagnostics })
}

/// Closest point to `p` in the ball of `radius` intersected with the
/// half-spaces `a^T u >= b`. Candidates: `p` itself, its ball projection,
/// its projection onto each hyperplane, and the closest point of each
/// sphere-hyperplane intersection. Falls back to the ball projection when
/// none is feasible.
pub fn project_ball_halfspaces(p: &DVector<f64>, radius: f64, halfspaces: &[Row]) -> DVector<f64> {
    let ball_proj = |v: &DVector<f64>| {
        let n = v.norm();
        if n > radius {
            v * (radius / n)
        } else {
            v.clone()
        }
    };
    let tol = 1e-12;
    let feasible = |v: &DVector<f64>| {
        v.norm() <= radius * (1.0 + tol) && halfspaces.iter().all(|r| r.residual(v) >= -tol * (1.0 + r.b.abs()))
    };
    let mut candidates = vec![p.clone(), ball_proj(p)];
    for row in halfspaces {
        let a2 = row.a.norm_squared();
        if a2 == 0.0 {
            continue;
        }
        let on_plane = p + &row.a * ((row.b - row.a.dot(p)) / a2);
        candidates.push(on_plane.clone());
        let center = &row.a * (row.b / a2);
        let rho2 = radius * radius - center.norm_squared();
        if rho2 < 0.0 {
            continue;
        }
        let offset = &on_plane - &center;
        let dir = if offset.norm() > 0.0 {
            offset.normalize()
        } else {
            // Any unit vector orthogonal to `a`.
            let k = row.a.iamin();
            let mut e = DVector::zeros(p.len());
            e[k] = 1.0;
            let ortho = &e - &row.a * (row.a[k] / a2);
            if ortho.norm() == 0.0 {
                continue;
            }
            ortho.normalize()
        };
        candidates.push(&center + dir * rho2.sqrt());
    }
    candidates
        .into_iter()
        .filter(|c| feasible(c))
        .min_by(|a, b| (a - p).norm().total_cmp(&(b - p).norm()))
        .map(|c| ball_proj(&c))
        .unwrap_or_else(|| ball_proj(p))
}

/// The active barrier's row, for checking a filtered input against it.
pub fn prediction_row(
    system: &dyn AffineSystem,
    barrier: &dyn Barrier,
    kappa: &ClassKappa,
    x: &DVector<f64>,
    u_nominal: &DVector<f64>,
    u0: &DVector<f64>,
    delta_h: f64,
) -> Result<Row> {
    let g = system.input_map(x)?;
    Ok(pb_row(&barrier.gradient(x)?, &g, u_nominal, u0, barrier.value(x)?, delta_h, kappa))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn problem(weight: DMatrix<f64>, rows: Vec<Row>, bound: f64) -> QpProblem {
        let m = weight.nrows();
        QpProblem {
            weight,
            rows,
            lower: DVector::from_element(m, -bound),
            upper: DVector::from_element(m, bound),
            hints: vec![],
        }
    }

    #[test]
    fn satisfied_constraint_gives_zero() {
        let p = problem(DMatrix::identity(2, 2), vec![Row { a: dv(&[1.0, 1.0]), b: -1.0 }], 10.0);
        assert_eq!(solve_small_qp(&p).unwrap(), dv(&[0.0, 0.0]));
    }

    #[test]
    fn scalar_kkt_by_hand() {
        let p = problem(DMatrix::identity(1, 1), vec![Row { a: dv(&[2.0]), b: 1.0 }], 10.0);
        assert!((solve_small_qp(&p).unwrap()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn symmetric_two_input_kkt() {
        let p = problem(DMatrix::identity(2, 2), vec![Row { a: dv(&[1.0, 1.0]), b: 2.0 }], 10.0);
        assert!((solve_small_qp(&p).unwrap() - dv(&[1.0, 1.0])).norm() < 1e-14);
    }

    #[test]
    fn box_face_and_row_together() {
        // du1 + du2 >= 3 with du1 <= 1: optimum (1, 2).
        let mut p = problem(DMatrix::identity(2, 2), vec![Row { a: dv(&[1.0, 1.0]), b: 3.0 }], 10.0);
        p.upper[0] = 1.0;
        assert!((solve_small_qp(&p).unwrap() - dv(&[1.0, 2.0])).norm() < 1e-14);
    }

    #[test]
    fn infeasible_row_is_reported() {
        let p = problem(DMatrix::identity(1, 1), vec![Row { a: dv(&[1.0]), b: 5.0 }], 1.0);
        assert!(matches!(solve_small_qp(&p), Err(Error::Infeasible(_))));
    }

    #[test]
    fn weight_must_be_spd() {
        let k = ClassKappa::linear(1.0).unwrap();
        assert!(FilterConfig::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), k, FilterMode::Base).is_err());
        assert!(FilterConfig::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]), k, FilterMode::Base).is_err());
        assert!(FilterConfig::identity(2, k, FilterMode::Pb).is_ok());
    }

    #[test]
    fn status_codes() {
        assert_eq!(QpStatus::Bypass.code(), 0);
        assert_eq!(QpStatus::Inactive.code(), 0);
        assert_eq!(QpStatus::Solved.code(), 1);
        assert_eq!(QpStatus::Infeasible.code(), 2);
    }

    #[test]
    fn ball_projection_respects_halfspace() {
        // Closest point to (2, 0) in the unit disc with u2 >= 0.5.
        let p = dv(&[2.0, 0.0]);
        let u = project_ball_halfspaces(&p, 1.0, &[Row { a: dv(&[0.0, 1.0]), b: 0.5 }]);
        let expected = dv(&[0.75f64.sqrt(), 0.5]);
        assert!((u - expected).norm() < 1e-12);
    }

    #[test]
    fn subset_enumeration_counts() {
        assert_eq!(subsets(5, 2).len(), 1 + 5 + 10);
        assert_eq!(subsets(2, 3).len(), 4);
    }
}
