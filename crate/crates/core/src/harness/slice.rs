//! Two-dimensional slices of `h` and `h + delta_h` for contouring.

use nalgebra::DVector;
use serde::Serialize;

use crate::barrier::{h_dot, Barrier};
use crate::error::{Error, Result};
use crate::predictor::{compute_delta_h, PredictionPolicy};
use crate::system::AffineSystem;

/// Grid over state components `axes.0` (rows) and `axes.1` (columns),
/// other components fixed at `base`.
#[derive(Debug, Clone)]
pub struct SliceSpec {
    pub base: DVector<f64>,
    pub axes: (usize, usize),
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub dt: f64,
    pub t_max: f64,
}

/// `linspace(lo, hi, count)` including both ends.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceCell {
    pub first: f64,
    pub second: f64,
    pub h: f64,
    /// `h_dot` under the policy at the cell.
    pub rate: Option<f64>,
    /// Missing when the prediction failed or the state is outside the
    /// model domain.
    pub h_p: Option<f64>,
}

pub fn safe_set_slice(
    system: &dyn AffineSystem,
    barrier: &dyn Barrier,
    policy: &PredictionPolicy,
    spec: &SliceSpec,
) -> Result<Vec<SliceCell>> {
    let n = system.state_dim();
    if spec.base.len() != n || spec.axes.0 >= n || spec.axes.1 >= n || spec.axes.0 == spec.axes.1 {
        return Err(Error::Invalid(format!("slice axes {:?} do not fit a {n}-state model", spec.axes)));
    }
    let mut cells = Vec::with_capacity(spec.first.len() * spec.second.len());
    for &a in &spec.first {
        for &b in &spec.second {
            let mut x = spec.base.clone();
            x[spec.axes.0] = a;
            x[spec.axes.1] = b;
            let h = barrier.value(&x)?;
            let rate = policy.input(system, barrier, &x, None).and_then(|u0| h_dot(barrier, system, &x, &u0)).ok();
            let h_p = match compute_delta_h(system, barrier, policy, &x, spec.dt, spec.t_max) {
                Ok(p) => Some(h + p.delta_h),
                Err(Error::PolicyFailure { .. } | Error::Domain(_) | Error::Numerical { .. }) => None,
                Err(e) => return Err(e),
            };
            cells.push(SliceCell { first: a, second: b, h, rate, h_p });
        }
    }
    Ok(cells)
}

pub fn slice_to_csv(cells: &[SliceCell], names: (&str, &str)) -> String {
    let mut out = format!("{},{},h,hP,h_dot\n", names.0, names.1);
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.16e}")).unwrap_or_default();
    for c in cells {
        out.push_str(&format!("{:.16e},{:.16e},{:.16e},{},{}\n", c.first, c.second, c.h, opt(c.h_p), opt(c.rate)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::RadialBarrier;
    use crate::system::DoubleIntegratorPolar;

    #[test]
    fn linspace_ends() {
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(linspace(2.0, 5.0, 1), vec![2.0]);
        assert!(linspace(0.0, 1.0, 0).is_empty());
    }

    #[test]
    fn unreachable_stop_is_missing_data() {
        let sys = DoubleIntegratorPolar::new(1.0).unwrap();
        let barrier = RadialBarrier { radius: 1.0, mu: 1.5 };
        let spec = SliceSpec {
            base: DVector::from_column_slice(&[2.0, 0.0, 0.0, 0.0]),
            axes: (0, 2),
            first: vec![2.0],
            second: vec![-1.0, 1.0],
            dt: 1e-3,
            t_max: 0.5,
        };
        let cells = safe_set_slice(&sys, &barrier, &PredictionPolicy::NormBallGradient, &spec).unwrap();
        assert_eq!(cells[0].h_p, None);
        assert_eq!(cells[1].h_p, Some(cells[1].h));
        let csv = slice_to_csv(&cells, ("r", "v_r"));
        assert_eq!(csv.lines().nth(1).unwrap().split(',').nth(3), Some(""));
    }

    #[test]
    fn bad_axes_are_rejected() {
        let sys = DoubleIntegratorPolar::new(1.0).unwrap();
        let barrier = RadialBarrier { radius: 1.0, mu: 1.5 };
        let spec =
            SliceSpec { base: DVector::zeros(4), axes: (1, 1), first: vec![], second: vec![], dt: 1e-3, t_max: 1.0 };
        assert!(safe_set_slice(&sys, &barrier, &PredictionPolicy::NormBallGradient, &spec).is_err());
    }
}
