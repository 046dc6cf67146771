//! Central finite differences shared by linearization and the barrier
//! second-derivative machinery.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_finite, Result};

/// Perturbation used for component `i`: `1e-6 * max(1, |x_i|)`.
pub fn step_size(xi: f64) -> f64 {
    1e-6 * xi.abs().max(1.0)
}

/// Jacobian of a vector-valued map by central differences.
pub fn jacobian<F>(fun: F, x: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut columns = Vec::with_capacity(n);
    for (i, dx) in perturbations(x) {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[i] += dx;
        minus[i] -= dx;
        let col = (fun(&plus)? - fun(&minus)?) / (2.0 * dx);
        check_finite(col.as_slice(), "finite-difference jacobian")?;
        columns.push(col);
    }
    let rows = columns.first().map_or(0, DVector::len);
    Ok(DMatrix::from_fn(rows, n, |r, c| columns[c][r]))
}

/// Partial derivatives of a matrix-valued map, one matrix per state component.
pub fn matrix_partials<F>(fun: F, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>>
where
    F: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    perturbations(x)
        .map(|(i, dx)| {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[i] += dx;
            minus[i] -= dx;
            let d = (fun(&plus)? - fun(&minus)?) / (2.0 * dx);
            check_finite(d.as_slice(), "finite-difference matrix partial")?;
            Ok(d)
        })
        .collect()
}

/// Gradient of a scalar field by central differences.
pub fn gradient<F>(fun: F, x: &DVector<f64>) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let mut grad = DVector::zeros(x.len());
    for (i, dx) in perturbations(x) {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[i] += dx;
        minus[i] -= dx;
        grad[i] = (fun(&plus)? - fun(&minus)?) / (2.0 * dx);
    }
    check_finite(grad.as_slice(), "finite-difference gradient")?;
    Ok(grad)
}

fn perturbations(x: &DVector<f64>) -> impl Iterator<Item = (usize, f64)> + '_ {
    x.iter().enumerate().map(|(i, &xi)| (i, step_size(xi)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobian_of_quadratic_map() {
        let x = DVector::from_column_slice(&[1.5, -2.0]);
        let jac = jacobian(|x| Ok(DVector::from_column_slice(&[x[0] * x[1], x[0] * x[0]])), &x).unwrap();
        assert!((jac[(0, 0)] + 2.0).abs() < 1e-8);
        assert!((jac[(0, 1)] - 1.5).abs() < 1e-8);
        assert!((jac[(1, 0)] - 3.0).abs() < 1e-8);
        assert!(jac[(1, 1)].abs() < 1e-8);
    }

    #[test]
    fn gradient_of_sine() {
        let x = DVector::from_column_slice(&[0.3]);
        let g = gradient(|x| Ok(x[0].sin()), &x).unwrap();
        assert!((g[0] - 0.3f64.cos()).abs() < 1e-9);
    }
}
