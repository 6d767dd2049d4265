//! Small dense solvers shared by the regression and polynomial code.

use nalgebra::{DMatrix, DVector};

use crate::error::{GapFillError, Result};

/// Solves `a x = b` for symmetric positive definite `a` (row-major, `n × n`)
/// by Cholesky factorisation. A pivot below `1e-12 · max(diag)` is treated
/// as singular.
pub(crate) fn cholesky_solve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    let tol = 1e-12 * max_diag.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= tol || !sum.is_finite() {
                    return Err(GapFillError::SingularSystem);
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    Ok(x)
}

/// Minimum-norm least-squares solution of `x β ≈ y` via SVD.
pub(crate) fn lstsq_min_norm(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = x.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = max_sv * 1e-12 * (x.nrows().max(x.ncols()) as f64);
    svd.solve(y, eps.max(f64::MIN_POSITIVE)).map_err(|_| GapFillError::SingularSystem)
}

/// Least-squares polynomial coefficients (ascending powers) of degree
/// `degree` through `(x, y)`. Callers are expected to pass well-scaled `x`.
pub(crate) fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>> {
    let cols = degree + 1;
    let design = DMatrix::from_fn(x.len(), cols, |r, c| x[r].powi(c as i32));
    let rhs = DVector::from_column_slice(y);
    let coef = lstsq_min_norm(&design, &rhs)?;
    Ok(coef.iter().copied().collect())
}

/// Horner evaluation of ascending-power coefficients.
pub(crate) fn polyval(coef: &[f64], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Ordinary least-squares line `(intercept, slope)`; a single point gives slope 0.
pub(crate) fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return (my, 0.0);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_small_system() {
        // [[4,2],[2,3]] x = [2,1] -> x = [0.5, 0]
        let x = cholesky_solve(&[4.0, 2.0, 2.0, 3.0], &[2.0, 1.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-14 && x[1].abs() < 1e-14);
    }

    #[test]
    fn cholesky_detects_singular() {
        assert!(matches!(cholesky_solve(&[1.0, 1.0, 1.0, 1.0], &[1.0, 1.0]), Err(GapFillError::SingularSystem)));
    }

    #[test]
    fn polyfit_reproduces_parabola() {
        let x = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v * v - v + 2.0).collect();
        let c = polyfit(&x, &y, 2).unwrap();
        assert!((c[0] - 2.0).abs() < 1e-12);
        assert!((c[1] + 1.0).abs() < 1e-12);
        assert!((c[2] - 3.0).abs() < 1e-12);
        assert!((polyval(&c, 0.25) - (3.0 * 0.0625 - 0.25 + 2.0)).abs() < 1e-12);
    }
}
