//! Central finite differences and eigenvalue-floor SPD repair.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Value, gradient and Hessian of a scalar function from one central stencil.
#[derive(Debug, Clone)]
pub struct FdDerivatives {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub evaluations: usize,
}

fn checked(v: f64, coord: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation(format!(
            "finite-difference stencil value {v} along coordinate {coord}"
        )))
    }
}

/// Central differences with per-coordinate step `h * (1 + |x_i|)`.
///
/// Off-diagonal terms reuse the axis evaluations:
/// `H_ij = [f(+i+j) - f(+i) - f(+j) + 2 f0 - f(-i) - f(-j) + f(-i-j)] / (2 h_i h_j)`,
/// which is second-order accurate and needs two extra evaluations per pair.
pub fn fd_derivatives<F>(mut f: F, x: &[f64], h: f64) -> Result<FdDerivatives>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x.len();
    let steps: Vec<f64> = x.iter().map(|xi| h * (1.0 + xi.abs())).collect();
    let mut point = x.to_vec();
    let f0 = checked(f(&point), 0)?;
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    for i in 0..n {
        point[i] = x[i] + steps[i];
        plus[i] = checked(f(&point), i)?;
        point[i] = x[i] - steps[i];
        minus[i] = checked(f(&point), i)?;
        point[i] = x[i];
    }
    let mut hess = DMatrix::zeros(n, n);
    let mut grad = DVector::zeros(n);
    for i in 0..n {
        grad[i] = (plus[i] - minus[i]) / (2.0 * steps[i]);
        hess[(i, i)] = (plus[i] - 2.0 * f0 + minus[i]) / (steps[i] * steps[i]);
    }
    for i in 0..n {
        for j in 0..i {
            point[i] = x[i] + steps[i];
            point[j] = x[j] + steps[j];
            let fpp = checked(f(&point), i)?;
            point[i] = x[i] - steps[i];
            point[j] = x[j] - steps[j];
            let fmm = checked(f(&point), i)?;
            point[i] = x[i];
            point[j] = x[j];
            let v = (fpp - plus[i] - plus[j] + 2.0 * f0 - minus[i] - minus[j] + fmm)
                / (2.0 * steps[i] * steps[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(FdDerivatives {
        value: f0,
        gradient: grad,
        hessian: hess,
        evaluations: 1 + 2 * n + n * n.saturating_sub(1),
    })
}

/// Hessian of `f` at `x` by central second differences.
pub fn finite_diff_hessian<F>(f: F, x: &[f64], h: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    Ok(fd_derivatives(f, x, h)?.hessian)
}

/// Symmetrizes `m` and raises every eigenvalue below `floor` to `floor`.
///
/// Returns the repaired matrix and the number of floored eigenvalues. A
/// matrix whose eigenvalues already clear the floor is returned symmetrized
/// but otherwise untouched.
pub fn spd_repair(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, usize) {
    let sym = (m + m.transpose()) * 0.5;
    if sym.nrows() == 0 {
        return (sym, 0);
    }
    let eig = sym.clone().symmetric_eigen();
    let floored = eig.eigenvalues.iter().filter(|&&v| !(v >= floor)).count();
    if floored == 0 {
        return (sym, 0);
    }
    let vals = eig.eigenvalues.map(|v| if v >= floor { v } else { floor });
    let q = &eig.eigenvectors;
    let rebuilt = q * DMatrix::from_diagonal(&vals) * q.transpose();
    ((&rebuilt + rebuilt.transpose()) * 0.5, floored)
}

/// Inverse of an SPD matrix through its Cholesky factor, symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("cannot invert precision matrix".into()))?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}
