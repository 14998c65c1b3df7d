//! Dense and sparse matrices, reverse-mode gradients and the Adam optimiser.

mod adam;
mod matrix;
mod sparse;
mod tape;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use matrix::Matrix;
pub use sparse::SparseMatrix;
pub use tape::{GradientTape, Var};

pub(crate) use tape::standardize_columns;

use crate::error::{Error, Result};

/// Central-difference estimate of the gradient of a scalar function.
pub fn finite_difference_gradient(mut f: impl FnMut(&Matrix) -> f64, x: &Matrix, eps: f64) -> Result<Matrix> {
    if !(eps > 0.0) {
        return Err(Error::Param(format!(
            "finite difference step must be positive, got {eps}"
        )));
    }
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for idx in 0..x.len() {
        let orig = probe.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + eps;
        let up = f(&probe);
        probe.as_mut_slice()[idx] = orig - eps;
        let down = f(&probe);
        probe.as_mut_slice()[idx] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("function value near entry {idx}")));
        }
        grad.as_mut_slice()[idx] = (up - down) / (2.0 * eps);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_difference_gradient(|x| x[(0, 0)].powi(2), &Matrix::filled(1, 1, 3.0), 1e-5).unwrap();
        assert!((g[(0, 0)] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn sum_gives_ones() {
        let x = Matrix::from_fn(3, 2, |i, j| i as f64 - 2.0 * j as f64);
        let g = finite_difference_gradient(|x| x.sum(), &x, 1e-5).unwrap();
        for v in g.as_slice() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn product_of_two_entries() {
        let x = Matrix::row_vector(&[2.0, 5.0]);
        let g = finite_difference_gradient(|x| x[(0, 0)] * x[(0, 1)], &x, 1e-5).unwrap();
        assert!((g[(0, 0)] - 5.0).abs() < 1e-7);
        assert!((g[(0, 1)] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn non_finite_evaluation_is_an_error() {
        let x = Matrix::filled(1, 1, 0.0);
        assert!(finite_difference_gradient(|x| 1.0 / x[(0, 0)].abs().min(0.0), &x, 1e-5).is_err());
        assert!(finite_difference_gradient(|x| x.sum(), &x, 0.0).is_err());
    }
}
