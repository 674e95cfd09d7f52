//! Dense symmetric helpers shared by diagnostics, solver and checks.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(a.clone()).ok_or(Error::NotPositiveDefinite)
}

/// `v^T A^{-1} v` through a Cholesky solve.
pub fn inv_quad(chol: &Cholesky<f64, Dyn>, v: &DVector<f64>) -> f64 {
    let x = chol.solve(v);
    v.dot(&x).max(0.0)
}

/// `v^T A v`.
pub fn quad(a: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(a * v))
}

/// Largest `mu` with `A x = mu B x`, for symmetric `A` and positive-definite `B`.
///
/// Evaluated as `1 + mu_max(L^{-1} (A - B) L^{-T})` with `B = L L^T`, which is exact when
/// `A == B` and loses less accuracy when the two are close.
pub fn max_generalized_eigenvalue(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky(b)?;
    let l = chol.l();
    let n = a.nrows();
    let mut y = a - b;
    if !l.solve_lower_triangular_mut(&mut y) {
        return Err(Error::NotPositiveDefinite);
    }
    let mut m = y.transpose();
    if !l.solve_lower_triangular_mut(&mut m) {
        return Err(Error::NotPositiveDefinite);
    }
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    Ok(1.0
        + (0..n)
            .map(|i| eig.eigenvalues[i])
            .fold(f64::NEG_INFINITY, f64::max))
}

/// Eigendecomposition of a fixed symmetric PSD matrix, reused for every ridge shift.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let sym = (a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        Spectrum {
            values: eig.eigenvalues.map(|v| v.max(0.0)),
            vectors: eig.eigenvectors,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `||(A + shift I)^{-1/2} v||^2`.
    pub fn inv_norm_sq(&self, v: &DVector<f64>, shift: f64) -> f64 {
        let c = self.vectors.tr_mul(v);
        c.iter()
            .zip(self.values.iter())
            .map(|(ci, ei)| ci * ci / (ei + shift))
            .sum()
    }

    /// `Tr(A (A + shift I)^{-1})`.
    pub fn effective_dimension(&self, shift: f64) -> f64 {
        self.values.iter().map(|e| e / (e + shift)).sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generalized_eigenvalue_of_scaled_matrix() {
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let a = &b * 3.0;
        let mu = max_generalized_eigenvalue(&a, &b).unwrap();
        assert!((mu - 3.0).abs() < 1e-12);
    }

    #[test]
    fn generalized_eigenvalue_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 8.0, 3.0]));
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert!((max_generalized_eigenvalue(&a, &b).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn identical_matrices_give_exactly_one() {
        let a = DMatrix::from_row_slice(2, 2, &[1e-6, 2e-7, 2e-7, 5.0]);
        assert_eq!(max_generalized_eigenvalue(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn singular_denominator_is_rejected() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::zeros(2, 2);
        assert_eq!(
            max_generalized_eigenvalue(&a, &b),
            Err(Error::NotPositiveDefinite)
        );
    }

    #[test]
    fn spectrum_norm_matches_cholesky() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 0.5]);
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let s = Spectrum::new(&a);
        let shifted = &a + DMatrix::identity(3, 3) * 0.25;
        let chol = cholesky(&shifted).unwrap();
        assert!((s.inv_norm_sq(&v, 0.25) - inv_quad(&chol, &v)).abs() < 1e-12);
        let trace = (&a * shifted.try_inverse().unwrap()).trace();
        assert!((s.effective_dimension(0.25) - trace).abs() < 1e-12);
    }
}
