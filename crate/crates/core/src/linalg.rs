//! Thin wrappers around nalgebra for the few dense factorizations the
//! workbench needs.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::error::{Error, Result};

pub(crate) fn to_nalgebra(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_row_iterator(m.nrows(), m.ncols(), m.iter().cloned())
}

pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted
/// descending. Returns `(values, vectors)` with eigenvectors as columns in
/// matching order.
pub(crate) fn sym_eigen_desc(m: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    if m.nrows() != m.ncols() {
        return Err(Error::Parameter(
            "eigendecomposition needs a square matrix".into(),
        ));
    }
    let eig = nalgebra::SymmetricEigen::new(to_nalgebra(m));
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "eigensolver returned non-finite eigenvalues".into(),
        ));
    }
    let vectors = Array2::from_shape_fn((n, n), |(i, j)| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}
