//! Dense factorizations on `ndarray` matrices, backed by `nalgebra`.
//!
//! Triangular solves are done here directly on the ndarray side; they are
//! `O(D²k)` with small `k` and need no blocking.

use nalgebra::DMatrix;
use ndarray::{s, Array2, ArrayView2};

fn to_na(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Lower Cholesky factor of a symmetric positive-definite matrix, or `None`.
pub(crate) fn cholesky_lower(a: ArrayView2<f64>) -> Option<Array2<f64>> {
    nalgebra::Cholesky::new(to_na(a)).map(|c| from_na(&c.l()))
}

/// Eigenvalues and orthonormal eigenvectors (as columns) of a symmetric
/// matrix, in the solver's native order.
pub(crate) fn symmetric_eigen(a: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
    let eig = nalgebra::SymmetricEigen::new(to_na(a));
    (eig.eigenvalues.iter().copied().collect(), from_na(&eig.eigenvectors))
}

/// Thin QR: `q` is `m × min(m, n)` with orthonormal columns, `r` upper triangular.
pub(crate) fn thin_qr(a: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let qr = nalgebra::QR::new(to_na(a));
    (from_na(&qr.q()), from_na(&qr.r()))
}

/// Orthogonal `Q` maximizing `tr(Qᵀ M)` for square `M` (Procrustes): `U Vᵀ`
/// from the SVD `M = U Σ Vᵀ`.
pub(crate) fn procrustes(m: ArrayView2<f64>) -> Array2<f64> {
    let svd = nalgebra::SVD::new(to_na(m), true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    from_na(&(u * v_t))
}

/// Solves `L X = B` for lower-triangular `L` by forward substitution.
pub(crate) fn solve_lower(l: &Array2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let dim = l.nrows();
    let mut x = b.as_standard_layout().into_owned();
    for i in 0..dim {
        let left = l.slice(s![i, ..i]);
        let correction = left.dot(&x.slice(s![..i, ..]));
        let pivot = l[[i, i]];
        let mut row = x.row_mut(i);
        row -= &correction;
        row /= pivot;
    }
    x
}

/// Solves `Lᵀ X = B` for lower-triangular `L` by back-substitution.
pub(crate) fn solve_lower_transposed(l: &Array2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let dim = l.nrows();
    let mut x = b.as_standard_layout().into_owned();
    for i in (0..dim).rev() {
        let below = l.slice(s![i + 1.., i]);
        let correction = below.dot(&x.slice(s![i + 1.., ..]));
        let pivot = l[[i, i]];
        let mut row = x.row_mut(i);
        row -= &correction;
        row /= pivot;
    }
    x
}
