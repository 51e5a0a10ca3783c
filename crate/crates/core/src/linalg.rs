//! Dense helpers shared by the reduction and the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::scalar::{lit, Scalar};

/// Cholesky factor `L` (lower) of a symmetric matrix, or the index of the
/// first pivot that is not safely positive relative to its diagonal entry.
pub(crate) fn cholesky_checked<T: Scalar>(a: &DMatrix<T>, rel_tol: T) -> Result<DMatrix<T>, usize> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > rel_tol * a[(j, j)].abs()) || !d.is_finite() {
            return Err(j);
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// `A⁻¹` from its Cholesky factor.
pub(crate) fn cholesky_inverse<T: Scalar>(l: &DMatrix<T>) -> DMatrix<T> {
    let n = l.nrows();
    let linv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("factor has a positive diagonal");
    linv.transpose() * linv
}

/// Eigen-decomposition with eigenvalues sorted ascending.
pub(crate) fn sym_eigen_sorted<T: Scalar>(a: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let sym = (a + a.transpose()) * lit::<T>(0.5);
    let eig = SymmetricEigen::new(sym);
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .partial_cmp(&eig.eigenvalues[j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Pseudoinverse of a symmetric PSD matrix keeping only its `rank` largest
/// eigenvalues.
pub(crate) fn pinv_sym_rank<T: Scalar>(a: &DMatrix<T>, rank: usize) -> DMatrix<T> {
    let n = a.nrows();
    let (vals, vecs) = sym_eigen_sorted(a);
    let mut out = DMatrix::zeros(n, n);
    for k in n.saturating_sub(rank)..n {
        if vals[k] > T::zero() {
            let v = vecs.column(k);
            out += v * v.transpose() / vals[k];
        }
    }
    out
}
