//! Small dense linear-algebra helpers shared across modules.
//!
//! Matrices are `nalgebra::DMatrix<f64>`, stored column-major, so
//! `m.as_slice()` is exactly `vec(m)` (columns stacked).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// `vec(m)`: columns stacked into one vector.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of `vec`, for an `rows × cols` matrix.
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sym_eigen_sorted(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension(format!(
            "eigendecomposition of a non-square {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Decomposition("matrix has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Cholesky factorisation, reporting the smallest eigenvalue on failure.
pub fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite {
        min_eigenvalue: min_eigenvalue(m),
    })
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut inv = cholesky(m)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky(m)?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// General inverse via LU; errors if the matrix is numerically singular.
pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let lu = m.clone().lu();
    let det = lu.determinant();
    if !det.is_finite() || det.abs() <= 1e-14 * scale.powi(m.nrows() as i32) {
        return Err(Error::Singular(what.to_string()));
    }
    lu.try_inverse()
        .ok_or_else(|| Error::Singular(what.to_string()))
}

/// Geometric mean of strictly positive values.
pub fn geometric_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut count = 0usize;
    let mut acc = 0.0;
    for v in values {
        acc += v.ln();
        count += 1;
    }
    (acc / count as f64).exp()
}

/// Relative Frobenius distance `‖a − b‖ / max(‖b‖, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Numerical column rank from the singular values of `x`.
pub fn column_rank(x: &DMatrix<f64>) -> usize {
    let svd = x.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let tol = smax * (x.nrows().max(x.ncols()) as f64) * 1e-12;
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

/// Lower-triangular inverse of a lower-triangular matrix.
pub fn lower_triangular_inverse(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    l.clone()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Singular("triangular factor".into()))
}

/// Inverse of an upper-triangular matrix.
pub fn upper_triangular_inverse(u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = u.nrows();
    u.clone()
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Singular("triangular factor".into()))
}
