//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{dimension, domain, Result};

/// Column-major vectorization: `vec(m)[j * rows + i] = m[(i, j)]`.
///
/// This is the convention used for every parameter law in the crate.
pub fn vec_col_major(m: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra stores column-major, so the raw slice is already vec(m)
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// max |m - mᵀ| relative to max |m| (absolute when m is zero).
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    let diff = (m - m.transpose()).amax();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrize(m))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigen(m).eigenvalues.min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigen(m).eigenvalues.max()
}

/// Tolerance below which a negative eigenvalue is treated as roundoff.
pub fn psd_tolerance(m: &DMatrix<f64>) -> f64 {
    1e-10 * m.trace().abs().max(f64::MIN_POSITIVE)
}

/// Checks symmetry and positive semidefiniteness with the crate-wide
/// tolerances (asymmetry ≤ 1e-10 relative, λ_min ≥ -1e-10·trace).
pub fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(dimension(format!("{what} must be square")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(domain(format!("{what} has non-finite entries")));
    }
    if relative_asymmetry(m) > 1e-10 {
        return Err(domain(format!("{what} is not symmetric")));
    }
    let lmin = min_eigenvalue(m);
    if lmin < -psd_tolerance(m) {
        return Err(domain(format!(
            "{what} is not positive semidefinite (min eigenvalue {lmin:e})"
        )));
    }
    Ok(())
}

/// Symmetric factor `F` with `F Fᵀ = m`, from an eigendecomposition with
/// negative eigenvalues clipped to zero. Eigenvalues below `-1e-10·trace`
/// are rejected.
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m);
    let tol = psd_tolerance(m);
    let mut v = eig.eigenvectors;
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -tol {
            return Err(crate::error::numerical(format!(
                "covariance is indefinite (eigenvalue {lambda:e})"
            )));
        }
        let s = lambda.max(0.0).sqrt();
        v.column_mut(j).scale_mut(s);
    }
    Ok(v)
}

/// Principal square root of a PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_psd(m, "matrix")?;
    let eig = sym_eigen(m);
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// Moore–Penrose inverse of a symmetric PSD matrix; eigenvalues below
/// `rel_cutoff · λ_max` are treated as zero.
pub fn pinv_psd(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = sym_eigen(m);
    let lmax = eig.eigenvalues.max();
    let cutoff = rel_cutoff * lmax.max(0.0);
    let d = eig
        .eigenvalues
        .map(|l| if l > cutoff && l > 0.0 { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(dimension(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}
