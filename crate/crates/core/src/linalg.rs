//! Dense symmetric eigen-solving on top of `nalgebra`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Absolute cutoff below which an eigenvalue counts as zero.
pub const ZERO_EIGENVALUE_TOL: f64 = 1e-10;

/// Relative floor for positive-definiteness: `min > PD_REL_TOL * max`.
pub const PD_REL_TOL: f64 = 1e-10;

/// Eigenpairs of a real symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: DMatrix<f64>,
}

fn check_input(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::numeric(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("matrix contains non-finite entries"));
    }
    Ok(())
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let n = m.nrows();
    (0..n).all(|i| (i + 1..n).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SymEigen> {
    check_input(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(SymEigen {
            values: Vec::new(),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig =
        SymmetricEigen::try_new(m.clone(), f64::EPSILON, 1000 * n.max(10)).ok_or_else(|| {
            Error::numeric(format!("symmetric eigensolver did not converge ({n}x{n})"))
        })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SymEigen { values, vectors })
}

/// Eigenvalues only, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_input(m)?;
    let mut values: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(
            "eigensolver produced non-finite eigenvalues",
        ));
    }
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Symmetric square root `V diag(sqrt(l)) V^T` of a positive-definite matrix.
pub fn spd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m)?;
    check_positive_definite(&eig.values)?;
    let n = m.nrows();
    let mut scaled = eig.vectors.clone();
    for (c, &l) in eig.values.iter().enumerate() {
        let s = l.sqrt();
        scaled.column_mut(c).scale_mut(s);
    }
    let root = &scaled * eig.vectors.transpose();
    Ok(symmetrize(root, n))
}

/// Reject spectra whose smallest eigenvalue is not above `PD_REL_TOL * max`.
pub fn check_positive_definite(ascending: &[f64]) -> Result<()> {
    let (Some(&min), Some(&max)) = (ascending.first(), ascending.last()) else {
        return Err(Error::numeric("empty spectrum"));
    };
    if max <= 0.0 || min <= PD_REL_TOL * max {
        return Err(Error::numeric(format!(
            "matrix is not positive definite: eigenvalue {min:.6e} <= {PD_REL_TOL:e} x largest ({max:.6e})"
        )));
    }
    Ok(())
}

fn symmetrize(mut m: DMatrix<f64>, n: usize) -> DMatrix<f64> {
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

/// `sum_i values[i] * v_i v_i^T` over the selected eigenpairs.
pub fn projector_sum(eig: &SymEigen, indices: impl IntoIterator<Item = usize>) -> DMatrix<f64> {
    let n = eig.vectors.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in indices {
        let v = eig.vectors.column(i);
        out.ger(eig.values[i], &v, &v, 1.0);
    }
    out
}
