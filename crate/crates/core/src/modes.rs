//! Market, group and random components of a correlation matrix.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::correlation::CorrelationMatrix;
use crate::ensembles::mp_bounds;
use crate::error::{Error, Result};
use crate::linalg::{self, SymEigen};
use crate::output;

/// Eigenpairs sorted by descending eigenvalue.
///
/// Each eigenvector is signed so that its largest-magnitude entry is positive
/// (first such entry on ties).
#[derive(Debug, Clone)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl Eigenpairs {
    fn as_sym(&self) -> SymEigen {
        SymEigen {
            values: self.values.clone(),
            vectors: self.vectors.clone(),
        }
    }
}

pub fn eigendecompose_matrix(c: &DMatrix<f64>) -> Result<Eigenpairs> {
    if !linalg::is_symmetric(c, 1e-12) {
        return Err(Error::param("matrix is not symmetric"));
    }
    let eig = linalg::sym_eigen(c)?;
    let n = c.nrows();
    let mut values = Vec::with_capacity(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, src) in (0..n).rev().enumerate() {
        values.push(eig.values[src]);
        let mut v = eig.vectors.column(src).into_owned();
        let mut pivot = 0;
        for i in 1..n {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(dst, &v);
    }
    Ok(Eigenpairs { values, vectors })
}

pub fn eigendecompose(c: &CorrelationMatrix) -> Result<Eigenpairs> {
    eigendecompose_matrix(&c.c)
}

#[derive(Debug, Clone)]
pub struct ModeDecomposition {
    pub market: DMatrix<f64>,
    pub group: DMatrix<f64>,
    pub random: DMatrix<f64>,
    pub n_group: usize,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

/// `C^M = l_1 a_1 a_1^T`, `C^G = sum_{i=2..N_G}`, `C^R = sum_{i=N_G+1..N}` (1-based).
pub fn decompose_modes(c: &CorrelationMatrix, n_group: usize) -> Result<ModeDecomposition> {
    let n = c.dim();
    if n_group < 1 || n_group >= n {
        return Err(Error::param(format!(
            "n_group must satisfy 1 <= N_G < N = {n}, got {n_group}"
        )));
    }
    let pairs = eigendecompose(c)?;
    let sym = pairs.as_sym();
    Ok(ModeDecomposition {
        market: linalg::projector_sum(&sym, 0..1),
        group: linalg::projector_sum(&sym, 1..n_group),
        random: linalg::projector_sum(&sym, n_group..n),
        n_group,
        eigenvalues: pairs.values,
        eigenvectors: pairs.vectors,
    })
}

/// Eigenvalues above the Marchenko-Pastur edge for `q`, minus the market mode, at least 1.
pub fn suggest_n_group(eigenvalues: &[f64], q: f64) -> usize {
    let (_, edge) = mp_bounds(q, 1.0);
    let above = eigenvalues.iter().filter(|&&l| l > edge).count();
    above.saturating_sub(1).max(1)
}

/// Mean `|m_ij|` over off-diagonal pairs inside the same block divided by the
/// mean over pairs in different blocks. `blocks` are consecutive sizes.
pub fn block_contrast(m: &DMatrix<f64>, blocks: &[usize]) -> Result<f64> {
    let n = m.nrows();
    if blocks.iter().sum::<usize>() != n || blocks.len() < 2 {
        return Err(Error::param(format!(
            "need at least two blocks whose sizes sum to {n}"
        )));
    }
    let mut owner = Vec::with_capacity(n);
    for (b, &size) in blocks.iter().enumerate() {
        owner.extend(std::iter::repeat_n(b, size));
    }
    let (mut within, mut n_within, mut across, mut n_across) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            if owner[i] == owner[j] {
                within += m[(i, j)].abs();
                n_within += 1;
            } else {
                across += m[(i, j)].abs();
                n_across += 1;
            }
        }
    }
    if n_within == 0 {
        return Err(Error::param("blocks have no within-block pairs"));
    }
    Ok((within / n_within as f64) / (across / n_across as f64))
}

#[derive(Serialize)]
struct Ladder<'a> {
    eigenvalues: &'a [f64],
    n_group: usize,
    market: f64,
    group: &'a [f64],
    random: &'a [f64],
}

impl ModeDecomposition {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.market + &self.group + &self.random
    }

    /// Writes `market.csv`, `group.csv`, `random.csv` and `ladder.json` into `dir`.
    pub fn export(&self, dir: &Path, labels: &[String]) -> Result<()> {
        output::write_matrix_csv(&dir.join("market.csv"), &self.market, labels)?;
        output::write_matrix_csv(&dir.join("group.csv"), &self.group, labels)?;
        output::write_matrix_csv(&dir.join("random.csv"), &self.random, labels)?;
        let ladder = Ladder {
            eigenvalues: &self.eigenvalues,
            n_group: self.n_group,
            market: self.eigenvalues[0],
            group: &self.eigenvalues[1..self.n_group],
            random: &self.eigenvalues[self.n_group..],
        };
        output::write_json(&dir.join("ladder.json"), &ladder)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::CorrelationTarget;

    fn corr(m: DMatrix<f64>) -> CorrelationMatrix {
        let n = m.nrows();
        CorrelationMatrix::new(m, 0, 100, (0..n).map(|i| format!("a{i}")).collect()).unwrap()
    }

    #[test]
    fn identity_spectrum() {
        let pairs = eigendecompose(&corr(DMatrix::identity(5, 5))).unwrap();
        assert!(pairs.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn constant_spectrum() {
        let c = corr(CorrelationTarget::constant(4, 0.5).unwrap().zeta().clone());
        let pairs = eigendecompose(&c).unwrap();
        let expected = [2.5, 0.5, 0.5, 0.5];
        for (a, b) in pairs.values.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        // Degenerate eigenvalues: only component matrices are asserted.
        let d = decompose_modes(&c, 2).unwrap();
        assert!((d.reconstruct() - &c.c).amax() < 1e-12);
        let market_expected = DMatrix::from_element(4, 4, 2.5 / 4.0);
        assert!((&d.market - market_expected).amax() < 1e-12);
    }

    #[test]
    fn sign_convention() {
        let c = corr(DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 1.0]));
        let pairs = eigendecompose(&c).unwrap();
        for k in 0..2 {
            let col = pairs.vectors.column(k);
            let pivot = col.iamax();
            assert!(col[pivot] > 0.0);
        }
    }

    #[test]
    fn single_group_mode_is_zero() {
        let c = corr(CorrelationTarget::constant(5, 0.2).unwrap().zeta().clone());
        let d = decompose_modes(&c, 1).unwrap();
        assert_eq!(d.group.amax(), 0.0);
    }

    #[test]
    fn n_group_range() {
        let c = corr(DMatrix::identity(4, 4));
        assert!(matches!(decompose_modes(&c, 0), Err(Error::Parameter(_))));
        assert!(matches!(decompose_modes(&c, 4), Err(Error::Parameter(_))));
    }

    #[test]
    fn n_group_suggestions() {
        assert_eq!(suggest_n_group(&[1.2, 1.0, 0.8], 10.0), 1);
        assert_eq!(suggest_n_group(&[2.5, 0.5, 0.5, 0.5], 10.0), 1);
        assert_eq!(suggest_n_group(&[9.0, 3.0, 2.0, 1.0, 0.5], 10.0), 2);
    }

    #[test]
    fn export_writes_files() {
        let c = corr(CorrelationTarget::constant(3, 0.2).unwrap().zeta().clone());
        let d = decompose_modes(&c, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.export(dir.path(), &c.asset_ids).unwrap();
        for f in ["market.csv", "group.csv", "random.csv", "ladder.json"] {
            assert!(dir.path().join(f).exists());
        }
    }

    #[test]
    fn block_contrast_of_ideal_blocks() {
        let mut m = DMatrix::from_element(4, 4, 0.1);
        for (i, j) in [(0, 1), (1, 0), (2, 3), (3, 2)] {
            m[(i, j)] = 0.5;
        }
        m.fill_diagonal(1.0);
        assert!((block_contrast(&m, &[2, 2]).unwrap() - 5.0).abs() < 1e-12);
        assert!(block_contrast(&m, &[4]).is_err());
        assert!(block_contrast(&m, &[2, 1]).is_err());
    }
}
