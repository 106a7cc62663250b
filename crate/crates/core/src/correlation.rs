//! Log returns and equal-time Pearson correlation matrices over epochs.
//!
//! Epoch positions are 0-based: an epoch of length `M` ending at `tau`
//! covers return columns `tau + 1 - M ..= tau`. Means and variances use the
//! biased (divide-by-`M`) convention, so `C = Z Z^T` with
//! `Z[i][t] = (r_i(t) - <r_i>) / (sigma_i sqrt(M))`. Each row of `Z` sums to
//! zero, which gives `C` rank at most `M - 1`.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ingest::Sector;

/// Prices, one row per asset and one column per trading day.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub prices: DMatrix<f64>,
    pub asset_ids: Vec<String>,
    pub sectors: Vec<Sector>,
    pub dates: Vec<String>,
}

impl PricePanel {
    /// Validates positivity, strictly increasing dates and unique asset ids.
    pub fn new(prices: DMatrix<f64>, asset_ids: Vec<String>, dates: Vec<String>) -> Result<Self> {
        if prices.nrows() != asset_ids.len() || prices.ncols() != dates.len() {
            return Err(Error::param(format!(
                "price matrix is {}x{} but there are {} assets and {} dates",
                prices.nrows(),
                prices.ncols(),
                asset_ids.len(),
                dates.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &asset_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::data(format!("duplicate asset id `{id}`")));
            }
        }
        for w in dates.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::data(format!(
                    "dates not strictly increasing at `{}`",
                    w[1]
                )));
            }
        }
        for (i, id) in asset_ids.iter().enumerate() {
            for (t, d) in dates.iter().enumerate() {
                let p = prices[(i, t)];
                if !(p > 0.0 && p.is_finite()) {
                    return Err(Error::data(format!(
                        "non-positive price {p} for asset `{id}` on {d}"
                    )));
                }
            }
        }
        let sectors = vec![Sector::Other; asset_ids.len()];
        Ok(Self {
            prices,
            asset_ids,
            sectors,
            dates,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.prices.nrows()
    }

    pub fn n_dates(&self) -> usize {
        self.prices.ncols()
    }
}

/// Log returns, `N x T`, labelled by the date each return ends on.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMatrix {
    pub returns: DMatrix<f64>,
    pub asset_ids: Vec<String>,
    pub dates: Vec<String>,
}

impl ReturnMatrix {
    /// Wraps a raw return table with generated labels (`a0`.., `t0`..).
    pub fn from_matrix(returns: DMatrix<f64>) -> Result<Self> {
        if returns.iter().any(|x| !x.is_finite()) {
            return Err(Error::data("returns must be finite"));
        }
        let asset_ids = (0..returns.nrows()).map(|i| format!("a{i}")).collect();
        let dates = (0..returns.ncols()).map(|t| format!("t{t}")).collect();
        Ok(Self {
            returns,
            asset_ids,
            dates,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.returns.nrows()
    }

    pub fn n_days(&self) -> usize {
        self.returns.ncols()
    }
}

/// Equal-time correlation matrix of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub c: DMatrix<f64>,
    /// 0-based index of the last return day in the epoch.
    pub tau: usize,
    pub label: String,
    pub epoch_len: usize,
    pub asset_ids: Vec<String>,
}

impl CorrelationMatrix {
    /// Checks symmetry, unit diagonal and the `[-1, 1]` range.
    ///
    /// Positive semi-definiteness is not checked here.
    pub fn new(
        c: DMatrix<f64>,
        tau: usize,
        epoch_len: usize,
        asset_ids: Vec<String>,
    ) -> Result<Self> {
        let n = c.nrows();
        if !c.is_square() || asset_ids.len() != n {
            return Err(Error::param(
                "correlation matrix must be square with one id per row",
            ));
        }
        for i in 0..n {
            if c[(i, i)] != 1.0 {
                return Err(Error::data(format!(
                    "diagonal entry {i} is {} (expected 1)",
                    c[(i, i)]
                )));
            }
            for j in 0..n {
                let x = c[(i, j)];
                if !(-1.0..=1.0).contains(&x) {
                    return Err(Error::data(format!(
                        "entry ({i},{j}) = {x} outside [-1, 1]"
                    )));
                }
                if x != c[(j, i)] {
                    return Err(Error::data(format!("matrix not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self {
            c,
            tau,
            label: format!("{tau}"),
            epoch_len,
            asset_ids,
        })
    }

    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    /// Off-diagonal upper-triangle elements (`i < j`) in row order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        upper_triangle(&self.c)
    }

    /// Mean of the strictly upper-triangle elements.
    pub fn mean_offdiag(&self) -> f64 {
        let v = self.upper_triangle();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    /// Full matrix with a header row and header column of asset ids.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let e = |err| Error::io(path, err);
        write!(w, "asset").map_err(e)?;
        for id in &self.asset_ids {
            write!(w, ",{id}").map_err(e)?;
        }
        writeln!(w).map_err(e)?;
        for (i, id) in self.asset_ids.iter().enumerate() {
            write!(w, "{id}").map_err(e)?;
            for j in 0..self.dim() {
                write!(w, ",{}", self.c[(i, j)]).map_err(e)?;
            }
            writeln!(w).map_err(e)?;
        }
        w.flush().map_err(e)
    }
}

pub(crate) fn upper_triangle(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// `r_i(t) = ln P_i(t) - ln P_i(t-1)`.
pub fn log_returns(panel: &PricePanel) -> Result<ReturnMatrix> {
    let (n, cols) = panel.prices.shape();
    if cols < 2 {
        return Err(Error::data(
            "at least two dates are required to form returns",
        ));
    }
    let mut returns = DMatrix::zeros(n, cols - 1);
    for i in 0..n {
        for t in 0..cols {
            let p = panel.prices[(i, t)];
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::data(format!(
                    "non-positive price {p} for asset `{}` on {}",
                    panel.asset_ids[i], panel.dates[t]
                )));
            }
        }
        for t in 1..cols {
            returns[(i, t - 1)] = panel.prices[(i, t)].ln() - panel.prices[(i, t - 1)].ln();
        }
    }
    Ok(ReturnMatrix {
        returns,
        asset_ids: panel.asset_ids.clone(),
        dates: panel.dates[1..].to_vec(),
    })
}

/// Standardized epoch rows `Z` with `C = Z Z^T`.
pub(crate) fn standardized_window(
    data: &DMatrix<f64>,
    start: usize,
    len: usize,
    ids: Option<&[String]>,
) -> Result<DMatrix<f64>> {
    let n = data.nrows();
    let m = len as f64;
    let mut z = DMatrix::zeros(n, len);
    for i in 0..n {
        let row = data.view((i, start), (1, len));
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::data(format!(
                "non-finite return for asset {}",
                asset_name(ids, i)
            )));
        }
        let (lo, hi) = row
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
        let mean = row.iter().sum::<f64>() / m;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
        if lo == hi || var <= f64::MIN_POSITIVE {
            return Err(Error::Degenerate {
                asset: asset_name(ids, i),
                tau: None,
            });
        }
        let scale = 1.0 / (var * m).sqrt();
        for (t, x) in row.iter().enumerate() {
            z[(i, t)] = (x - mean) * scale;
        }
    }
    Ok(z)
}

fn asset_name(ids: Option<&[String]>, i: usize) -> String {
    ids.and_then(|ids| ids.get(i).cloned())
        .unwrap_or_else(|| format!("#{i}"))
}

/// `Z Z^T`, symmetrized, clamped to `[-1, 1]` with an exact unit diagonal.
pub(crate) fn gram_to_correlation(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = z * z.transpose();
    let n = c.nrows();
    for i in 0..n {
        c[(i, i)] = 1.0;
        for j in i + 1..n {
            let v = (0.5 * (c[(i, j)] + c[(j, i)])).clamp(-1.0, 1.0);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// Pearson correlation of all rows of `data` over the full column range.
pub fn pearson_matrix(data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if data.ncols() < 2 {
        return Err(Error::param("at least two observations are required"));
    }
    let z = standardized_window(data, 0, data.ncols(), None)?;
    Ok(gram_to_correlation(&z))
}

pub fn epoch_correlation(
    returns: &ReturnMatrix,
    tau: usize,
    epoch_len: usize,
) -> Result<CorrelationMatrix> {
    if epoch_len < 2 {
        return Err(Error::param(format!(
            "epoch length must be at least 2, got {epoch_len}"
        )));
    }
    if tau + 1 < epoch_len {
        return Err(Error::param(format!(
            "epoch of length {epoch_len} ending at {tau} starts before the first return"
        )));
    }
    if tau >= returns.n_days() {
        return Err(Error::param(format!(
            "epoch end {tau} beyond the last return index {}",
            returns.n_days().saturating_sub(1)
        )));
    }
    let start = tau + 1 - epoch_len;
    let z = standardized_window(&returns.returns, start, epoch_len, Some(&returns.asset_ids))
        .map_err(|e| e.at_epoch(tau))?;
    Ok(CorrelationMatrix {
        c: gram_to_correlation(&z),
        tau,
        label: returns
            .dates
            .get(tau)
            .cloned()
            .unwrap_or_else(|| tau.to_string()),
        epoch_len,
        asset_ids: returns.asset_ids.clone(),
    })
}

/// Epoch end positions `M-1, M-1+shift, ...` that fit inside `n_days`.
pub fn epoch_ends(n_days: usize, epoch_len: usize, shift: usize) -> Result<Vec<usize>> {
    if epoch_len < 2 {
        return Err(Error::param(format!(
            "epoch length must be at least 2, got {epoch_len}"
        )));
    }
    if shift == 0 {
        return Err(Error::param("epoch shift must be at least 1"));
    }
    if n_days < epoch_len {
        return Err(Error::param(format!(
            "series of {n_days} days is shorter than the epoch length {epoch_len}"
        )));
    }
    Ok((epoch_len - 1..n_days).step_by(shift).collect())
}

/// One correlation matrix per epoch, ordered by epoch end.
pub fn rolling_correlations(
    returns: &ReturnMatrix,
    epoch_len: usize,
    shift: usize,
) -> Result<Vec<CorrelationMatrix>> {
    use rayon::prelude::*;
    let ends = epoch_ends(returns.n_days(), epoch_len, shift)?;
    ends.par_iter()
        .map(|&tau| epoch_correlation(returns, tau, epoch_len))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use proptest::prelude::*;

    fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
        let m = x.len() as f64;
        let mx = x.iter().sum::<f64>() / m;
        let my = y.iter().sum::<f64>() / m;
        let mxy = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / m;
        let sx = (x.iter().map(|a| a * a).sum::<f64>() / m - mx * mx).sqrt();
        let sy = (y.iter().map(|a| a * a).sum::<f64>() / m - my * my).sqrt();
        (mxy - mx * my) / (sx * sy)
    }

    fn returns_of(rows: &[&[f64]]) -> ReturnMatrix {
        let n = rows.len();
        let t = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ReturnMatrix::from_matrix(DMatrix::from_row_slice(n, t, &flat)).unwrap()
    }

    #[test]
    fn constant_prices_give_zero_returns() {
        let p = PricePanel::new(
            DMatrix::from_row_slice(1, 3, &[5.0, 5.0, 5.0]),
            vec!["A".into()],
            vec!["d1".into(), "d2".into(), "d3".into()],
        )
        .unwrap();
        let r = log_returns(&p).unwrap();
        assert_eq!(r.returns.ncols(), 2);
        assert!(r.returns.iter().all(|&x| x == 0.0));
        assert_eq!(r.dates, vec!["d2".to_string(), "d3".to_string()]);
    }

    #[test]
    fn single_step_return() {
        let p = PricePanel::new(
            DMatrix::from_row_slice(1, 2, &[100.0, 110.0]),
            vec!["A".into()],
            vec!["d1".into(), "d2".into()],
        )
        .unwrap();
        let r = log_returns(&p).unwrap();
        assert!((r.returns[(0, 0)] - 0.095_310_179_804_324_87).abs() < 1e-12);
    }

    #[test]
    fn zero_price_rejected() {
        let err = PricePanel::new(
            DMatrix::from_row_slice(1, 2, &[100.0, 0.0]),
            vec!["A".into()],
            vec!["d1".into(), "d2".into()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        // Bypassing the constructor still hits the check in log_returns.
        let panel = PricePanel {
            prices: DMatrix::from_row_slice(1, 2, &[100.0, 0.0]),
            asset_ids: vec!["A".into()],
            sectors: vec![Sector::Other],
            dates: vec!["d1".into(), "d2".into()],
        };
        let err = log_returns(&panel).unwrap_err().to_string();
        assert!(err.contains("`A`") && err.contains("d2"), "{err}");
    }

    #[test]
    fn duplicate_and_anti_rows() {
        let x = [0.01, -0.02, 0.03, 0.005, -0.01];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let r = returns_of(&[&x, &x, &neg]);
        let c = epoch_correlation(&r, 4, 5).unwrap();
        assert!((c.c[(0, 1)] - 1.0).abs() < 1e-12);
        assert!((c.c[(0, 2)] + 1.0).abs() < 1e-12);
        assert_eq!(c.c[(1, 1)], 1.0);
    }

    #[test]
    fn small_table_matches_brute_force() {
        let a = [0.012, -0.004, 0.021, -0.013];
        let b = [0.003, 0.008, -0.011, 0.002];
        let c = [-0.02, 0.015, 0.001, 0.009];
        let r = returns_of(&[&a, &b, &c]);
        let cm = epoch_correlation(&r, 3, 4).unwrap();
        let rows = [&a, &b, &c];
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j {
                    1.0
                } else {
                    brute_pearson(rows[i], rows[j])
                };
                assert!((cm.c[(i, j)] - expected).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn constant_row_is_degenerate() {
        let a = [0.01, 0.01, 0.01, 0.01];
        let b = [0.02, -0.01, 0.0, 0.03];
        let r = returns_of(&[&b, &a]);
        match epoch_correlation(&r, 3, 4) {
            Err(Error::Degenerate { asset, tau }) => {
                assert_eq!(asset, "a1");
                assert_eq!(tau, Some(3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_rejected() {
        let a = [0.01, f64::NAN, 0.02];
        let r = ReturnMatrix {
            returns: DMatrix::from_row_slice(1, 3, &a),
            asset_ids: vec!["x".into()],
            dates: vec!["1".into(), "2".into(), "3".into()],
        };
        assert!(matches!(epoch_correlation(&r, 2, 3), Err(Error::Data(_))));
    }

    #[test]
    fn window_counts() {
        assert_eq!(epoch_ends(20, 20, 1).unwrap().len(), 1);
        assert_eq!(
            epoch_ends(8068, 20, 10).unwrap().len(),
            (8068 - 20) / 10 + 1
        );
        assert_eq!(epoch_ends(8068, 20, 10).unwrap().len(), 805);
        assert!(matches!(epoch_ends(100, 20, 0), Err(Error::Parameter(_))));
        assert!(matches!(epoch_ends(100, 1, 1), Err(Error::Parameter(_))));
    }

    #[test]
    fn sliding_window_consistency() {
        let g = synth::gaussian_panel(5, 60, 0.01, 3).unwrap();
        let r = ReturnMatrix::from_matrix(g.data).unwrap();
        let every = rolling_correlations(&r, 10, 1).unwrap();
        let strided = rolling_correlations(&r, 10, 3).unwrap();
        assert_eq!(strided.len(), (60 - 10) / 3 + 1);
        for (k, cm) in strided.iter().enumerate() {
            assert_eq!(cm, &every[3 * k]);
        }
        assert!(every.windows(2).all(|w| w[0].tau < w[1].tau));
    }

    #[test]
    fn long_epoch_converges_to_target() {
        let target = synth::CorrelationTarget::constant(10, 0.4).unwrap();
        let base = synth::gaussian_panel(10, 10_000, 1.0, 12).unwrap();
        let g = synth::correlate_panel(&base, &target).unwrap();
        let r = ReturnMatrix::from_matrix(g.data).unwrap();
        let c = epoch_correlation(&r, 9_999, 10_000).unwrap();
        assert!((&c.c - target.zeta()).amax() < 0.05);
    }

    #[test]
    fn short_epoch_zero_eigenvalues() {
        let g = synth::gaussian_panel(30, 10, 1.0, 2).unwrap();
        let r = ReturnMatrix::from_matrix(g.data).unwrap();
        let c = epoch_correlation(&r, 9, 10).unwrap();
        let vals = crate::linalg::sym_eigenvalues(&c.c).unwrap();
        let zeros = vals.iter().filter(|v| v.abs() < 1e-10).count();
        assert_eq!(zeros, 30 - 10 + 1);
    }

    proptest! {
        #[test]
        fn affine_invariance(
            seed in 0u64..1000,
            scales in proptest::collection::vec(0.01f64..100.0, 4),
            shifts in proptest::collection::vec(-5.0f64..5.0, 4),
        ) {
            let g = synth::gaussian_panel(4, 12, 1.0, seed).unwrap();
            let mut h = g.data.clone();
            for i in 0..4 {
                for t in 0..12 {
                    h[(i, t)] = scales[i] * h[(i, t)] + shifts[i];
                }
            }
            let a = epoch_correlation(&ReturnMatrix::from_matrix(g.data).unwrap(), 11, 12).unwrap();
            let b = epoch_correlation(&ReturnMatrix::from_matrix(h).unwrap(), 11, 12).unwrap();
            prop_assert!((&a.c - &b.c).amax() < 1e-12);
        }

        #[test]
        fn entries_bounded(seed in 0u64..1000) {
            let g = synth::gaussian_panel(6, 5, 1.0, seed).unwrap();
            let c = epoch_correlation(&ReturnMatrix::from_matrix(g.data).unwrap(), 4, 5).unwrap();
            prop_assert!(c.c.iter().all(|x| (-1.0..=1.0).contains(x)));
            let vals = crate::linalg::sym_eigenvalues(&c.c).unwrap();
            prop_assert!(vals[0] >= -1e-10);
        }
    }
}
