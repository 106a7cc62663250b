//! Statistics of correlation matrices along rolling epochs.
//!
//! Moments are population (divide-by-n) central moments of the strictly
//! upper-triangle elements. Kurtosis is non-excess (Gaussian = 3). Skewness
//! and kurtosis are `None` when every element is identical.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::output::{self, opt};
use crate::powermap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub mean_abs: f64,
    pub variance: f64,
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
}

impl Moments {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                mean_abs: f64::NAN,
                variance: f64::NAN,
                skewness: None,
                kurtosis: None,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let mean_abs = values.iter().map(|x| x.abs()).sum::<f64>() / n;
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
        if lo == hi {
            return Self {
                mean,
                mean_abs,
                variance: 0.0,
                skewness: None,
                kurtosis: None,
            };
        }
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for &x in values {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        m2 /= n;
        m3 /= n;
        m4 /= n;
        Self {
            mean,
            mean_abs,
            variance: m2,
            skewness: Some(m3 / m2.powf(1.5)),
            kurtosis: Some(m4 / (m2 * m2)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub tau: usize,
    pub label: String,
    pub mean_c: f64,
    pub mean_abs_c: f64,
    /// `<|C_ij|> - <C_ij>`.
    pub df: f64,
    pub variance: f64,
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
    /// Largest eigenvalue of the undistorted matrix.
    pub lambda_max: f64,
    /// Smallest emerging eigenvalue; absent when `M >= N`.
    pub lambda_min_emerging: Option<f64>,
    pub neg_count: Option<usize>,
}

pub fn epoch_stats(c: &CorrelationMatrix, epsilon: f64) -> Result<EpochStats> {
    if c.dim() < 2 {
        return Err(Error::param("epoch statistics need at least two assets"));
    }
    let m = Moments::of(&c.upper_triangle());
    let lambda_max = *linalg::sym_eigenvalues(&c.c)?
        .last()
        .expect("non-empty spectrum");
    let (lambda_min_emerging, neg_count) = if c.epoch_len < c.dim() && epsilon > 0.0 {
        let s = powermap::emerging_spectrum(c, epsilon)?;
        (Some(s.lambda_min), Some(s.neg_count))
    } else {
        (None, None)
    };
    Ok(EpochStats {
        tau: c.tau,
        label: c.label.clone(),
        mean_c: m.mean,
        mean_abs_c: m.mean_abs,
        // Clamped: round-off may otherwise leave a -1e-17 here.
        df: (m.mean_abs - m.mean).max(0.0),
        variance: m.variance,
        skewness: m.skewness,
        kurtosis: m.kurtosis,
        lambda_max,
        lambda_min_emerging,
        neg_count,
    })
}

pub fn stats_series(correlations: &[CorrelationMatrix], epsilon: f64) -> Result<Vec<EpochStats>> {
    if correlations.is_empty() {
        return Err(Error::param("no epochs supplied"));
    }
    correlations
        .par_iter()
        .map(|c| epoch_stats(c, epsilon).map_err(|e| e.at_epoch(c.tau)))
        .collect()
}

pub fn write_stats_csv(path: &Path, stats: &[EpochStats]) -> Result<()> {
    let header = [
        "tau",
        "label",
        "mean_c",
        "mean_abs_c",
        "df",
        "variance",
        "skewness",
        "kurtosis",
        "lambda_max",
        "lambda_min_emerging",
        "neg_count",
    ];
    output::write_rows_csv(
        path,
        &header,
        stats.iter().map(|s| {
            vec![
                s.tau.to_string(),
                s.label.clone(),
                s.mean_c.to_string(),
                s.mean_abs_c.to_string(),
                s.df.to_string(),
                s.variance.to_string(),
                opt(s.skewness),
                opt(s.kurtosis),
                s.lambda_max.to_string(),
                opt(s.lambda_min_emerging),
                s.neg_count
                    .map_or_else(|| "NaN".to_string(), |c| c.to_string()),
            ]
        }),
    )
}

/// Pearson correlation of `(x_t, y_{t+lag})` with the paired points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaggedRelation {
    pub lag: usize,
    pub pearson_r: f64,
    pub n_pairs: usize,
    /// `(x_t, y_{t+lag}, t)`.
    pub pairs: Vec<(f64, f64, usize)>,
}

impl LaggedRelation {
    /// Residual variance of the least-squares line through the scatter.
    pub fn residual_variance(&self) -> f64 {
        let xs: Vec<f64> = self.pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = self.pairs.iter().map(|p| p.1).collect();
        let fit = ols(&xs, &ys);
        fit.sse / self.n_pairs as f64
    }

    pub fn write_csv(&self, path: &Path, labels: Option<&[String]>) -> Result<()> {
        output::write_rows_csv(
            path,
            &["x", "y", "tau"],
            self.pairs.iter().map(|&(x, y, t)| {
                let tau = labels
                    .and_then(|l| l.get(t).cloned())
                    .unwrap_or_else(|| t.to_string());
                vec![x.to_string(), y.to_string(), tau]
            }),
        )
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn lagged_relation(x: &[f64], y: &[f64], lag: usize) -> Result<LaggedRelation> {
    if x.len() != y.len() {
        return Err(Error::param(format!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() <= lag + 2 {
        return Err(Error::param(format!(
            "series of length {} too short for lag {lag}",
            x.len()
        )));
    }
    let n = x.len() - lag;
    let xs = &x[..n];
    let ys = &y[lag..];
    Ok(LaggedRelation {
        lag,
        pearson_r: pearson(xs, ys),
        n_pairs: n,
        pairs: (0..n).map(|t| (xs[t], ys[t], t)).collect(),
    })
}

struct OlsFit {
    slope: f64,
    sxx: f64,
    syy: f64,
    sse: f64,
}

fn ols(x: &[f64], y: &[f64]) -> OlsFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sse = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    OlsFit {
        slope,
        sxx,
        syy,
        sse,
    }
}

/// Slope t-statistic of `y ~ a + b x`.
///
/// `NaN` flags a constant regressor (or constant response); `+/-inf` flags a
/// perfect fit.
pub fn slope_tstat(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if n < 3 || lo == hi {
        return f64::NAN;
    }
    let fit = ols(x, y);
    if fit.syy == 0.0 {
        return f64::NAN;
    }
    if fit.sse <= 1e-24 * fit.syy {
        return if fit.slope >= 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
    }
    let s2 = fit.sse / (n as f64 - 2.0);
    fit.slope / (s2 / fit.sxx).sqrt()
}

/// Rolling t-statistics for the effect of `lmin(t-1)` on `mu(t)`.
///
/// Entry `k` uses the `window` pairs with response times `k+1 ..= k+window`.
pub fn lag1_effect_tstat(mu: &[f64], lmin: &[f64], window: usize) -> Result<Vec<f64>> {
    if mu.len() != lmin.len() {
        return Err(Error::param("mu and lambda_min series must be aligned"));
    }
    if window < 8 {
        return Err(Error::param(format!(
            "window must be at least 8, got {window}"
        )));
    }
    if mu.len() < window + 1 {
        return Err(Error::param(format!(
            "series of length {} too short for a window of {window} lagged pairs",
            mu.len()
        )));
    }
    let x = &lmin[..lmin.len() - 1];
    let y = &mu[1..];
    Ok((0..=x.len() - window)
        .map(|k| slope_tstat(&x[k..k + window], &y[k..k + window]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn corr(m: DMatrix<f64>, epoch_len: usize) -> CorrelationMatrix {
        let n = m.nrows();
        CorrelationMatrix::new(m, 0, epoch_len, (0..n).map(|i| format!("a{i}")).collect()).unwrap()
    }

    #[test]
    fn constant_offdiag() {
        let mut m = DMatrix::from_element(4, 4, 0.3);
        m.fill_diagonal(1.0);
        let s = epoch_stats(&corr(m, 100), 0.01).unwrap();
        assert!((s.mean_c - 0.3).abs() < 1e-15);
        assert_eq!(s.df, 0.0);
        assert_eq!(s.variance, 0.0);
        assert!(s.skewness.is_none() && s.kurtosis.is_none());
        assert!(s.lambda_min_emerging.is_none());
    }

    #[test]
    fn nonnegative_offdiag_gives_zero_df() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.5, 0.2, 1.0, 0.0, 0.5, 0.0, 1.0]);
        let s = epoch_stats(&corr(m, 100), 0.01).unwrap();
        assert_eq!(s.df, 0.0);
    }

    #[test]
    fn mixed_signs_match_brute_force() {
        let m = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.3, -0.2, 0.5, //
                0.3, 1.0, 0.1, -0.4, //
                -0.2, 0.1, 1.0, 0.6, //
                0.5, -0.4, 0.6, 1.0,
            ],
        );
        let s = epoch_stats(&corr(m, 100), 0.01).unwrap();
        // Hand-listed upper triangle and direct moment formulas.
        let v = [0.3, -0.2, 0.5, 0.1, -0.4, 0.6];
        let n = 6.0;
        let mean = v.iter().sum::<f64>() / n;
        let mabs = v.iter().map(|x: &f64| x.abs()).sum::<f64>() / n;
        let c2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let c3 = v.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
        let c4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        assert!((s.mean_c - mean).abs() < 1e-12);
        assert!((s.mean_abs_c - mabs).abs() < 1e-12);
        assert!((s.df - (mabs - mean)).abs() < 1e-12);
        assert!((s.variance - c2).abs() < 1e-12);
        assert!((s.skewness.unwrap() - c3 / c2.powf(1.5)).abs() < 1e-12);
        assert!((s.kurtosis.unwrap() - c4 / (c2 * c2)).abs() < 1e-12);
    }

    #[test]
    fn emerging_fields_present_for_short_epochs() {
        let spec = crate::ensembles::GeneratorSpec::correlation(30, 10, 0.2);
        let c = crate::ensembles::generate_correlation(&spec, &spec.target().unwrap(), 3).unwrap();
        let s = epoch_stats(&c, 0.01).unwrap();
        assert!(s.lambda_min_emerging.is_some());
        assert!(s.neg_count.is_some());
    }

    #[test]
    fn single_epoch_series() {
        let m = DMatrix::identity(3, 3);
        let rows = stats_series(&[corr(m, 10)], 0.01).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(stats_series(&[], 0.01).is_err());
    }

    #[test]
    fn lag_identity() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin()).collect();
        let r = lagged_relation(&x, &x, 0).unwrap();
        assert!((r.pearson_r - 1.0).abs() < 1e-12);
        assert_eq!(r.n_pairs, 20);
        let r2 = lagged_relation(&x, &x, 3).unwrap();
        assert_eq!(r2.n_pairs, 17);
        assert_eq!(r2.pairs[0], (x[0], x[3], 0));
    }

    #[test]
    fn lag_anticorrelated() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| -v + 0.05 * ((i * 7 % 5) as f64 - 2.0))
            .collect();
        assert!(lagged_relation(&x, &y, 0).unwrap().pearson_r < 0.0);
    }

    #[test]
    fn lag_too_long() {
        let x = [1.0, 2.0, 3.0];
        assert!(lagged_relation(&x, &x, 1).is_err());
        assert!(lagged_relation(&x, &x[..2], 0).is_err());
    }

    #[test]
    fn tstat_constant_regressor() {
        let mu: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let lmin = vec![0.5; 20];
        let t = lag1_effect_tstat(&mu, &lmin, 10).unwrap();
        assert_eq!(t.len(), 19 - 10 + 1);
        assert!(t.iter().all(|v| v.is_nan()));
    }

    #[test]
    fn tstat_perfect_fit() {
        let lmin: Vec<f64> = (0..30).map(|i| ((i * 13 % 7) as f64) * 0.1 - 0.2).collect();
        let mut mu = vec![0.0; 30];
        for t in 1..30 {
            mu[t] = 2.0 * lmin[t - 1];
        }
        let t = lag1_effect_tstat(&mu, &lmin, 12).unwrap();
        assert!(t.iter().all(|v| *v == f64::INFINITY), "{t:?}");
    }

    #[test]
    fn tstat_window_precondition() {
        let s = vec![0.0; 20];
        assert!(lag1_effect_tstat(&s, &s, 7).is_err());
        assert!(lag1_effect_tstat(&s, &s[..19], 8).is_err());
    }
}
