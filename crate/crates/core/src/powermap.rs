//! Power-map distortion `x -> sign(x) |x|^(1 + eps)` and the emerging spectrum.
//!
//! A short-epoch correlation matrix (`M < N`) has `N - M + 1` zero
//! eigenvalues. A small distortion lifts that degeneracy into a cloud of
//! near-zero eigenvalues, the emerging spectrum. The cloud is taken to be the
//! `N - M + 1` algebraically smallest eigenvalues of the mapped matrix; the
//! remaining `M - 1` form the bulk.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationMatrix;
use crate::ensembles::{self, DensityNorm, GeneratorSpec, SpectralDensity};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::derive_seed;

/// Distortion used for ensemble studies.
pub const EPSILON_ENSEMBLE: f64 = 0.001;
/// Distortion used for rolling emerging-spectrum trackers.
pub const EPSILON_DYNAMICS: f64 = 0.01;
/// Distortion used before computing epoch similarities.
pub const EPSILON_STATES: f64 = 0.6;

#[inline]
pub fn power_map_value(x: f64, epsilon: f64) -> f64 {
    if x == 0.0 {
        return x;
    }
    x.signum() * x.abs().powf(1.0 + epsilon)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::param(format!(
            "epsilon must be a finite value >= 0, got {epsilon}"
        )));
    }
    Ok(())
}

/// Elementwise power map. Exactly the identity at `epsilon = 0`.
pub fn power_map(m: &DMatrix<f64>, epsilon: f64) -> Result<DMatrix<f64>> {
    check_epsilon(epsilon)?;
    if epsilon == 0.0 {
        return Ok(m.clone());
    }
    Ok(m.map(|x| power_map_value(x, epsilon)))
}

impl CorrelationMatrix {
    /// Same epoch metadata, distorted entries. The unit diagonal is preserved.
    pub fn power_mapped(&self, epsilon: f64) -> Result<CorrelationMatrix> {
        Ok(CorrelationMatrix {
            c: power_map(&self.c, epsilon)?,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmergingSpectrum {
    /// The `N - M + 1` smallest eigenvalues, ascending.
    pub emerging: Vec<f64>,
    /// The remaining `M - 1` eigenvalues, ascending.
    pub bulk: Vec<f64>,
    pub lambda_min: f64,
    pub neg_count: usize,
    pub epsilon: f64,
    /// Gap between cloud and bulk exceeds the cloud width.
    pub separated: bool,
}

impl EmergingSpectrum {
    /// Splits an ascending spectrum after the first `n_emerging` values.
    pub fn from_sorted(eigenvalues: Vec<f64>, n_emerging: usize, epsilon: f64) -> Result<Self> {
        if n_emerging == 0 || n_emerging > eigenvalues.len() {
            return Err(Error::param(format!(
                "cannot take {n_emerging} emerging eigenvalues from a spectrum of {}",
                eigenvalues.len()
            )));
        }
        let mut emerging = eigenvalues;
        let bulk = emerging.split_off(n_emerging);
        let lambda_min = emerging[0];
        let lambda_top = emerging[emerging.len() - 1];
        let neg_count = emerging.iter().filter(|&&x| x < 0.0).count();
        let separated = match bulk.first() {
            Some(&b) => (b - lambda_top) > (lambda_top - lambda_min),
            None => false,
        };
        Ok(Self {
            emerging,
            bulk,
            lambda_min,
            neg_count,
            epsilon,
            separated,
        })
    }

    pub fn mean(&self) -> f64 {
        self.emerging.iter().sum::<f64>() / self.emerging.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.emerging
            .iter()
            .fold(0.0, |acc: f64, x| acc.max(x.abs()))
    }

    /// Non-excess kurtosis of the emerging values (`None` for a zero-width cloud).
    pub fn kurtosis(&self) -> Option<f64> {
        crate::dynamics::Moments::of(&self.emerging).kurtosis
    }

    pub fn summary(&self, bins: usize) -> Result<EmergingSummary> {
        Ok(EmergingSummary {
            epsilon: self.epsilon,
            lambda_min: self.lambda_min,
            neg_count: self.neg_count,
            separated: self.separated,
            n_emerging: self.emerging.len(),
            n_bulk: self.bulk.len(),
            histogram: SpectralDensity::from_samples(&self.emerging, bins, 1, DensityNorm::Unit)?,
        })
    }
}

/// Serializable view of an [`EmergingSpectrum`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmergingSummary {
    pub epsilon: f64,
    pub lambda_min: f64,
    pub neg_count: usize,
    pub separated: bool,
    pub n_emerging: usize,
    pub n_bulk: usize,
    pub histogram: SpectralDensity,
}

pub fn emerging_spectrum(c: &CorrelationMatrix, epsilon: f64) -> Result<EmergingSpectrum> {
    let n = c.dim();
    let m = c.epoch_len;
    if m >= n {
        return Err(Error::Domain(format!(
            "epoch length {m} >= dimension {n}: there is no zero-eigenvalue cloud, use the plain spectrum"
        )));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::param(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    let mapped = power_map(&c.c, epsilon)?;
    let values = linalg::sym_eigenvalues(&mapped)?;
    EmergingSpectrum::from_sorted(values, n - m + 1, epsilon)
}

/// Ensemble-averaged emerging-cloud statistics for one epoch length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmergingShiftRow {
    pub m: usize,
    pub mean_location: f64,
    pub lambda_min: f64,
    pub neg_count: f64,
    /// Kurtosis of the emerging values pooled over all members.
    pub pooled_kurtosis: Option<f64>,
    pub separated_fraction: f64,
}

/// Emerging spectra for every member of a correlated ensemble.
pub fn ensemble_emerging(
    spec: &GeneratorSpec,
    epsilon: f64,
    n_ensemble: usize,
    seed: u64,
) -> Result<Vec<EmergingSpectrum>> {
    if n_ensemble == 0 {
        return Err(Error::param("ensemble size must be at least 1"));
    }
    let target = spec.target()?;
    (0..n_ensemble)
        .into_par_iter()
        .map(|k| {
            let c = ensembles::generate_correlation(spec, &target, derive_seed(seed, k as u64))?;
            emerging_spectrum(&c, epsilon).map_err(|e| match e {
                Error::Numeric(msg) => Error::numeric(format!("ensemble member {k}: {msg}")),
                other => other,
            })
        })
        .collect()
}

pub fn summarize_members(m: usize, members: &[EmergingSpectrum]) -> EmergingShiftRow {
    let k = members.len() as f64;
    let pooled: Vec<f64> = members
        .iter()
        .flat_map(|s| s.emerging.iter().copied())
        .collect();
    EmergingShiftRow {
        m,
        mean_location: members.iter().map(EmergingSpectrum::mean).sum::<f64>() / k,
        lambda_min: members.iter().map(|s| s.lambda_min).sum::<f64>() / k,
        neg_count: members.iter().map(|s| s.neg_count as f64).sum::<f64>() / k,
        pooled_kurtosis: crate::dynamics::Moments::of(&pooled).kurtosis,
        separated_fraction: members.iter().filter(|s| s.separated).count() as f64 / k,
    }
}

/// Emerging-cloud location and negative-eigenvalue count as the epoch shrinks.
pub fn emerging_shift_vs_m(
    n: usize,
    u: f64,
    epsilon: f64,
    m_values: &[usize],
    n_ensemble: usize,
    seed: u64,
) -> Result<Vec<EmergingShiftRow>> {
    if let Some(&bad) = m_values.iter().find(|&&m| m >= n || m < 2) {
        return Err(Error::param(format!(
            "epoch length {bad} must satisfy 2 <= M < N = {n}"
        )));
    }
    m_values
        .iter()
        .map(|&m| {
            let spec = GeneratorSpec::correlation(n, m, u);
            let members = ensemble_emerging(&spec, epsilon, n_ensemble, seed)?;
            Ok(summarize_members(m, &members))
        })
        .collect()
}
