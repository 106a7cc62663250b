//! Wishart and correlated-Wishart ensembles and the Marchenko-Pastur law.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{self, CorrelationMatrix};
use crate::error::{Error, Result};
use crate::linalg::{self, ZERO_EIGENVALUE_TOL};
use crate::powermap;
use crate::rng::derive_seed;
use crate::synth::{self, CorrelationTarget, GaussianPanel, Structure};

/// Parameters a Wishart matrix was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    pub n: usize,
    pub t: usize,
    pub sigma: f64,
    pub structure: Structure,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct WishartMatrix {
    pub matrix: DMatrix<f64>,
    /// `T / N`.
    pub q_ratio: f64,
    pub correlated: bool,
    pub source: SourceParams,
}

impl WishartMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        linalg::sym_eigenvalues(&self.matrix)
    }

    pub fn power_mapped(&self, epsilon: f64) -> Result<DMatrix<f64>> {
        powermap::power_map(&self.matrix, epsilon)
    }
}

/// `W = (1/T) B B^T` for an uncorrelated panel (or `G G^T / T` for a correlated one).
pub fn wishart(panel: &GaussianPanel) -> Result<WishartMatrix> {
    wishart_with(panel, Structure::Identity)
}

pub fn wishart_with(panel: &GaussianPanel, structure: Structure) -> Result<WishartMatrix> {
    let (n, t) = panel.data.shape();
    if n == 0 || t == 0 {
        return Err(Error::param("panel must be non-empty"));
    }
    let mut matrix = &panel.data * panel.data.transpose();
    matrix /= t as f64;
    // Enforce exact symmetry; the product is symmetric only up to round-off.
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    Ok(WishartMatrix {
        matrix,
        q_ratio: t as f64 / n as f64,
        correlated: structure != Structure::Identity,
        source: SourceParams {
            n,
            t,
            sigma: panel.sigma,
            structure,
            seed: panel.seed,
        },
    })
}

/// `(lambda_min, lambda_max) = sigma^2 (1 -/+ 1/sqrt(Q))^2`.
pub fn mp_bounds(q: f64, sigma2: f64) -> (f64, f64) {
    let r = 1.0 / q.sqrt();
    (sigma2 * (1.0 - r).powi(2), sigma2 * (1.0 + r).powi(2))
}

/// Continuous part of the Marchenko-Pastur density; zero outside the open support.
///
/// For `Q < 1` this integrates to `Q`; the remaining mass sits at zero, see [`mp_zero_mass`].
pub fn mp_density(lambda: f64, q: f64, sigma2: f64) -> f64 {
    if lambda <= 0.0 || q <= 0.0 || sigma2 <= 0.0 {
        return 0.0;
    }
    let (lo, hi) = mp_bounds(q, sigma2);
    if lambda <= lo || lambda >= hi {
        return 0.0;
    }
    q / (2.0 * std::f64::consts::PI * sigma2) * ((hi - lambda) * (lambda - lo)).sqrt() / lambda
}

/// Weight `max(0, 1 - Q)` of the point mass at zero.
pub fn mp_zero_mass(q: f64) -> f64 {
    (1.0 - q).max(0.0)
}

/// How generated panels are turned into matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `(1/T) G G^T` on the raw panel.
    #[default]
    Wishart,
    /// Pearson correlation of the panel rows (per-row demeaned and standardized).
    Correlation,
}

/// Everything needed to draw one ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n: usize,
    pub t: usize,
    pub sigma: f64,
    pub structure: Structure,
    /// Power-map distortion applied after forming the matrix.
    pub epsilon: Option<f64>,
    pub normalization: Normalization,
}

impl GeneratorSpec {
    pub fn wishart(n: usize, t: usize) -> Self {
        Self {
            n,
            t,
            sigma: 1.0,
            structure: Structure::Identity,
            epsilon: None,
            normalization: Normalization::Wishart,
        }
    }

    /// Correlated short-epoch correlation matrices with constant correlation `u`.
    pub fn correlation(n: usize, m: usize, u: f64) -> Self {
        Self {
            n,
            t: m,
            sigma: 1.0,
            structure: if u == 0.0 {
                Structure::Identity
            } else {
                Structure::Constant { u }
            },
            epsilon: None,
            normalization: Normalization::Correlation,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = Some(epsilon);
        self
    }

    pub fn target(&self) -> Result<CorrelationTarget> {
        CorrelationTarget::from_structure(self.n, &self.structure)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 {
            return Err(Error::param("N and T must be positive"));
        }
        if self.normalization == Normalization::Correlation && self.t < 2 {
            return Err(Error::param("correlation normalization needs T >= 2"));
        }
        if let Some(eps) = self.epsilon {
            if !(eps >= 0.0) {
                return Err(Error::param(format!("epsilon must be >= 0, got {eps}")));
            }
        }
        Ok(())
    }
}

/// Draws the correlated panel for one member.
fn member_panel(
    spec: &GeneratorSpec,
    target: &CorrelationTarget,
    seed: u64,
) -> Result<GaussianPanel> {
    let base = synth::gaussian_panel(spec.n, spec.t, spec.sigma, seed)?;
    synth::correlate_panel(&base, target)
}

/// One member matrix (after normalization and optional power map).
pub fn generate_member(
    spec: &GeneratorSpec,
    target: &CorrelationTarget,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let panel = member_panel(spec, target, seed)?;
    let matrix = match spec.normalization {
        Normalization::Wishart => wishart_with(&panel, spec.structure.clone())?.matrix,
        Normalization::Correlation => correlation::pearson_matrix(&panel.data)?,
    };
    match spec.epsilon {
        Some(eps) if eps > 0.0 => powermap::power_map(&matrix, eps),
        _ => Ok(matrix),
    }
}

/// One short-epoch correlation member as a [`CorrelationMatrix`] (`epoch_len = T`), undistorted.
pub fn generate_correlation(
    spec: &GeneratorSpec,
    target: &CorrelationTarget,
    seed: u64,
) -> Result<CorrelationMatrix> {
    let panel = member_panel(spec, target, seed)?;
    let c = correlation::pearson_matrix(&panel.data)?;
    Ok(CorrelationMatrix {
        c,
        tau: spec.t - 1,
        label: format!("seed-{seed}"),
        epoch_len: spec.t,
        asset_ids: (0..spec.n).map(|i| format!("s{i}")).collect(),
    })
}

/// Ascending eigenvalues of every member; member `k` uses `derive_seed(seed, k)`.
pub fn ensemble_eigenvalues(
    spec: &GeneratorSpec,
    n_ensemble: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    if n_ensemble == 0 {
        return Err(Error::param("ensemble size must be at least 1"));
    }
    let target = spec.target()?;
    (0..n_ensemble)
        .into_par_iter()
        .map(|k| {
            let m = generate_member(spec, &target, derive_seed(seed, k as u64))?;
            linalg::sym_eigenvalues(&m)
                .map_err(|e| Error::numeric(format!("ensemble member {k}: {e}")))
        })
        .collect()
}

/// What a density integrates to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityNorm {
    /// All samples binned; integral is 1.
    Unit,
    /// Zero eigenvalues (`|x| < 1e-10`) excluded from the bins but counted in the
    /// normalization, so the integral is the non-zero fraction (`Q` when `Q <= 1`).
    ExcludeZeroMass,
}

/// Uniform-bin histogram normalized to a probability density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensity {
    pub bin_edges: Vec<f64>,
    pub density: Vec<f64>,
    /// Number of values that went into the bins.
    pub n_samples: usize,
    pub n_ensemble: usize,
    pub normalization: DensityNorm,
}

impl SpectralDensity {
    /// Bins span `[min - w, max + w]` with `bins` equal widths `w`.
    pub fn from_samples(
        samples: &[f64],
        bins: usize,
        n_ensemble: usize,
        normalization: DensityNorm,
    ) -> Result<Self> {
        if bins < 3 {
            return Err(Error::param(format!("need at least 3 bins, got {bins}")));
        }
        let total = samples.len();
        let kept: Vec<f64> = match normalization {
            DensityNorm::Unit => samples.to_vec(),
            DensityNorm::ExcludeZeroMass => samples
                .iter()
                .copied()
                .filter(|x| x.abs() >= ZERO_EIGENVALUE_TOL)
                .collect(),
        };
        if total == 0 {
            return Err(Error::param("no samples to histogram"));
        }
        if kept.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric("non-finite sample in histogram"));
        }
        let (min, max) = if kept.is_empty() {
            (0.0, 0.0)
        } else {
            kept.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                    (lo.min(x), hi.max(x))
                })
        };
        let span = max - min;
        let width = if span > 0.0 {
            span / (bins - 2) as f64
        } else {
            1.0
        };
        let lo = min - width;
        let bin_edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
        let mut counts = vec![0usize; bins];
        for &x in &kept {
            let idx = (((x - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
            counts[idx] += 1;
        }
        let norm = 1.0 / (total as f64 * width);
        Ok(Self {
            bin_edges,
            density: counts.iter().map(|&c| c as f64 * norm).collect(),
            n_samples: kept.len(),
            n_ensemble,
            normalization,
        })
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_edges[1] - self.bin_edges[0]
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect()
    }

    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width()
    }

    /// Mean absolute difference from a reference density evaluated at bin centers.
    pub fn mean_abs_error(&self, reference: impl Fn(f64) -> f64) -> f64 {
        let centers = self.bin_centers();
        centers
            .iter()
            .zip(&self.density)
            .map(|(&x, &d)| (d - reference(x)).abs())
            .sum::<f64>()
            / centers.len() as f64
    }

    /// `bin_center,density` rows, optionally with a reference column.
    pub fn write_csv(&self, path: &Path, reference: Option<&dyn Fn(f64) -> f64>) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let e = |err| Error::io(path, err);
        match reference {
            Some(_) => writeln!(w, "bin_center,density,reference").map_err(e)?,
            None => writeln!(w, "bin_center,density").map_err(e)?,
        }
        for (x, d) in self.bin_centers().iter().zip(&self.density) {
            match reference {
                Some(f) => writeln!(w, "{x},{d},{}", f(*x)).map_err(e)?,
                None => writeln!(w, "{x},{d}").map_err(e)?,
            }
        }
        w.flush().map_err(e)
    }
}

/// Histogram of all ensemble eigenvalues.
pub fn ensemble_spectrum(
    spec: &GeneratorSpec,
    n_ensemble: usize,
    bins: usize,
    seed: u64,
) -> Result<SpectralDensity> {
    let all: Vec<f64> = ensemble_eigenvalues(spec, n_ensemble, seed)?.concat();
    SpectralDensity::from_samples(&all, bins, n_ensemble, DensityNorm::Unit)
}

/// Off-diagonal element histogram with its sample moments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElementDistribution {
    pub histogram: SpectralDensity,
    pub mean: f64,
    pub variance: f64,
    pub n_elements: usize,
}

impl ElementDistribution {
    /// Standard error of the mean, treating elements as independent.
    pub fn standard_error(&self) -> f64 {
        (self.variance / self.n_elements as f64).sqrt()
    }
}

pub fn element_distribution(
    spec: &GeneratorSpec,
    n_ensemble: usize,
    bins: usize,
    seed: u64,
) -> Result<ElementDistribution> {
    spec.validate()?;
    if n_ensemble == 0 {
        return Err(Error::param("ensemble size must be at least 1"));
    }
    if spec.n < 2 {
        return Err(Error::param("element distribution needs N >= 2"));
    }
    let target = spec.target()?;
    let per_member: Vec<Vec<f64>> = (0..n_ensemble)
        .into_par_iter()
        .map(|k| {
            generate_member(spec, &target, derive_seed(seed, k as u64))
                .map(|m| correlation::upper_triangle(&m))
        })
        .collect::<Result<_>>()?;
    let all = per_member.concat();
    let count = all.len() as f64;
    let mean = all.iter().sum::<f64>() / count;
    let variance = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / count;
    Ok(ElementDistribution {
        histogram: SpectralDensity::from_samples(&all, bins, n_ensemble, DensityNorm::Unit)?,
        mean,
        variance,
        n_elements: all.len(),
    })
}
