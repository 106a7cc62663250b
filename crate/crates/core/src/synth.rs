//! Gaussian and correlated-Gaussian panel generators.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

/// How a population correlation matrix was built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Structure {
    Identity,
    /// Every off-diagonal element equals `u`.
    Constant {
        u: f64,
    },
    /// Block-diagonal: `(block size, within-block correlation)`, zero across blocks.
    Blocks {
        blocks: Vec<(usize, f64)>,
    },
}

/// Population correlation `zeta` together with its symmetric square root.
#[derive(Debug, Clone)]
pub struct CorrelationTarget {
    zeta: DMatrix<f64>,
    sqrt: DMatrix<f64>,
    structure: Structure,
}

fn check_u(u: f64) -> Result<()> {
    if !(0.0..1.0).contains(&u) {
        return Err(Error::param(format!(
            "correlation strength U must lie in [0, 1), got {u}"
        )));
    }
    Ok(())
}

/// Eigenvalues of the `n x n` constant-correlation matrix: `1 + (n-1)u` once and `1 - u` (n-1 times).
pub fn constant_spectrum(n: usize, u: f64) -> (f64, f64) {
    (1.0 + (n as f64 - 1.0) * u, 1.0 - u)
}

fn check_constant_pd(n: usize, u: f64) -> Result<()> {
    let (top, rest) = constant_spectrum(n, u);
    let min = if n > 1 { top.min(rest) } else { top };
    let max = top.max(if n > 1 { rest } else { top });
    linalg::check_positive_definite(&[min, max])
}

impl CorrelationTarget {
    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("target dimension must be at least 1"));
        }
        Ok(Self {
            zeta: DMatrix::identity(n, n),
            sqrt: DMatrix::identity(n, n),
            structure: Structure::Identity,
        })
    }

    pub fn constant(n: usize, u: f64) -> Result<Self> {
        Self::blocks_inner(&[(n, u)], Structure::Constant { u })
    }

    pub fn blocks(blocks: &[(usize, f64)]) -> Result<Self> {
        Self::blocks_inner(
            blocks,
            Structure::Blocks {
                blocks: blocks.to_vec(),
            },
        )
    }

    fn blocks_inner(blocks: &[(usize, f64)], structure: Structure) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::param("at least one block is required"));
        }
        let mut n = 0;
        for &(size, u) in blocks {
            if size == 0 {
                return Err(Error::param("blocks must be non-empty"));
            }
            check_u(u)?;
            // Each block contributes its own constant-correlation spectrum.
            check_constant_pd(size, u)?;
            n += size;
        }
        let mut zeta = DMatrix::identity(n, n);
        let mut start = 0;
        for &(size, u) in blocks {
            for i in start..start + size {
                for j in start..start + size {
                    if i != j {
                        zeta[(i, j)] = u;
                    }
                }
            }
            start += size;
        }
        let sqrt = linalg::spd_sqrt(&zeta)?;
        Ok(Self {
            zeta,
            sqrt,
            structure,
        })
    }

    pub fn from_structure(n: usize, structure: &Structure) -> Result<Self> {
        let target = match structure {
            Structure::Identity => Self::identity(n)?,
            Structure::Constant { u } => Self::constant(n, *u)?,
            Structure::Blocks { blocks } => Self::blocks(blocks)?,
        };
        if target.dim() != n {
            return Err(Error::param(format!(
                "block sizes sum to {}, expected {n}",
                target.dim()
            )));
        }
        Ok(target)
    }

    pub fn dim(&self) -> usize {
        self.zeta.nrows()
    }

    pub fn zeta(&self) -> &DMatrix<f64> {
        &self.zeta
    }

    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }
}

/// An `N x T` panel of Gaussian series (one row per series).
#[derive(Debug, Clone)]
pub struct GaussianPanel {
    pub data: DMatrix<f64>,
    pub seed: u64,
    pub sigma: f64,
}

impl GaussianPanel {
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn t(&self) -> usize {
        self.data.ncols()
    }

    /// Price paths `p0 * exp(cumsum(row))`, one more column than the panel.
    pub fn to_prices(&self, p0: f64) -> DMatrix<f64> {
        let (n, t) = self.data.shape();
        let mut prices = DMatrix::zeros(n, t + 1);
        for i in 0..n {
            let mut log_p = p0.ln();
            prices[(i, 0)] = p0;
            for s in 0..t {
                log_p += self.data[(i, s)];
                prices[(i, s + 1)] = log_p.exp();
            }
        }
        prices
    }

    /// CSV with a `t` column and one column per series (`s0`, `s1`, ...).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let write_err = |e| Error::io(path, e);
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..self.n()).map(|i| format!("s{i}")))
            .collect();
        writeln!(w, "{}", header.join(",")).map_err(write_err)?;
        for s in 0..self.t() {
            write!(w, "{s}").map_err(write_err)?;
            for i in 0..self.n() {
                write!(w, ",{}", self.data[(i, s)]).map_err(write_err)?;
            }
            writeln!(w).map_err(write_err)?;
        }
        w.flush().map_err(write_err)
    }
}

/// I.i.d. `Normal(0, sigma^2)` draws filled row by row from a ChaCha8 stream.
pub fn gaussian_panel(n: usize, t: usize, sigma: f64, seed: u64) -> Result<GaussianPanel> {
    if n == 0 || t == 0 {
        return Err(Error::param(format!(
            "panel dimensions must be positive, got {n}x{t}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("sigma must be positive, got {sigma}")));
    }
    let mut rng = rng::seeded(seed);
    let values: Vec<f64> = (0..n * t)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect();
    Ok(GaussianPanel {
        data: DMatrix::from_row_slice(n, t, &values),
        seed,
        sigma,
    })
}

/// `G = zeta^{1/2} B`.
pub fn correlate_panel(panel: &GaussianPanel, target: &CorrelationTarget) -> Result<GaussianPanel> {
    if target.dim() != panel.n() {
        return Err(Error::param(format!(
            "target is {0}x{0} but panel has {1} rows",
            target.dim(),
            panel.n()
        )));
    }
    let data = match target.structure {
        Structure::Identity => panel.data.clone(),
        _ => target.sqrt() * &panel.data,
    };
    Ok(GaussianPanel {
        data,
        seed: panel.seed,
        sigma: panel.sigma,
    })
}

/// Correlated panel with a block-diagonal population correlation over `n` series.
pub fn block_surrogate(
    n: usize,
    blocks: &[(usize, f64)],
    t: usize,
    seed: u64,
) -> Result<GaussianPanel> {
    let total: usize = blocks.iter().map(|b| b.0).sum();
    if total != n {
        return Err(Error::param(format!(
            "block sizes sum to {total}, expected {n}"
        )));
    }
    let target = CorrelationTarget::blocks(blocks)?;
    let base = gaussian_panel(n, t, 1.0, seed)?;
    correlate_panel(&base, &target)
}

/// Sample path of a Markov chain with row-stochastic `transition`.
pub fn simulate_chain(
    transition: &[Vec<f64>],
    len: usize,
    start: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let k = transition.len();
    if k == 0 || start >= k {
        return Err(Error::param(format!("start state {start} outside 0..{k}")));
    }
    for (a, row) in transition.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.len() != k || row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!(
                "transition row {a} is not a probability vector"
            )));
        }
    }
    let mut rng = rng::seeded(seed);
    let mut path = Vec::with_capacity(len);
    let mut state = start;
    for _ in 0..len {
        path.push(state);
        let u: f64 = rng.random();
        let row = &transition[state];
        let mut acc = 0.0;
        state = k - 1;
        for (b, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                state = b;
                break;
            }
        }
    }
    Ok(path)
}

/// A panel built from consecutive regimes of equal length.
#[derive(Debug, Clone)]
pub struct RegimePanel {
    pub panel: GaussianPanel,
    /// Regime index per epoch.
    pub regimes: Vec<usize>,
    pub epoch_len: usize,
}

impl RegimePanel {
    /// 0-based end index of every epoch, for use with non-overlapping windows.
    pub fn epoch_ends(&self) -> Vec<usize> {
        (0..self.regimes.len())
            .map(|e| (e + 1) * self.epoch_len - 1)
            .collect()
    }
}

/// Non-overlapping epochs whose constant correlation follows a Markov chain over `u_levels`.
///
/// The chain starts in regime 0. Epoch `e` covers columns `e*epoch_len .. (e+1)*epoch_len`.
pub fn regime_surrogate(
    n: usize,
    epoch_len: usize,
    u_levels: &[f64],
    transition: &[Vec<f64>],
    n_epochs: usize,
    seed: u64,
) -> Result<RegimePanel> {
    if transition.len() != u_levels.len() {
        return Err(Error::param("one transition row per regime is required"));
    }
    if epoch_len == 0 || n_epochs == 0 {
        return Err(Error::param(
            "epoch length and epoch count must be positive",
        ));
    }
    let regimes = simulate_chain(transition, n_epochs, 0, rng::derive_seed(seed, 0))?;
    let targets: Vec<CorrelationTarget> = u_levels
        .iter()
        .map(|&u| CorrelationTarget::constant(n, u))
        .collect::<Result<_>>()?;
    let mut panel = gaussian_panel(n, epoch_len * n_epochs, 1.0, rng::derive_seed(seed, 1))?;
    for (e, &r) in regimes.iter().enumerate() {
        let cols = panel.data.columns(e * epoch_len, epoch_len).into_owned();
        let mixed = targets[r].sqrt() * cols;
        panel
            .data
            .columns_mut(e * epoch_len, epoch_len)
            .copy_from(&mixed);
    }
    Ok(RegimePanel {
        panel,
        regimes,
        epoch_len,
    })
}
