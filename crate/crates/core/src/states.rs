//! Market states: epoch similarity, classical MDS, k-means ensembles and
//! state transition probabilities.
//!
//! The similarity between two epochs is the mean absolute difference of the
//! strictly upper-triangle elements of their power-mapped correlation
//! matrices. State ids are 0-based in the API; exported files label them
//! `1..=k` so that state 1 is the calmest (lowest mean correlation).

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{upper_triangle, CorrelationMatrix};
use crate::error::{Error, Result};
use crate::linalg;
use crate::output;
use crate::powermap;
use crate::rng::{self, derive_seed};

/// k-means gives up after this many Lloyd iterations.
pub const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub d: DMatrix<f64>,
    pub labels: Vec<String>,
}

pub fn similarity_matrix(
    correlations: &[CorrelationMatrix],
    epsilon: f64,
) -> Result<SimilarityMatrix> {
    let Some(first) = correlations.first() else {
        return Err(Error::param("no correlation matrices supplied"));
    };
    let n = first.dim();
    if let Some(bad) = correlations.iter().find(|c| c.dim() != n) {
        return Err(Error::param(format!(
            "dimension mismatch: epoch {} is {}x{}, expected {n}x{n}",
            bad.label,
            bad.dim(),
            bad.dim()
        )));
    }
    if n < 2 {
        return Err(Error::param("similarity needs at least two assets"));
    }
    let tris: Vec<Vec<f64>> = correlations
        .par_iter()
        .map(|c| powermap::power_map(&c.c, epsilon).map(|m| upper_triangle(&m)))
        .collect::<Result<_>>()?;
    let count = correlations.len();
    let len = tris[0].len() as f64;
    let rows: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|a| {
            (0..count)
                .map(|b| {
                    if a == b {
                        0.0
                    } else {
                        tris[a]
                            .iter()
                            .zip(&tris[b])
                            .map(|(x, y)| (x - y).abs())
                            .sum::<f64>()
                            / len
                    }
                })
                .collect()
        })
        .collect();
    let mut d = DMatrix::zeros(count, count);
    for a in 0..count {
        for b in a + 1..count {
            // Row a computed both entries identically; copy one for exact symmetry.
            d[(a, b)] = rows[a][b];
            d[(b, a)] = rows[a][b];
        }
    }
    Ok(SimilarityMatrix {
        d,
        labels: correlations.iter().map(|c| c.label.clone()).collect(),
    })
}

/// Correlation distance `sqrt(2 (1 - C_ij))` between assets.
pub fn correlation_distance(c: &CorrelationMatrix) -> DMatrix<f64> {
    c.c.map(|x| (2.0 * (1.0 - x)).max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdsEmbedding {
    /// One row per object.
    pub coords: DMatrix<f64>,
    pub eigvals_used: Vec<f64>,
    /// Fewer than the requested number of non-negative eigenvalues were available.
    pub truncated: bool,
}

impl MdsEmbedding {
    pub fn n_points(&self) -> usize {
        self.coords.nrows()
    }

    pub fn dims(&self) -> usize {
        self.coords.ncols()
    }

    /// Euclidean distance matrix of the embedded points.
    pub fn distances(&self) -> DMatrix<f64> {
        pairwise_distances(&self.coords)
    }
}

pub fn pairwise_distances(points: &DMatrix<f64>) -> DMatrix<f64> {
    let n = points.nrows();
    DMatrix::from_fn(n, n, |a, b| (points.row(a) - points.row(b)).norm())
}

/// Classical (Torgerson) scaling of a dissimilarity matrix.
pub fn classical_mds(d: &DMatrix<f64>, k_dim: usize) -> Result<MdsEmbedding> {
    if k_dim == 0 {
        return Err(Error::param("embedding dimension must be at least 1"));
    }
    if !d.is_square() || d.nrows() == 0 {
        return Err(Error::param(
            "dissimilarity matrix must be square and non-empty",
        ));
    }
    if !linalg::is_symmetric(d, 1e-12) || d.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::param(
            "dissimilarity matrix must be symmetric, finite and non-negative",
        ));
    }
    let n = d.nrows();
    let d2 = d.map(|x| x * x);
    let row_means: Vec<f64> = (0..n).map(|i| d2.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| {
        -0.5 * (d2[(i, j)] - row_means[i] - row_means[j] + grand)
    });
    let eig = linalg::sym_eigen(&b)?;
    let top = eig.values.last().copied().unwrap_or(0.0);
    let tol = 1e-10 * top.abs().max(1.0);
    let mut used = Vec::new();
    let mut cols = Vec::new();
    for idx in (0..n).rev().take(k_dim) {
        let l = eig.values[idx];
        if l < -tol {
            break;
        }
        let s = l.max(0.0).sqrt();
        let mut col = eig.vectors.column(idx).into_owned() * s;
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        used.push(l.max(0.0));
        cols.push(col);
    }
    let truncated = used.len() < k_dim;
    let coords = if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    Ok(MdsEmbedding {
        coords,
        eigvals_used: used,
        truncated,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansRun {
    pub assignment: Vec<usize>,
    /// `k x dims`.
    pub centroids: DMatrix<f64>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    /// Inertia after every centroid update.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    /// Mean Euclidean distance from each point to its centroid.
    pub mean_intra_distance: f64,
}

fn sq_dist(points: &DMatrix<f64>, p: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols())
        .map(|j| {
            let d = points[(p, j)] - centroids[(c, j)];
            d * d
        })
        .sum()
}

fn assign(points: &DMatrix<f64>, centroids: &DMatrix<f64>) -> Vec<usize> {
    (0..points.nrows())
        .map(|p| {
            let mut best = 0;
            let mut best_d = sq_dist(points, p, centroids, 0);
            for c in 1..centroids.nrows() {
                let d = sq_dist(points, p, centroids, c);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

fn inertia(points: &DMatrix<f64>, centroids: &DMatrix<f64>, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(p, &c)| sq_dist(points, p, centroids, c))
        .sum()
}

/// Cluster means in point order; an empty cluster keeps its previous centroid.
fn update(points: &DMatrix<f64>, assignment: &[usize], previous: &DMatrix<f64>) -> DMatrix<f64> {
    let (k, dims) = previous.shape();
    let mut sums = DMatrix::zeros(k, dims);
    let mut counts = vec![0usize; k];
    for (p, &c) in assignment.iter().enumerate() {
        counts[c] += 1;
        for j in 0..dims {
            sums[(c, j)] += points[(p, j)];
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            sums.set_row(c, &previous.row(c));
        } else {
            let inv = 1.0 / counts[c] as f64;
            for j in 0..dims {
                sums[(c, j)] *= inv;
            }
        }
    }
    sums
}

/// How a k-means restart picks its starting centroids.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KMeansInit {
    /// `k` distinct points chosen uniformly.
    RandomPoints,
    /// Greedy k-means++: each further centroid is the best of `2 + ln k`
    /// candidates drawn with probability proportional to squared distance
    /// from the nearest chosen centroid.
    #[default]
    PlusPlus,
}

fn initial_centroids(
    points: &DMatrix<f64>,
    k: usize,
    init: KMeansInit,
    rng: &mut rng::Rng,
) -> DMatrix<f64> {
    let n = points.nrows();
    let picks: Vec<usize> = match init {
        KMeansInit::RandomPoints => sample(rng, n, k).into_vec(),
        KMeansInit::PlusPlus => {
            let trials = 2 + (k as f64).ln().floor() as usize;
            let mut picks = vec![rng.random_range(0..n)];
            let mut d2: Vec<f64> = (0..n).map(|p| row_sq_dist(points, p, picks[0])).collect();
            while picks.len() < k {
                let total: f64 = d2.iter().sum();
                if total <= 0.0 {
                    // Every point coincides with a centroid; fall back to an unused index.
                    let unused: Vec<usize> = (0..n).filter(|p| !picks.contains(p)).collect();
                    let next = unused[rng.random_range(0..unused.len())];
                    picks.push(next);
                    continue;
                }
                // Greedy variant: keep the candidate that lowers the total potential most.
                let mut best: Option<(f64, usize, Vec<f64>)> = None;
                for _ in 0..trials {
                    let cand = weighted_pick(&d2, rng.random::<f64>() * total);
                    let updated: Vec<f64> = d2
                        .iter()
                        .enumerate()
                        .map(|(p, &w)| w.min(row_sq_dist(points, p, cand)))
                        .collect();
                    let potential: f64 = updated.iter().sum();
                    if best.as_ref().is_none_or(|b| potential < b.0) {
                        best = Some((potential, cand, updated));
                    }
                }
                let (_, next, updated) = best.expect("at least one trial");
                picks.push(next);
                d2 = updated;
            }
            picks
        }
    };
    DMatrix::from_fn(k, points.ncols(), |c, j| points[(picks[c], j)])
}

fn weighted_pick(weights: &[f64], target: f64) -> usize {
    let mut acc = 0.0;
    for (p, &w) in weights.iter().enumerate() {
        acc += w;
        if w > 0.0 && target < acc {
            return p;
        }
    }
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .expect("positive total")
}

fn row_sq_dist(points: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    (0..points.ncols())
        .map(|j| (points[(a, j)] - points[(b, j)]).powi(2))
        .sum()
}

/// Lloyd's algorithm from one seeded initialization.
pub fn kmeans_run(
    points: &DMatrix<f64>,
    k: usize,
    init: KMeansInit,
    seed: u64,
) -> Result<KMeansRun> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::param(format!(
            "k must satisfy 1 <= k <= {n}, got {k}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut centroids = initial_centroids(points, k, init, &mut rng);
    let mut assignment = assign(points, &centroids);
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        centroids = update(points, &assignment, &centroids);
        history.push(inertia(points, &centroids, &assignment));
        let next = assign(points, &centroids);
        if next == assignment {
            break;
        }
        assignment = next;
    }
    let total = inertia(points, &centroids, &assignment);
    let mean_intra_distance = assignment
        .iter()
        .enumerate()
        .map(|(p, &c)| sq_dist(points, p, &centroids, c).sqrt())
        .sum::<f64>()
        / n as f64;
    Ok(KMeansRun {
        assignment,
        centroids,
        inertia: total,
        inertia_history: history,
        iterations,
        mean_intra_distance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntraStats {
    pub k: usize,
    /// Mean over restarts of the mean intra-cluster distance.
    pub mean: f64,
    /// Population standard deviation of the same quantity over restarts.
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansEnsemble {
    pub best: KMeansRun,
    pub stats: IntraStats,
}

/// `n_init` restarts; restart `i` is seeded with `derive_seed(seed, i)`.
pub fn kmeans_ensemble(
    coords: &MdsEmbedding,
    k: usize,
    n_init: usize,
    seed: u64,
) -> Result<KMeansEnsemble> {
    kmeans_ensemble_with(&coords.coords, k, n_init, KMeansInit::default(), seed)
}

pub fn kmeans_ensemble_with(
    points: &DMatrix<f64>,
    k: usize,
    n_init: usize,
    init: KMeansInit,
    seed: u64,
) -> Result<KMeansEnsemble> {
    if n_init == 0 {
        return Err(Error::param("n_init must be at least 1"));
    }
    if k == 0 || k > points.nrows() {
        return Err(Error::param(format!(
            "k = {k} must lie in 1..={} (number of points)",
            points.nrows()
        )));
    }
    let runs: Vec<KMeansRun> = (0..n_init)
        .into_par_iter()
        .map(|i| kmeans_run(points, k, init, derive_seed(seed, i as u64)))
        .collect::<Result<_>>()?;
    // Shifting by the first run keeps identical outcomes at exactly zero spread.
    let base = runs[0].mean_intra_distance;
    let shifted: Vec<f64> = runs.iter().map(|r| r.mean_intra_distance - base).collect();
    let shift_mean = shifted.iter().sum::<f64>() / shifted.len() as f64;
    let mean = base + shift_mean;
    let sd = (shifted
        .iter()
        .map(|x| (x - shift_mean).powi(2))
        .sum::<f64>()
        / shifted.len() as f64)
        .sqrt();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("n_init >= 1");
    Ok(KMeansEnsemble {
        best,
        stats: IntraStats { k, mean, sd },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalK {
    pub k_star: usize,
    pub intra_stats: Vec<IntraStats>,
    /// Lowest-inertia run at `k_star`.
    pub best: KMeansRun,
}

/// Largest `k` in range whose restart spread of intra-cluster distance is minimal.
///
/// Standard deviations within `1e-9` times the largest intra-cluster mean of
/// the minimum count as ties.
pub fn optimal_k(
    coords: &MdsEmbedding,
    k_range: (usize, usize),
    n_init: usize,
    seed: u64,
) -> Result<OptimalK> {
    optimal_k_with(coords, k_range, n_init, KMeansInit::default(), seed)
}

pub fn optimal_k_with(
    coords: &MdsEmbedding,
    k_range: (usize, usize),
    n_init: usize,
    init: KMeansInit,
    seed: u64,
) -> Result<OptimalK> {
    let (lo, hi) = k_range;
    if lo < 1 || lo > hi || hi > coords.n_points() {
        return Err(Error::param(format!(
            "k range ({lo}, {hi}) must satisfy 1 <= k_lo <= k_hi <= {}",
            coords.n_points()
        )));
    }
    if n_init < 2 {
        return Err(Error::param(
            "optimal k needs n_init >= 2 to measure a spread",
        ));
    }
    let ensembles: Vec<KMeansEnsemble> = (lo..=hi)
        .map(|k| kmeans_ensemble_with(&coords.coords, k, n_init, init, derive_seed(seed, k as u64)))
        .collect::<Result<_>>()?;
    let min_sd = ensembles
        .iter()
        .map(|e| e.stats.sd)
        .fold(f64::INFINITY, f64::min);
    let scale = ensembles.iter().map(|e| e.stats.mean).fold(0.0, f64::max);
    let tol = 1e-9 * scale;
    let pick = ensembles
        .iter()
        .rposition(|e| e.stats.sd <= min_sd + tol)
        .expect("non-empty range");
    Ok(OptimalK {
        k_star: ensembles[pick].stats.k,
        intra_stats: ensembles.iter().map(|e| e.stats).collect(),
        best: ensembles[pick].best.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    /// Row-stochastic; rows without outgoing transitions are all zero.
    pub probs: Vec<Vec<f64>>,
    pub counts: Vec<Vec<usize>>,
    pub empty_rows: Vec<bool>,
}

pub fn transition_matrix(states: &[usize], k: usize) -> Result<TransitionMatrix> {
    if states.len() < 2 {
        return Err(Error::param(
            "need at least two states to count transitions",
        ));
    }
    if let Some((i, &s)) = states.iter().enumerate().find(|(_, &s)| s >= k) {
        return Err(Error::data(format!(
            "state {s} at position {i} outside 0..{k}"
        )));
    }
    let mut counts = vec![vec![0usize; k]; k];
    for w in states.windows(2) {
        counts[w[0]][w[1]] += 1;
    }
    let mut probs = vec![vec![0.0; k]; k];
    let mut empty_rows = vec![false; k];
    for a in 0..k {
        let total: usize = counts[a].iter().sum();
        if total == 0 {
            empty_rows[a] = true;
            continue;
        }
        for b in 0..k {
            probs[a][b] = counts[a][b] as f64 / total as f64;
        }
    }
    Ok(TransitionMatrix {
        probs,
        counts,
        empty_rows,
    })
}

/// Relabels clusters by ascending mean of `values` over member epochs.
///
/// Equal means keep first-occurrence order; clusters with no members go last.
/// Returns the relabeled sequence and `old -> new` mapping.
pub fn order_states_by(
    assignments: &[usize],
    values: &[f64],
    k: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if assignments.len() != values.len() {
        return Err(Error::param("one value per assignment is required"));
    }
    if let Some(&s) = assignments.iter().find(|&&s| s >= k) {
        return Err(Error::data(format!("state {s} outside 0..{k}")));
    }
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    let mut first = vec![usize::MAX; k];
    for (i, (&s, &v)) in assignments.iter().zip(values).enumerate() {
        sums[s] += v;
        counts[s] += 1;
        first[s] = first[s].min(i);
    }
    let means: Vec<f64> = (0..k)
        .map(|c| {
            if counts[c] == 0 {
                f64::INFINITY
            } else {
                sums[c] / counts[c] as f64
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(first[a].cmp(&first[b])));
    let mut mapping = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        mapping[old] = new;
    }
    Ok((assignments.iter().map(|&s| mapping[s]).collect(), mapping))
}

pub fn order_states(
    assignments: &[usize],
    correlations: &[CorrelationMatrix],
    k: usize,
) -> Result<Vec<usize>> {
    let means: Vec<f64> = correlations
        .iter()
        .map(CorrelationMatrix::mean_offdiag)
        .collect();
    order_states_by(assignments, &means, k).map(|(relabeled, _)| relabeled)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatesConfig {
    pub epsilon: f64,
    pub k_dim: usize,
    pub k_range: (usize, usize),
    pub n_init: usize,
    pub init: KMeansInit,
    pub seed: u64,
}

impl Default for StatesConfig {
    fn default() -> Self {
        Self {
            epsilon: powermap::EPSILON_STATES,
            k_dim: 3,
            k_range: (2, 8),
            n_init: 500,
            init: KMeansInit::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MarketStateModel {
    pub k: usize,
    pub labels: Vec<String>,
    /// Ordered state per epoch (0 = calmest).
    pub assignments: Vec<usize>,
    /// `k x dims`, rows in ordered-state order.
    pub centroids: DMatrix<f64>,
    pub intra_stats: Vec<IntraStats>,
    pub transition: TransitionMatrix,
    pub state_mean_c: Vec<f64>,
    pub similarity: SimilarityMatrix,
    pub embedding: MdsEmbedding,
}

/// Similarity -> MDS -> k-means (optimal k unless the range is a single value) -> ordering.
pub fn fit_market_states(
    correlations: &[CorrelationMatrix],
    config: &StatesConfig,
) -> Result<MarketStateModel> {
    let similarity = similarity_matrix(correlations, config.epsilon)?;
    let embedding = classical_mds(&similarity.d, config.k_dim)?;
    let (k, intra_stats, best) = if config.k_range.0 == config.k_range.1 {
        let k = config.k_range.0;
        let ens = kmeans_ensemble_with(
            &embedding.coords,
            k,
            config.n_init,
            config.init,
            derive_seed(config.seed, k as u64),
        )?;
        (k, vec![ens.stats], ens.best)
    } else {
        let opt = optimal_k_with(
            &embedding,
            config.k_range,
            config.n_init,
            config.init,
            config.seed,
        )?;
        (opt.k_star, opt.intra_stats, opt.best)
    };
    let means: Vec<f64> = correlations
        .iter()
        .map(CorrelationMatrix::mean_offdiag)
        .collect();
    let (assignments, mapping) = order_states_by(&best.assignment, &means, k)?;
    let mut centroids = DMatrix::zeros(k, best.centroids.ncols());
    for old in 0..k {
        centroids.set_row(mapping[old], &best.centroids.row(old));
    }
    let mut state_mean_c = vec![f64::NAN; k];
    for s in 0..k {
        let members: Vec<f64> = assignments
            .iter()
            .zip(&means)
            .filter(|(&a, _)| a == s)
            .map(|(_, &m)| m)
            .collect();
        if !members.is_empty() {
            state_mean_c[s] = members.iter().sum::<f64>() / members.len() as f64;
        }
    }
    let transition = transition_matrix(&assignments, k)?;
    Ok(MarketStateModel {
        k,
        labels: similarity.labels.clone(),
        assignments,
        centroids,
        intra_stats,
        transition,
        state_mean_c,
        similarity,
        embedding,
    })
}

#[derive(Serialize)]
struct AssignmentRecord<'a> {
    tau: &'a str,
    state: usize,
}

#[derive(Serialize)]
struct ModelJson<'a> {
    k: usize,
    assignments: Vec<AssignmentRecord<'a>>,
    transition: &'a TransitionMatrix,
    intra_stats: &'a [IntraStats],
    state_mean_c: &'a [f64],
    mds_eigenvalues: &'a [f64],
}

impl MarketStateModel {
    /// Writes `states.json`, `points.csv` and `similarity.csv` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        let json = ModelJson {
            k: self.k,
            assignments: self
                .labels
                .iter()
                .zip(&self.assignments)
                .map(|(l, &s)| AssignmentRecord {
                    tau: l,
                    state: s + 1,
                })
                .collect(),
            transition: &self.transition,
            intra_stats: &self.intra_stats,
            state_mean_c: &self.state_mean_c,
            mds_eigenvalues: &self.embedding.eigvals_used,
        };
        output::write_json(&dir.join("states.json"), &json)?;
        let axes = ["x", "y", "z"];
        let dims = self.embedding.dims();
        let mut header: Vec<String> = vec!["tau".into()];
        header.extend((0..dims).map(|j| {
            axes.get(j)
                .map_or_else(|| format!("d{j}"), |a| a.to_string())
        }));
        header.push("state".into());
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        output::write_rows_csv(
            &dir.join("points.csv"),
            &header_refs,
            self.labels.iter().enumerate().map(|(i, l)| {
                let mut row = vec![l.clone()];
                row.extend((0..dims).map(|j| self.embedding.coords[(i, j)].to_string()));
                row.push((self.assignments[i] + 1).to_string());
                row
            }),
        )?;
        output::write_matrix_csv(
            &dir.join("similarity.csv"),
            &self.similarity.d,
            &self.labels,
        )
    }
}
