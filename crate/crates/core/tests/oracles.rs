//! Library results checked against independent reference computations.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rmtcorr::correlation::{pearson_matrix, rolling_correlations};
use rmtcorr::dynamics::{lag1_effect_tstat, lagged_relation, pearson, stats_series};
use rmtcorr::modes::eigendecompose_matrix;
use rmtcorr::states::{
    classical_mds, correlation_distance, kmeans_ensemble, order_states, similarity_matrix,
    transition_matrix,
};
use rmtcorr::synth::{block_surrogate, regime_surrogate, simulate_chain, CorrelationTarget};
use rmtcorr::{CorrelationMatrix, ReturnMatrix};

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("A{i}")).collect()
}

/// Cyclic Jacobi rotations; returns eigenvalues in ascending order.
fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[test]
fn eigenpairs_match_jacobi_on_random_6x6() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data = DMatrix::from_fn(6, 40, |_, _| rng.random::<f64>() - 0.5);
    let c = pearson_matrix(&data).unwrap();
    let got = eigendecompose_matrix(&c).unwrap();
    let mut values = got.values.clone();
    values.sort_by(f64::total_cmp);
    let want = jacobi_eigenvalues(&c);
    for (g, w) in values.iter().zip(&want) {
        assert!((g - w).abs() < 1e-9, "{g} vs {w}");
    }
    for (k, &lambda) in got.values.iter().enumerate() {
        let v = got.vectors.column(k);
        assert!((&c * v - v * lambda).norm() < 1e-9);
        assert!((v.norm() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn kmeans_recovers_ten_blocks() {
    let sizes = [20, 20, 20, 20, 19, 19, 19, 19, 19, 19];
    let blocks: Vec<(usize, f64)> = sizes
        .iter()
        .enumerate()
        .map(|(b, &s)| (s, 0.15 + 0.05 * b as f64))
        .collect();
    let n: usize = sizes.iter().sum();
    let panel = block_surrogate(n, &blocks, 5000, 10).unwrap();
    let c = CorrelationMatrix::new(pearson_matrix(&panel.data).unwrap(), 0, 5000, ids(n)).unwrap();
    let emb = classical_mds(&correlation_distance(&c), 10).unwrap();
    let ens = kmeans_ensemble(&emb, 10, 50, 3).unwrap();
    let truth: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    // Purity: each cluster counts its majority block.
    let mut table = vec![vec![0usize; 10]; 10];
    for (&cl, &b) in ens.best.assignment.iter().zip(&truth) {
        table[cl][b] += 1;
    }
    let majority: usize = table.iter().map(|r| *r.iter().max().unwrap()).sum();
    let purity = majority as f64 / n as f64;
    assert!(purity >= 0.95, "purity {purity}");
}

#[test]
fn similarity_orders_by_correlation_level() {
    let epochs: Vec<CorrelationMatrix> = [0.1, 0.12, 0.7]
        .iter()
        .enumerate()
        .map(|(e, &u)| {
            let target = CorrelationTarget::constant(30, u).unwrap();
            let base = rmtcorr::synth::gaussian_panel(30, 400, 1.0, 100 + e as u64).unwrap();
            let panel = rmtcorr::synth::correlate_panel(&base, &target).unwrap();
            CorrelationMatrix::new(pearson_matrix(&panel.data).unwrap(), e, 400, ids(30)).unwrap()
        })
        .collect();
    for eps in [0.0, 0.6] {
        let s = similarity_matrix(&epochs, eps).unwrap();
        assert!(s.d[(0, 1)] < s.d[(0, 2)], "eps {eps}: {}", s.d);
    }
}

#[test]
fn chain_counts_recover_transition_probabilities() {
    let p = vec![
        vec![0.7, 0.2, 0.1],
        vec![0.3, 0.4, 0.3],
        vec![0.05, 0.15, 0.8],
    ];
    let path = simulate_chain(&p, 100_000, 0, 17).unwrap();
    let got = transition_matrix(&path, 3).unwrap();
    for a in 0..3 {
        for b in 0..3 {
            assert!(
                (got.probs[a][b] - p[a][b]).abs() <= 0.01,
                "P[{a}][{b}] = {}",
                got.probs[a][b]
            );
        }
    }
}

#[test]
fn four_regimes_are_labelled_by_mean() {
    let levels = [0.4, 0.1, 0.7, 0.25];
    let p = vec![vec![0.25; 4]; 4];
    let rp = regime_surrogate(30, 200, &levels, &p, 60, 8).unwrap();
    let returns = ReturnMatrix::from_matrix(rp.panel.data.clone()).unwrap();
    let corrs: Vec<CorrelationMatrix> = rp
        .epoch_ends()
        .iter()
        .map(|&tau| rmtcorr::correlation::epoch_correlation(&returns, tau, 200).unwrap())
        .collect();
    // Cluster labels are the generating regimes, deliberately out of level order.
    let ordered = order_states(&rp.regimes, &corrs, 4).unwrap();
    for (&regime, &state) in rp.regimes.iter().zip(&ordered) {
        let rank = levels.iter().filter(|&&u| u < levels[regime]).count();
        assert_eq!(state, rank);
    }
}

#[test]
fn tstat_matches_textbook_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let len = 120;
    let lmin: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
    let noise: Vec<f64> = (0..len).map(|_| std_normal(&mut rng) * 0.1).collect();
    let mut mu = vec![0.0; len];
    for t in 1..len {
        mu[t] = lmin[t - 1] + noise[t];
    }
    let window = 50;
    let got = lag1_effect_tstat(&mu, &lmin, window).unwrap();
    assert_eq!(got.len(), len - window);
    for (k, &g) in got.iter().enumerate() {
        let x = &lmin[k..k + window];
        let y = &mu[k + 1..k + 1 + window];
        let want = textbook_tstat(x, y);
        assert!(
            (g - want).abs() < 1e-9 * want.abs().max(1.0),
            "{g} vs {want}"
        );
    }
}

/// Box-Muller, kept apart from the library's own sampler.
fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Normal equations with raw sums, then `b / se(b)`.
fn textbook_tstat(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let a = (sy - b * sx) / n;
    let sse: f64 = x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum();
    let s2 = sse / (n - 2.0);
    let var_b = n * s2 / (n * sxx - sx * sx);
    b / var_b.sqrt()
}

#[test]
fn regime_switch_moves_the_moments() {
    let p = vec![vec![0.0, 1.0], vec![0.0, 1.0]];
    let rp = regime_surrogate(40, 1000, &[0.1, 0.7], &p, 2, 5).unwrap();
    let returns = ReturnMatrix::from_matrix(rp.panel.data.clone()).unwrap();
    let corrs = rolling_correlations(&returns, 50, 10).unwrap();
    let stats = stats_series(&corrs, 0.01).unwrap();
    let mean_c: Vec<f64> = stats.iter().map(|s| s.mean_c).collect();
    let variance: Vec<f64> = stats.iter().map(|s| s.variance).collect();
    let kurtosis: Vec<f64> = stats.iter().map(|s| s.kurtosis.unwrap()).collect();
    let half = stats.len() / 2;
    let early = mean_c[..half - 3].iter().sum::<f64>() / (half - 3) as f64;
    let late = mean_c[half + 3..].iter().sum::<f64>() / (stats.len() - half - 3) as f64;
    assert!(late - early > 0.4, "{early} -> {late}");
    assert!(pearson(&mean_c, &variance) < 0.0);
    assert!(pearson(&mean_c, &kurtosis) > 0.0);
}

#[test]
fn lagged_scatter_loosens_with_lag() {
    let levels: Vec<f64> = (0..8).map(|i| 0.05 + 0.1 * i as f64).collect();
    let k = levels.len();
    let p: Vec<Vec<f64>> = (0..k)
        .map(|a| {
            let mut row = vec![0.0; k];
            let up = (a + 1).min(k - 1);
            let down = a.saturating_sub(1);
            row[a] += 0.6;
            row[up] += 0.2;
            row[down] += 0.2;
            row
        })
        .collect();
    let rp = regime_surrogate(30, 20, &levels, &p, 400, 12).unwrap();
    let returns = ReturnMatrix::from_matrix(rp.panel.data.clone()).unwrap();
    let corrs = rolling_correlations(&returns, 40, 10).unwrap();
    let stats = stats_series(&corrs, 0.01).unwrap();
    let x: Vec<f64> = stats.iter().map(|s| s.mean_c).collect();
    let y: Vec<f64> = stats.iter().map(|s| s.mean_abs_c).collect();
    let rel: Vec<_> = (0..4)
        .map(|l| lagged_relation(&x, &y, l).unwrap())
        .collect();
    for w in rel.windows(2) {
        assert!(
            w[1].pearson_r.abs() < w[0].pearson_r.abs(),
            "r at lag {} = {}, lag {} = {}",
            w[0].lag,
            w[0].pearson_r,
            w[1].lag,
            w[1].pearson_r
        );
        assert!(w[1].residual_variance() > w[0].residual_variance());
    }
}
