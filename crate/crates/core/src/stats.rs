//! Order-independent reductions and the two-sample tests used by the checks.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::StreamKey;

/// Pairwise (cascade) summation; the result depends only on the input order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Sample mean and unbiased variance.
pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = pairwise_sum(v) / n;
    if v.len() == 1 {
        return (m, 0.0);
    }
    let sq: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
    (m, pairwise_sum(&sq) / (n - 1.0))
}

/// Mean and standard error of the mean.
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let (m, var) = mean_var(v);
    (m, (var / v.len() as f64).sqrt())
}

/// Empirical quantile (linear interpolation between order statistics).
pub fn quantile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Kolmogorov distribution tail `Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test (ties handled by stepping over distinct values).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    let ne = (n1 * n2 / (n1 + n2)).sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_q((ne + 0.12 + 0.11 / ne) * d),
    }
}

/// Result of a binned two-sample chi-square comparison of count data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Bin lower edges (the last bin is open-ended).
    pub bins: Vec<u64>,
    pub counts_a: Vec<u64>,
    pub counts_b: Vec<u64>,
}

fn bin_edges(pooled: &[u64], min_expected: u64) -> Vec<u64> {
    let max = pooled.iter().copied().max().unwrap_or(0);
    let mut hist = vec![0u64; max as usize + 1];
    for &v in pooled {
        hist[v as usize] += 1;
    }
    // Merge from the top so every bin holds at least `min_expected` pooled values.
    let mut edges = Vec::new();
    let mut acc = 0u64;
    for v in (0..=max as usize).rev() {
        acc += hist[v];
        if acc >= min_expected {
            edges.push(v as u64);
            acc = 0;
        }
    }
    if edges.is_empty() || acc > 0 {
        // leftover mass at the bottom joins the lowest bin
        if let Some(last) = edges.last_mut() {
            *last = 0;
        } else {
            edges.push(0);
        }
    }
    edges.reverse();
    edges[0] = 0;
    edges
}

fn histogram(v: &[u64], edges: &[u64]) -> Vec<u64> {
    let mut h = vec![0u64; edges.len()];
    for &x in v {
        let k = edges.partition_point(|&e| e <= x) - 1;
        h[k] += 1;
    }
    h
}

fn chi2_stat(a: &[u64], b: &[u64], n1: f64, n2: f64) -> f64 {
    let (ra, rb) = ((n2 / n1).sqrt(), (n1 / n2).sqrt());
    a.iter()
        .zip(b)
        .filter(|(x, y)| **x + **y > 0)
        .map(|(&x, &y)| {
            let d = x as f64 * ra - y as f64 * rb;
            d * d / (x + y) as f64
        })
        .sum()
}

/// Two-sample chi-square distance over pooled count bins with a permutation p-value.
pub fn chi_square_permutation(a: &[u64], b: &[u64], permutations: usize, key: StreamKey) -> ChiSquareResult {
    let pooled: Vec<u64> = a.iter().chain(b).copied().collect();
    let edges = bin_edges(&pooled, 10);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let ha = histogram(a, &edges);
    let hb = histogram(b, &edges);
    let observed = chi2_stat(&ha, &hb, n1, n2);
    let mut rng = key.rng();
    let mut work = pooled.clone();
    let mut exceed = 0usize;
    for _ in 0..permutations {
        work.shuffle(&mut rng);
        let (pa, pb) = work.split_at(a.len());
        let s = chi2_stat(&histogram(pa, &edges), &histogram(pb, &edges), n1, n2);
        if s >= observed - 1e-12 {
            exceed += 1;
        }
    }
    ChiSquareResult {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        bins: edges,
        counts_a: ha,
        counts_b: hb,
    }
}

/// Ordinary least squares `y ≈ X·c` for a handful of columns; returns `(c, residual_norm)`.
pub fn least_squares(columns: &[Vec<f64>], y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let k = columns.len();
    let n = y.len();
    if k == 0 || n < k || columns.iter().any(|c| c.len() != n) {
        return None;
    }
    // Normal equations with partial-pivot Gaussian elimination; k is tiny.
    let mut m = vec![vec![0.0; k + 1]; k];
    for i in 0..k {
        for j in 0..k {
            m[i][j] = columns[i].iter().zip(&columns[j]).map(|(a, b)| a * b).sum();
        }
        m[i][k] = columns[i].iter().zip(y).map(|(a, b)| a * b).sum();
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for row in 0..k {
            if row != col {
                let f = m[row][col] / m[col][col];
                for c in col..=k {
                    m[row][c] -= f * m[col][c];
                }
            }
        }
    }
    let coef: Vec<f64> = (0..k).map(|i| m[i][k] / m[i][i]).collect();
    let res: f64 = (0..n)
        .map(|r| {
            let fit: f64 = (0..k).map(|i| coef[i] * columns[i][r]).sum();
            (y[r] - fit).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    Some((coef, res))
}

/// Simple linear regression `y ≈ a + b·x`; returns `(a, b, residual_norm, stderr_b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64, f64)> {
    let ones = vec![1.0; x.len()];
    let (c, res) = least_squares(&[ones, x.to_vec()], y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let se = if x.len() > 2 && sxx > 0.0 {
        (res * res / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Some((c[0], c[1], res, se))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64 * 0.1).collect();
        assert!((pairwise_sum(&v) - v.iter().sum::<f64>()).abs() < 1e-9);
    }

    #[test]
    fn ks_identical_and_shifted() {
        let a: Vec<f64> = (0..500).map(|i| i as f64).collect();
        assert!(ks_two_sample(&a, &a).p_value > 0.99);
        let b: Vec<f64> = a.iter().map(|x| x + 250.0).collect();
        assert!(ks_two_sample(&a, &b).p_value < 1e-6);
    }

    #[test]
    fn regression_on_exact_data() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 3.0 * v).collect();
        let (a, b, r, _) = linear_fit(&x, &y).unwrap();
        assert!((a - 2.0).abs() < 1e-12 && (b - 3.0).abs() < 1e-12 && r < 1e-9);
    }

    #[test]
    fn chi_square_detects_difference() {
        let a: Vec<u64> = (0..2000).map(|i| i % 5).collect();
        let b: Vec<u64> = (0..2000).map(|i| i % 7).collect();
        let r = chi_square_permutation(&a, &b, 199, StreamKey::new(1));
        assert!(r.p_value < 0.01);
        let same = chi_square_permutation(&a, &a, 199, StreamKey::new(1));
        assert!(same.p_value > 0.5);
        assert_eq!(same.bins[0], 0);
    }

    #[test]
    fn quantiles() {
        let v: Vec<f64> = (0..101).map(|i| i as f64).collect();
        assert_eq!(quantile(&v, 0.99), 99.0);
        assert_eq!(quantile(&v, 0.5), 50.0);
    }
}
