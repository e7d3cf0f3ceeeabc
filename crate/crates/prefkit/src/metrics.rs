//! Evaluation metrics and the tabular metric report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Query, QueryPool, Response};
use crate::likelihood::MixtureParams;
use crate::scalar::{dot, log_sum_exp, norm, sq_dist, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("no samples")]
    Empty,
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("shape mismatch")]
    Shape,
    #[error("optimal reward is not positive; relative reward undefined")]
    Undefined,
}

/// Cosine similarity `ω*·ω / (‖ω*‖‖ω‖)`.
pub fn alignment_point<T: Real>(truth: &[T], est: &[T]) -> Result<T, MetricError> {
    let (a, b) = (norm(truth), norm(est));
    if a == T::zero() || b == T::zero() {
        return Err(MetricError::ZeroNorm);
    }
    Ok(dot(truth, est) / (a * b))
}

/// Sample-averaged alignment.
pub fn alignment<T: Real>(truth: &[T], samples: &[Vec<T>]) -> Result<T, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut s = T::zero();
    for w in samples {
        s += alignment_point(truth, w)?;
    }
    Ok(s / T::count(samples.len()))
}

/// Position of the pool argmax of `ω·ψ`, lowest position on ties.
pub fn planner<T: Real>(omega: &[T], pool: &QueryPool<T>) -> usize {
    let mut best = 0;
    let mut best_r = T::neg_infinity();
    for (i, t) in pool.trajectories().iter().enumerate() {
        let r = dot(omega, t.features.as_slice());
        if r > best_r {
            best_r = r;
            best = i;
        }
    }
    best
}

/// `R_ω*(Π(ω*)) − R_ω*(Π(ω))`.
pub fn regret<T: Real>(omega: &[T], truth: &[T], pool: &QueryPool<T>) -> T {
    let opt = dot(truth, pool.features_at(planner(truth, pool)));
    let got = dot(truth, pool.features_at(planner(omega, pool)));
    opt - got
}

/// `R_ω*(Π(ω̂)) / R_ω*(Π(ω*))`, undefined when the optimum is not positive.
pub fn relative_reward<T: Real>(est: &[T], truth: &[T], pool: &QueryPool<T>) -> Result<T, MetricError> {
    let opt = dot(truth, pool.features_at(planner(truth, pool)));
    if !(opt > T::zero()) {
        return Err(MetricError::Undefined);
    }
    Ok(dot(truth, pool.features_at(planner(est, pool))) / opt)
}

/// `ln mean_ω Π_test P(response | query, ω)`, given per-sample log-likelihoods
/// of the whole test set.
pub fn heldout_loglik_from<T: Real>(per_sample_log: &[T]) -> Result<T, MetricError> {
    if per_sample_log.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(log_sum_exp(per_sample_log) - T::count(per_sample_log.len()).ln())
}

/// Held-out log-likelihood of `test` under a sample belief; `loglik` scores
/// one sample against one test item.
pub fn heldout_loglik<T: Real, P>(
    samples: &[P],
    test: &[(Query<T>, Response<T>)],
    mut loglik: impl FnMut(&P, &Query<T>, &Response<T>) -> T,
) -> Result<T, MetricError> {
    if test.is_empty() {
        return Err(MetricError::Empty);
    }
    let per: Vec<T> = samples.iter().map(|s| test.iter().map(|(q, r)| loglik(s, q, r)).sum()).collect();
    heldout_loglik_from(&per)
}

/// Minimum-cost perfect assignment on a square cost matrix. Returns
/// `assign[row] = column`. O(n³) shortest augmenting path.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

fn sq_cost<T: Real>(a: &[Vec<T>], b: &[Vec<T>]) -> Vec<Vec<f64>> {
    a.iter().map(|x| b.iter().map(|y| sq_dist(x, y).f64()).collect()).collect()
}

/// Column permutation of `est` best matching `truth`: `perm[m]` is the
/// estimate column assigned to truth column `m`.
pub fn match_columns<T: Real>(truth: &[Vec<T>], est: &[Vec<T>]) -> Vec<usize> {
    hungarian(&sq_cost(truth, est))
}

/// `min_π Σ_m ‖ω*_m − ω̂_π(m)‖²`.
pub fn mse_hungarian<T: Real>(truth: &MixtureParams<T>, est: &MixtureParams<T>) -> Result<T, MetricError> {
    if truth.weights.len() != est.weights.len()
        || truth.weights.iter().chain(&est.weights).any(|w| w.len() != truth.weights[0].len())
    {
        return Err(MetricError::Shape);
    }
    let perm = match_columns(&truth.weights, &est.weights);
    Ok(truth.weights.iter().enumerate().map(|(m, w)| sq_dist(w, &est.weights[perm[m]])).sum())
}

/// Unimodal estimate against every truth column, `Σ_m ‖ω*_m − ω̂‖²`.
pub fn mse_unimodal<T: Real>(truth: &MixtureParams<T>, est: &[T]) -> Result<T, MetricError> {
    if truth.weights.iter().any(|w| w.len() != est.len()) {
        return Err(MetricError::Shape);
    }
    Ok(truth.weights.iter().map(|w| sq_dist(w, est)).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: usize,
    pub seed: u64,
    pub metric: String,
    pub value: Option<f64>,
}

/// Long-format table of per-iteration measurements.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn new(config_digest: impl Into<String>) -> Self {
        MetricReport { config_digest: config_digest.into(), seeds: Vec::new(), rows: Vec::new() }
    }

    pub fn record(&mut self, iteration: usize, seed: u64, metric: &str, value: Option<f64>) {
        let value = value.filter(|v| v.is_finite());
        self.rows.push(MetricRow { iteration, seed, metric: metric.to_string(), value });
    }

    pub fn extend(&mut self, other: MetricReport) {
        for s in other.seeds {
            if !self.seeds.contains(&s) {
                self.seeds.push(s);
            }
        }
        self.rows.extend(other.rows);
    }

    /// Values of one metric at one iteration across seeds.
    pub fn values(&self, metric: &str, iteration: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric && r.iteration == iteration)
            .filter_map(|r| r.value)
            .collect()
    }

    pub fn last_iteration(&self) -> usize {
        self.rows.iter().map(|r| r.iteration).max().unwrap_or(0)
    }

    /// Tab-separated text: comment header, then `iteration seed metric value`.
    pub fn to_tsv(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut out = format!("# config_digest={}\n# seeds={}\niteration\tseed\tmetric\tvalue\n", self.config_digest, seeds.join(","));
        for r in &self.rows {
            let v = r.value.map_or_else(|| "null".to_string(), |v| format!("{v}"));
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.iteration, r.seed, r.metric, v));
        }
        out
    }
}

/// Median of a slice; NaN on empty input.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_examples() {
        let w = vec![0.6f64, 0.8];
        assert!((alignment(&w, &[w.clone()]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(alignment(&w, &[vec![-0.8, 0.6]]).unwrap(), 0.0);
        assert!(alignment(&w, &[w.clone(), vec![-0.6, -0.8]]).unwrap().abs() < 1e-15);
        assert_eq!(alignment(&w, &[vec![0.0, 0.0]]), Err(MetricError::ZeroNorm));
        assert_eq!(alignment::<f64>(&w, &[]), Err(MetricError::Empty));
    }

    #[test]
    fn regret_examples() {
        let pool = QueryPool::from_features(vec![vec![1.0], vec![0.0]]).unwrap();
        assert_eq!(regret(&[1.0], &[1.0], &pool), 0.0);
        assert_eq!(regret(&[-1.0], &[1.0], &pool), 1.0);
        let pool = QueryPool::from_features(vec![vec![2.0, 0.0], vec![1.5, 1.0]]).unwrap();
        assert_eq!(relative_reward(&[0.0, 1.0], &[1.0, 0.0], &pool).unwrap(), 0.75);
        assert_eq!(relative_reward(&[0.0, 1.0], &[-1.0, 0.0], &QueryPool::from_features(vec![vec![1.0, 0.0]]).unwrap()), Err(MetricError::Undefined));
    }

    #[test]
    fn heldout_examples() {
        let v = heldout_loglik_from(&[0.5f64.ln()]).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
        let v = heldout_loglik_from(&[0.0f64.ln(), 1.0f64.ln()]).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn hungarian_examples() {
        let t = MixtureParams { weights: vec![vec![1.0, 0.0], vec![0.0, 1.0]], coeffs: vec![0.5, 0.5] };
        let e = MixtureParams { weights: vec![vec![0.0, 1.0], vec![0.0, 0.0]], coeffs: vec![0.5, 0.5] };
        assert_eq!(mse_hungarian(&t, &e).unwrap(), 1.0);
        let swapped = MixtureParams { weights: vec![t.weights[1].clone(), t.weights[0].clone()], coeffs: vec![0.5, 0.5] };
        assert_eq!(mse_hungarian(&t, &swapped).unwrap(), 0.0);
        assert_eq!(mse_unimodal(&t, &[0.0, 0.0]).unwrap(), 2.0);
    }

    #[test]
    fn report_tsv() {
        let mut r = MetricReport::new("abc");
        r.seeds.push(3);
        r.record(0, 3, "alignment", Some(0.25));
        r.record(1, 3, "relative_reward", None);
        let s = r.to_tsv();
        assert_eq!(s, "# config_digest=abc\n# seeds=3\niteration\tseed\tmetric\tvalue\n0\t3\talignment\t0.25\n1\t3\trelative_reward\tnull\n");
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
