//! Batch query generation: shrink the candidate set by worst-case volume
//! removal, then pick `k` diverse members of it.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{score_candidates, AcqError, AcquisitionKind};
use crate::belief::{ModelContext, ParamPoint};
use crate::domain::{feature_diff, DomainError, Query};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BatchError {
    #[error("need at least {need} candidates, have {have}")]
    TooFewCandidates { need: usize, have: usize },
    #[error("invalid batch configuration: {0}")]
    Config(String),
    #[error("batch candidates must be pairwise choice queries")]
    NotPairwise,
    #[error("kernel is not positive semidefinite (pivot {0:e})")]
    NotPsd(f64),
    #[error(transparent)]
    Acq(#[from] AcqError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

type Result<T> = std::result::Result<T, BatchError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMethod {
    Greedy,
    Medoids,
    BoundaryMedoids,
    SuccessiveElimination,
    DppMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DppEll {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchConfig {
    pub k: usize,
    pub reduced_size: usize,
    pub method: BatchMethod,
    pub dpp_gamma: f64,
    pub dpp_ell: DppEll,
    pub medoid_iters: usize,
    pub seed: u64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            k: 10,
            reduced_size: 200,
            method: BatchMethod::Greedy,
            dpp_gamma: 1.0,
            dpp_ell: DppEll::Auto,
            medoid_iters: 50,
            seed: 0,
        }
    }
}

impl BatchConfig {
    pub fn validate(&self, n_candidates: usize) -> Result<()> {
        if self.k == 0 {
            return Err(BatchError::Config("k must be positive".into()));
        }
        if self.k > self.reduced_size {
            return Err(BatchError::Config(format!("k = {} exceeds reduced_size = {}", self.k, self.reduced_size)));
        }
        if !(self.dpp_gamma >= 0.0) || !self.dpp_gamma.is_finite() {
            return Err(BatchError::Config("dpp_gamma must be finite and non-negative".into()));
        }
        if let DppEll::Fixed(l) = self.dpp_ell {
            if !(l > 0.0) || !l.is_finite() {
                return Err(BatchError::Config("dpp_ell must be positive".into()));
            }
        }
        if n_candidates < self.reduced_size {
            return Err(BatchError::TooFewCandidates { need: self.reduced_size, have: n_candidates });
        }
        Ok(())
    }
}

/// The reduced set `R`: positions into the candidate list, sorted by
/// (score desc, index asc), with scores and query feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduced<T> {
    pub indices: Vec<usize>,
    pub scores: Vec<T>,
    pub phis: Vec<Vec<T>>,
}

/// Positions of the top `size` scores, stable on ties.
pub fn top_by_score<T: Real>(scores: &[T], size: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    order.truncate(size);
    order
}

/// `ψ(a) − ψ(b)` of a pairwise choice.
pub fn query_phi<T: Real>(ctx: &ModelContext<T>, q: &Query<T>) -> Result<Vec<T>> {
    match q {
        Query::Choice { items } if items.len() == 2 => Ok(feature_diff(&ctx.pool, items[0], items[1])?.0),
        _ => Err(BatchError::NotPairwise),
    }
}

/// Keeps the `reduced_size` candidates with the largest worst-case volume
/// removal.
pub fn reduce_dataset<T: Real>(
    ctx: &ModelContext<T>,
    samples: &[ParamPoint<T>],
    candidates: &[Query<T>],
    reduced_size: usize,
) -> Result<Reduced<T>> {
    if candidates.len() < reduced_size {
        return Err(BatchError::TooFewCandidates { need: reduced_size, have: candidates.len() });
    }
    let all = score_candidates(ctx, samples, candidates, AcquisitionKind::WorstCaseVolumeRemoval)?;
    let indices = top_by_score(&all, reduced_size);
    let scores = indices.iter().map(|&i| all[i]).collect();
    let phis = indices.iter().map(|&i| query_phi(ctx, &candidates[i])).collect::<Result<_>>()?;
    Ok(Reduced { indices, scores, phis })
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k > n {
        return Err(BatchError::TooFewCandidates { need: k, have: n });
    }
    Ok(())
}

fn to_f64<T: Real>(phis: &[Vec<T>]) -> Vec<Vec<f64>> {
    phis.iter().map(|p| p.iter().map(|x| x.f64()).collect()).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn dist_matrix(p: &[Vec<f64>]) -> Vec<Vec<f64>> {
    p.par_iter().map(|a| p.iter().map(|b| dist(a, b)).collect()).collect()
}

/// Top-k positions by score.
pub fn batch_greedy<T: Real>(scores: &[T], k: usize) -> Result<Vec<usize>> {
    check_k(scores.len(), k)?;
    Ok(top_by_score(scores, k))
}

fn medoid_cost(d: &[Vec<f64>], medoids: &[usize], pts: &[usize]) -> f64 {
    pts.iter().map(|&i| medoids.iter().map(|&m| d[i][m]).fold(f64::INFINITY, f64::min)).sum()
}

/// PAM over the points at positions `pts`: greedy build, then best-swap
/// improvement for at most `iters` rounds. Returns sorted positions.
fn pam(d: &[Vec<f64>], pts: &[usize], k: usize, iters: usize, seed: u64) -> Vec<usize> {
    if k >= pts.len() {
        let mut all = pts.to_vec();
        all.sort_unstable();
        return all;
    }
    // seed only breaks exact ties in the build step
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter: Vec<f64> = pts.iter().map(|_| rng.random::<f64>()).collect();
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    while medoids.len() < k {
        let mut best: Option<(f64, f64, usize)> = None;
        for (ci, &c) in pts.iter().enumerate() {
            if medoids.contains(&c) {
                continue;
            }
            medoids.push(c);
            let cost = medoid_cost(d, &medoids, pts);
            medoids.pop();
            let better = match best {
                None => true,
                Some((bc, bj, _)) => cost < bc || (cost == bc && jitter[ci] < bj),
            };
            if better {
                best = Some((cost, jitter[ci], c));
            }
        }
        medoids.push(best.expect("k < |pts|").2);
    }
    let mut cost = medoid_cost(d, &medoids, pts);
    for _ in 0..iters {
        let mut best: Option<(f64, usize, usize)> = None;
        for mi in 0..k {
            for &o in pts {
                if medoids.contains(&o) {
                    continue;
                }
                let old = medoids[mi];
                medoids[mi] = o;
                let c = medoid_cost(d, &medoids, pts);
                medoids[mi] = old;
                if c < cost - 1e-12 * cost.abs().max(1.0) && best.is_none_or(|(bc, _, _)| c < bc) {
                    best = Some((c, mi, o));
                }
            }
        }
        match best {
            Some((c, mi, o)) => {
                medoids[mi] = o;
                cost = c;
            }
            None => break,
        }
    }
    medoids.sort_unstable();
    medoids
}

/// One medoid per cluster of a k-medoids clustering of `phis`.
pub fn batch_medoids<T: Real>(phis: &[Vec<T>], k: usize, iters: usize, seed: u64) -> Result<Vec<usize>> {
    check_k(phis.len(), k)?;
    let p = to_f64(phis);
    let d = dist_matrix(&p);
    let pts: Vec<usize> = (0..p.len()).collect();
    Ok(pam(&d, &pts, k, iters, seed))
}

/// Whether each point is a vertex of the convex hull: infeasibility of
/// writing it as a convex combination of the other (distinct) points.
pub fn hull_vertices<T: Real>(phis: &[Vec<T>]) -> Vec<bool> {
    let p = to_f64(phis);
    (0..p.len())
        .into_par_iter()
        .map(|i| {
            // exact duplicates: only the first copy can count as a vertex
            if p[..i].iter().any(|q| *q == p[i]) {
                return false;
            }
            let others: Vec<&Vec<f64>> = p.iter().filter(|q| **q != p[i]).collect();
            if others.is_empty() {
                return true;
            }
            let mut lp = Problem::new(OptimizationDirection::Minimize);
            let vars: Vec<_> = others.iter().map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect();
            lp.add_constraint(vars.iter().map(|&v| (v, 1.0)), ComparisonOp::Eq, 1.0);
            for c in 0..p[i].len() {
                lp.add_constraint(vars.iter().zip(&others).map(|(&v, q)| (v, q[c])), ComparisonOp::Eq, p[i][c]);
            }
            matches!(lp.solve(), Err(microlp::Error::Infeasible))
        })
        .collect()
}

/// Medoids of the hull vertices; when there are fewer than `k` vertices all
/// of them are kept and the rest is filled by score from the interior.
pub fn batch_boundary_medoids<T: Real>(
    phis: &[Vec<T>],
    scores: &[T],
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    check_k(phis.len(), k)?;
    let on_hull = hull_vertices(phis);
    let boundary: Vec<usize> = (0..phis.len()).filter(|&i| on_hull[i]).collect();
    if boundary.len() >= k {
        let p = to_f64(phis);
        let d = dist_matrix(&p);
        return Ok(pam(&d, &boundary, k, iters, seed));
    }
    let mut out = boundary;
    let interior: Vec<usize> = (0..phis.len()).filter(|&i| !on_hull[i]).collect();
    let s: Vec<T> = interior.iter().map(|&i| scores[i]).collect();
    out.extend(top_by_score(&s, k - out.len()).into_iter().map(|j| interior[j]));
    out.sort_unstable();
    Ok(out)
}

/// Repeatedly drops the lower-scored member of the closest remaining pair.
pub fn batch_successive_elimination<T: Real>(phis: &[Vec<T>], scores: &[T], k: usize) -> Result<Vec<usize>> {
    check_k(phis.len(), k)?;
    let p = to_f64(phis);
    let d = dist_matrix(&p);
    let mut alive: Vec<usize> = (0..p.len()).collect();
    while alive.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for (a, &i) in alive.iter().enumerate() {
            for &j in &alive[a + 1..] {
                if d[i][j] < best.0 {
                    best = (d[i][j], i, j);
                }
            }
        }
        let (_, i, j) = best;
        let drop = if scores[i] < scores[j] { i } else { j };
        alive.retain(|&x| x != drop);
    }
    Ok(alive)
}

/// Monte-Carlo estimate of the expected nearest-pair distance among `k`
/// uniform points in `[0,1]^d`.
pub fn auto_ell(k: usize, d: usize, draws: usize, seed: u64) -> f64 {
    if k < 2 || d == 0 || draws == 0 {
        return 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut pts = vec![vec![0.0; d]; k];
    for _ in 0..draws {
        for p in pts.iter_mut() {
            for x in p.iter_mut() {
                *x = rng.random::<f64>();
            }
        }
        let mut near = f64::INFINITY;
        for i in 0..k {
            for j in i + 1..k {
                near = near.min(dist(&pts[i], &pts[j]));
            }
        }
        total += near;
    }
    total / draws as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct DPPKernel {
    pub matrix: DMatrix<f64>,
    pub ell: f64,
}

/// `L_ij = s_i^γ exp(−‖φ_i−φ_j‖²/(2ℓ²)) s_j^γ`.
pub fn dpp_kernel<T: Real>(phis: &[Vec<T>], scores: &[T], gamma: f64, ell: f64) -> Result<DPPKernel> {
    if !(gamma >= 0.0) {
        return Err(BatchError::Config("dpp_gamma must be non-negative".into()));
    }
    if !(ell > 0.0) {
        return Err(BatchError::Config("dpp_ell must be positive".into()));
    }
    let p = to_f64(phis);
    let n = p.len();
    let w: Vec<f64> = scores.iter().map(|s| if gamma == 0.0 { 1.0 } else { s.f64().powf(gamma) }).collect();
    let matrix = DMatrix::from_fn(n, n, |i, j| {
        let d2 = dist(&p[i], &p[j]).powi(2);
        w[i] * (-d2 / (2.0 * ell * ell)).exp() * w[j]
    });
    Ok(DPPKernel { matrix, ell })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DppSelection {
    /// In selection order.
    pub indices: Vec<usize>,
    /// `log det L_A` after each addition.
    pub log_dets: Vec<f64>,
}

/// Greedy approximation of the DPP mode, with the determinant gains kept as
/// incremental Cholesky pivots.
pub fn dpp_greedy_mode(l: &DMatrix<f64>, k: usize) -> Result<DppSelection> {
    let n = l.nrows();
    check_k(n, k)?;
    let scale = (0..n).map(|i| l[(i, i)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tol = 1e-10 * scale;
    let mut gain: Vec<f64> = (0..n).map(|i| l[(i, i)]).collect();
    let mut rows: Vec<Vec<f64>> = vec![Vec::with_capacity(k); n];
    let mut chosen = vec![false; n];
    let mut out = DppSelection { indices: Vec::with_capacity(k), log_dets: Vec::with_capacity(k) };
    let mut log_det = 0.0;
    while out.indices.len() < k {
        let mut j = usize::MAX;
        for i in 0..n {
            if !chosen[i] && (j == usize::MAX || gain[i] > gain[j]) {
                j = i;
            }
        }
        if gain[j] < -tol {
            return Err(BatchError::NotPsd(gain[j]));
        }
        chosen[j] = true;
        out.indices.push(j);
        if gain[j] <= tol {
            // the remaining set is degenerate: every extension has zero volume
            log_det = f64::NEG_INFINITY;
            out.log_dets.push(log_det);
            for i in 0..n {
                gain[i] = 0.0;
            }
            continue;
        }
        log_det += gain[j].ln();
        out.log_dets.push(log_det);
        let dj = gain[j].sqrt();
        let cj = rows[j].clone();
        for i in 0..n {
            if chosen[i] {
                continue;
            }
            let e = (l[(j, i)] - cj.iter().zip(&rows[i]).map(|(a, b)| a * b).sum::<f64>()) / dj;
            rows[i].push(e);
            gain[i] -= e * e;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub queries: Vec<Query<T>>,
    /// Positions in the candidate list.
    pub indices: Vec<usize>,
    pub reduced: Reduced<T>,
}

/// Reduces `candidates` and picks `cfg.k` of them with `cfg.method`.
pub fn generate_batch<T: Real>(
    ctx: &ModelContext<T>,
    samples: &[ParamPoint<T>],
    candidates: &[Query<T>],
    cfg: &BatchConfig,
) -> Result<Batch<T>> {
    cfg.validate(candidates.len())?;
    let reduced = reduce_dataset(ctx, samples, candidates, cfg.reduced_size)?;
    let picks = select_from_reduced(&reduced, cfg)?;
    let indices: Vec<usize> = picks.iter().map(|&r| reduced.indices[r]).collect();
    let queries = indices.iter().map(|&i| candidates[i].clone()).collect();
    Ok(Batch { queries, indices, reduced })
}

/// Positions into `R` chosen by the configured method.
pub fn select_from_reduced<T: Real>(r: &Reduced<T>, cfg: &BatchConfig) -> Result<Vec<usize>> {
    let k = cfg.k;
    match cfg.method {
        BatchMethod::Greedy => batch_greedy(&r.scores, k),
        BatchMethod::Medoids => batch_medoids(&r.phis, k, cfg.medoid_iters, cfg.seed),
        BatchMethod::BoundaryMedoids => batch_boundary_medoids(&r.phis, &r.scores, k, cfg.medoid_iters, cfg.seed),
        BatchMethod::SuccessiveElimination => batch_successive_elimination(&r.phis, &r.scores, k),
        BatchMethod::DppMode => {
            let ell = match cfg.dpp_ell {
                DppEll::Fixed(l) => l,
                DppEll::Auto => auto_ell(k, r.phis.first().map_or(1, |p| p.len()), 1000, cfg.seed),
            };
            let kern = dpp_kernel(&r.phis, &r.scores, cfg.dpp_gamma, ell)?;
            Ok(dpp_greedy_mode(&kern.matrix, k)?.indices)
        }
    }
}
