//! Query scores and selectors.
//!
//! Most scores are functions of the per-sample outcome tables
//! `P(outcome | query, θ_s)`, stored flat as `samples × outcomes`.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefError, ModelContext, ParamPoint};
use crate::domain::{grid_half_width, DomainError, ItemId, Query, QueryPool};
use crate::gppref::{GPError, GPPosterior};
use crate::likelihood::{
    scale_cells, scale_noiseless, weak_choice_probs, Link, OrdinalThresholds,
};
use crate::scalar::{dot, norm_cdf, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AcqError {
    #[error("no candidate queries")]
    NoCandidates,
    #[error("acquisition needs at least {0} samples")]
    TooFewSamples(usize),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    GP(#[from] GPError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

type Result<T> = std::result::Result<T, AcqError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostModel<T> {
    Zero,
    Constant { c: T },
    /// `η − |φ_j*| + max_{j≠j*} |φ_j|`, cheap when one feature dominates.
    Interpretability { eta: T },
}

impl<T: Real> Default for CostModel<T> {
    fn default() -> Self {
        CostModel::Zero
    }
}

impl<T: Real> CostModel<T> {
    pub fn is_zero(&self) -> bool {
        matches!(self, CostModel::Zero)
    }

    /// Cost from the feature difference `φ` of the two shown items.
    pub fn cost(&self, phi: &[T]) -> T {
        match *self {
            CostModel::Zero => T::zero(),
            CostModel::Constant { c } => c,
            CostModel::Interpretability { eta } => {
                let mut mags: Vec<T> = phi.iter().map(|x| x.abs()).collect();
                mags.sort_by(|a, b| b.partial_cmp(a).expect("finite features"));
                let top = mags.first().copied().unwrap_or_else(T::zero);
                let second = mags.get(1).copied().unwrap_or_else(T::zero);
                eta - top + second
            }
        }
    }

    pub fn query_cost(&self, pool: &QueryPool<T>, q: &Query<T>) -> Result<T> {
        if let CostModel::Interpretability { .. } = self {
            let ids = q.item_ids();
            let (a, b) = match q {
                Query::Hierarchical { first, .. } => (first[0], first[1]),
                _ if ids.len() >= 2 => (ids[0], ids[1]),
                _ => return Ok(self.cost(&[])),
            };
            let fa = pool.features(a)?;
            let fb = pool.features(b)?;
            let phi: Vec<T> = fa.iter().zip(fb).map(|(&x, &y)| x - y).collect();
            return Ok(self.cost(&phi));
        }
        Ok(self.cost(&[]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SAConfig {
    pub n_restarts: usize,
    pub horizon: usize,
    pub t0: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for SAConfig {
    fn default() -> Self {
        SAConfig { n_restarts: 10, horizon: 30, t0: 10.0, gamma: 0.9, seed: 0 }
    }
}

impl SAConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0) || !(self.gamma > 0.0 && self.gamma < 1.0) || self.n_restarts == 0 {
            return Err(AcqError::Config("SA needs t0 > 0, 0 < gamma < 1, n_restarts ≥ 1".into()));
        }
        Ok(())
    }
}

/// `Σ_ω P(q|Q,ω)` per outcome.
fn outcome_sums<T: Real>(tables: &[T], n_out: usize) -> Vec<T> {
    let mut s = vec![T::zero(); n_out];
    for row in tables.chunks(n_out) {
        for (a, &p) in s.iter_mut().zip(row) {
            *a += p;
        }
    }
    s
}

/// Expected volume removal `1 − Σ_q P̄_q²`, `P̄` the sample-mean outcome
/// distribution. Monotone in the paper's `−Σ_q (Σ_ω P)²`.
pub fn vr_expected<T: Real>(tables: &[T], n_out: usize) -> T {
    let n = T::count(tables.len() / n_out);
    T::one() - outcome_sums(tables, n_out).into_iter().map(|s| (s / n) * (s / n)).sum::<T>()
}

/// Worst-case volume removal `min_q E_ω[1 − P(q)]`.
pub fn vr_worst_case<T: Real>(tables: &[T], n_out: usize) -> T {
    let n = T::count(tables.len() / n_out);
    outcome_sums(tables, n_out).into_iter().map(|s| T::one() - s / n).fold(T::infinity(), T::min)
}

/// Sample estimate of the mutual information in bits,
/// `(1/|Ω|) Σ_q Σ_ω P log₂(|Ω| P / Σ_ω' P)`.
pub fn mi_bits<T: Real>(tables: &[T], n_out: usize) -> T {
    let n = tables.len() / n_out;
    let sums = outcome_sums(tables, n_out);
    let nn = T::count(n);
    let mut acc = T::zero();
    for row in tables.chunks(n_out) {
        for (&p, &s) in row.iter().zip(&sums) {
            if p > T::zero() {
                acc += p * (nn * p / s).log2();
            }
        }
    }
    (acc / nn).max(T::zero())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stop iff the best achievable `MI − cost` is negative.
pub fn stopping_rule<T: Real>(best_score_minus_cost: T) -> StopDecision {
    if best_score_minus_cost < T::zero() { StopDecision::Stop } else { StopDecision::Continue }
}

/// Base-2 binary entropy.
pub fn binary_entropy(p: f64) -> f64 {
    let t = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
    t(p) + t(1.0 - p)
}

/// Closed-form pairwise information gain of a fitted GP.
pub fn gp_mi_score(post: &GPPosterior, a: &[f64], b: &[f64]) -> Result<f64> {
    let (mu, cov) = post.infer_pair(a, b)?;
    let g = (cov[0][0] + cov[1][1] - 2.0 * cov[0][1]).max(0.0);
    let s2 = post.cfg.sigma_pref * post.cfg.sigma_pref;
    let dm = mu[0] - mu[1];
    let first = binary_entropy(norm_cdf(dm / (2.0 * s2 + g).sqrt()));
    let c = std::f64::consts::PI * std::f64::consts::LN_2 * s2;
    let m = c.sqrt() * (-dm * dm / (c + 2.0 * g)).exp() / (c + 2.0 * g).sqrt();
    Ok(first - m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoialChoice {
    pub index: usize,
    pub score: f64,
    /// The ROI was empty and the whole candidate list was searched.
    pub fallback: bool,
}

/// Joint ordinal-and-comparison information gain per candidate, estimated
/// from `n_latent` draws of `(f(c), f(prev))`.
pub fn roial_scores(
    post: &GPPosterior,
    candidates: &[Vec<f64>],
    previous: Option<&[f64]>,
    thresholds: &OrdinalThresholds<f64>,
    n_latent: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<[f64; 2]> =
        (0..n_latent.max(1)).map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect();
    let cfg = &post.cfg;
    let o = thresholds.categories();
    candidates
        .iter()
        .map(|c| {
            let draws: Vec<(f64, f64)> = match previous {
                Some(p) => {
                    let (mu, cov) = post.infer_pair(c, p)?;
                    let l11 = cov[0][0].max(0.0).sqrt();
                    let l21 = if l11 > 0.0 { cov[1][0] / l11 } else { 0.0 };
                    let l22 = (cov[1][1] - l21 * l21).max(0.0).sqrt();
                    z.iter().map(|e| (mu[0] + l11 * e[0], mu[1] + l21 * e[0] + l22 * e[1])).collect()
                }
                None => {
                    let (m, s) = post.mean_sd(c)?;
                    z.iter().map(|e| (m + s * e[0], 0.0)).collect()
                }
            };
            let pref_scale = match cfg.link {
                Link::GaussianCdf => std::f64::consts::SQRT_2 * cfg.sigma_pref,
                Link::Sigmoid => cfg.sigma_pref,
            };
            let n_out = if previous.is_some() { 2 * o } else { o };
            let mut mean = vec![0.0; n_out];
            let mut cond = 0.0;
            for &(fc, fp) in &draws {
                let labels = crate::likelihood::ordinal_probs(fc, thresholds, cfg.sigma_ord, cfg.link);
                let row: Vec<f64> = if previous.is_some() {
                    let w = cfg.link.cdf((fc - fp) / pref_scale);
                    labels.iter().flat_map(|&l| [l * w, l * (1.0 - w)]).collect()
                } else {
                    labels
                };
                cond += entropy(&row);
                for (m, p) in mean.iter_mut().zip(&row) {
                    *m += p;
                }
            }
            let k = draws.len() as f64;
            mean.iter_mut().for_each(|m| *m /= k);
            Ok(entropy(&mean) - cond / k)
        })
        .collect()
}

fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum()
}

/// ROIAL choice among `candidates` restricted to the positions in `roi`.
pub fn roial_select(
    post: &GPPosterior,
    candidates: &[Vec<f64>],
    roi: &[usize],
    previous: Option<&[f64]>,
    thresholds: &OrdinalThresholds<f64>,
    n_latent: usize,
    seed: u64,
) -> Result<RoialChoice> {
    if candidates.is_empty() {
        return Err(AcqError::NoCandidates);
    }
    let fallback = roi.is_empty();
    let idx: Vec<usize> = if fallback { (0..candidates.len()).collect() } else { roi.to_vec() };
    if idx.len() == 1 {
        return Ok(RoialChoice { index: idx[0], score: 0.0, fallback });
    }
    let sub: Vec<Vec<f64>> = idx.iter().map(|&i| candidates[i].clone()).collect();
    let scores = roial_scores(post, &sub, previous, thresholds, n_latent, seed)?;
    let best = argmax(&scores);
    Ok(RoialChoice { index: idx[best], score: scores[best], fallback })
}

/// First index of the maximum.
fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

fn argmin<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x < xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxRegretChoice<T> {
    pub items: [ItemId; 2],
    pub value: T,
    /// Every sample pair plans to the same trajectory.
    pub degenerate: bool,
}

/// `Reg(ω, ω′) = R_ω′(Π(ω′)) − R_ω′(Π(ω))`.
pub fn pairwise_regret<T: Real>(omega: &[T], omega2: &[T], pool: &QueryPool<T>) -> T {
    crate::metrics::regret(omega, omega2, pool)
}

/// Pair of planner outputs maximizing `Reg(ω,ω′) + Reg(ω′,ω)` over sample
/// pairs. Uniform sample weights make the paper's `b(ω)b(ω′)` factor constant.
pub fn max_regret_select<T: Real>(samples: &[ParamPoint<T>], pool: &QueryPool<T>) -> Result<MaxRegretChoice<T>> {
    let omegas: Vec<&[T]> = samples.iter().filter_map(ParamPoint::omega).collect();
    if omegas.is_empty() {
        return Err(AcqError::TooFewSamples(1));
    }
    let plan: Vec<usize> = omegas.iter().map(|w| crate::metrics::planner(w, pool)).collect();
    let n = omegas.len();
    // own[i][j] = R_ωi(Π(ωj))
    let own: Vec<Vec<T>> =
        omegas.iter().map(|w| plan.iter().map(|&p| dot(w, pool.features_at(p))).collect()).collect();
    let mut best = (0, 0);
    let mut best_v = T::neg_infinity();
    for i in 0..n {
        for j in i + 1..n {
            let v = (own[j][j] - own[j][i]) + (own[i][i] - own[i][j]);
            if v > best_v {
                best_v = v;
                best = (i, j);
            }
        }
    }
    let ids: Vec<ItemId> = pool.ids().collect();
    if n < 2 || !(best_v > T::zero()) {
        let a = ids[plan[0]];
        return Ok(MaxRegretChoice { items: [a, a], value: T::zero(), degenerate: true });
    }
    Ok(MaxRegretChoice { items: [ids[plan[best.0]], ids[plan[best.1]]], value: best_v, degenerate: false })
}

/// Per-sample outcome tables of arbitrary queries.
pub fn tables_for<T: Real>(ctx: &ModelContext<T>, samples: &[ParamPoint<T>], q: &Query<T>) -> Result<(Vec<T>, usize)> {
    let n_out = ctx.outcome_count(q)?;
    let mut out = Vec::with_capacity(n_out * samples.len());
    for s in samples {
        out.extend(ctx.outcome_table(s, q)?);
    }
    Ok((out, n_out))
}

/// Slider information gain over the ε grid.
pub fn scale_mi_score<T: Real>(ctx: &ModelContext<T>, samples: &[ParamPoint<T>], q: &Query<T>) -> Result<T> {
    let (t, n) = tables_for(ctx, samples, q)?;
    Ok(mi_bits(&t, n))
}

/// Weak-comparison information gain over joint `(ω, δ)` samples.
pub fn joint_mi_score<T: Real>(ctx: &ModelContext<T>, samples: &[ParamPoint<T>], q: &Query<T>) -> Result<T> {
    let (t, n) = tables_for(ctx, samples, q)?;
    Ok(mi_bits(&t, n))
}

/// Precomputed per-sample rewards of every pool item, so pair queries over
/// unimodal beliefs are scored without touching features again.
pub struct RewardCache<T> {
    /// Item-major: `rewards[pos * n_samples + s]`, so one item's samples are
    /// contiguous.
    rewards: Vec<T>,
    gaps: Vec<T>,
    alphas: Vec<T>,
    deltas: Vec<T>,
}

impl<T: Real> RewardCache<T> {
    pub fn new(ctx: &ModelContext<T>, samples: &[ParamPoint<T>]) -> Result<Option<Self>> {
        let pool = &*ctx.pool;
        let n_items = pool.len();
        let n_s = samples.len();
        let mut rewards = vec![T::zero(); n_s * n_items];
        let mut row = Vec::with_capacity(n_items);
        let mut gaps = Vec::with_capacity(samples.len());
        let mut alphas = Vec::with_capacity(samples.len());
        let mut deltas = Vec::with_capacity(samples.len());
        for (si, s) in samples.iter().enumerate() {
            let Some(w) = s.omega() else { return Ok(None) };
            row.clear();
            row.extend(pool.trajectories().iter().map(|t| dot(w, t.features.as_slice())));
            for (i, &r) in row.iter().enumerate() {
                rewards[i * n_s + si] = r;
            }
            gaps.push(match ctx.gap {
                crate::belief::GapPolicy::Fixed { gap } => gap,
                crate::belief::GapPolicy::PerSample => {
                    let hi = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let lo = row.iter().copied().fold(T::infinity(), T::min);
                    hi - lo
                }
            });
            alphas.push(match s {
                ParamPoint::OmegaAlpha { alpha, .. } => *alpha,
                _ => T::one(),
            });
            deltas.push(match s {
                ParamPoint::OmegaDelta { delta, .. } => *delta,
                _ => ctx.cfg.delta_min,
            });
        }
        Ok(Some(RewardCache { rewards, gaps, alphas, deltas }))
    }

    fn n_samples(&self) -> usize {
        self.gaps.len()
    }

    fn item(&self, pos: usize) -> &[T] {
        let n = self.n_samples();
        &self.rewards[pos * n..(pos + 1) * n]
    }

    /// Score of a two-item choice straight from the cached rewards. One
    /// `exp` and one `ln_1p` per sample give both probabilities and logs.
    fn pair_score(&self, a: usize, b: usize, beta: T, kind: AcquisitionKind) -> T {
        let n = self.n_samples();
        let (mut sa, mut sb, mut ent) = (T::zero(), T::zero(), T::zero());
        for (&ra, &rb) in self.item(a).iter().zip(self.item(b)) {
            let x = beta * (ra - rb);
            let e = (-x.abs()).exp();
            let (hi, lo) = (T::one() / (T::one() + e), e / (T::one() + e));
            let (pa, pb) = if x >= T::zero() { (hi, lo) } else { (lo, hi) };
            sa += pa;
            sb += pb;
            if kind == AcquisitionKind::MutualInformation {
                let l = e.ln_1p();
                let ln_pa = -((-x).max(T::zero()) + l);
                let ln_pb = -(x.max(T::zero()) + l);
                ent -= pa * ln_pa + pb * ln_pb;
            }
        }
        let nn = T::count(n);
        let (ma, mb) = (sa / nn, sb / nn);
        match kind {
            AcquisitionKind::VolumeRemoval => T::one() - (ma * ma + mb * mb),
            AcquisitionKind::WorstCaseVolumeRemoval => (T::one() - ma).min(T::one() - mb),
            AcquisitionKind::MutualInformation => {
                let h = |p: T| if p > T::zero() { -p * p.log2() } else { T::zero() };
                (h(ma) + h(mb) - ent / (nn * T::LN_2())).max(T::zero())
            }
            AcquisitionKind::Random | AcquisitionKind::MaxRegret => T::zero(),
        }
    }

    /// Tables of a choice, weak or slider query; `None` for other kinds.
    pub fn tables(&self, ctx: &ModelContext<T>, q: &Query<T>) -> Result<Option<(Vec<T>, usize)>> {
        let mut out = Vec::new();
        Ok(self.fill(ctx, q, &mut out)?.map(|n| (out, n)))
    }

    /// Appends the tables of `q` to `out`, returning the outcome count.
    pub fn fill(&self, ctx: &ModelContext<T>, q: &Query<T>, out: &mut Vec<T>) -> Result<Option<usize>> {
        let pool = &*ctx.pool;
        let pos = |ids: &[ItemId]| ids.iter().map(|&i| pool.position(i)).collect::<std::result::Result<Vec<_>, _>>();
        let n = self.n_samples();
        Ok(Some(match q {
            Query::Choice { items } => {
                let p = pos(items)?;
                let cols: Vec<&[T]> = p.iter().map(|&i| self.item(i)).collect();
                let beta = ctx.cfg.beta_choice;
                out.reserve(n * p.len());
                for s in 0..n {
                    // softmax written in place, same arithmetic as `choice_probs`
                    let m = cols.iter().map(|c| beta * c[s]).fold(T::neg_infinity(), T::max);
                    let start = out.len();
                    let mut z = T::zero();
                    for c in &cols {
                        let e = (beta * c[s] - m).exp();
                        z += e;
                        out.push(e);
                    }
                    for x in &mut out[start..] {
                        *x /= z;
                    }
                }
                p.len()
            }
            Query::WeakChoice { items } => {
                let p = pos(items)?;
                out.reserve(n * 3);
                let (a, b) = (self.item(p[0]), self.item(p[1]));
                for s in 0..n {
                    out.extend(weak_choice_probs(a[s], b[s], self.deltas[s]));
                }
                3
            }
            Query::Scale { items, step } => {
                let p = pos(items)?;
                let k = 2 * grid_half_width(*step).ok_or(DomainError::BadStep(step.f64()))? + 1;
                out.reserve(n * k);
                let (a, b) = (self.item(p[0]), self.item(p[1]));
                for s in 0..n {
                    let ybar = scale_noiseless(a[s], b[s], self.alphas[s], self.gaps[s])
                        .map_err(BeliefError::from)?;
                    out.extend(scale_cells(ybar, *step, ctx.cfg.sigma_scale).map_err(BeliefError::from)?);
                }
                k
            }
            _ => return Ok(None),
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    Random,
    /// Expected volume removal.
    VolumeRemoval,
    /// Pairwise worst-case volume removal.
    WorstCaseVolumeRemoval,
    MutualInformation,
    MaxRegret,
}

impl AcquisitionKind {
    pub fn is_mi(self) -> bool {
        matches!(self, AcquisitionKind::MutualInformation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection<T> {
    pub query: Query<T>,
    /// Position in the candidate list; `None` for synthesized queries.
    pub index: Option<usize>,
    /// Score minus cost of the chosen query.
    pub score: T,
    pub stop: bool,
    pub warning: Option<String>,
}

/// Scores every candidate with `kind` (without cost).
pub fn score_candidates<T: Real>(
    ctx: &ModelContext<T>,
    samples: &[ParamPoint<T>],
    candidates: &[Query<T>],
    kind: AcquisitionKind,
) -> Result<Vec<T>> {
    let cache = RewardCache::new(ctx, samples)?;
    let score = |t: &[T], n: usize| match kind {
        AcquisitionKind::VolumeRemoval => vr_expected(t, n),
        AcquisitionKind::WorstCaseVolumeRemoval => vr_worst_case(t, n),
        AcquisitionKind::MutualInformation => mi_bits(t, n),
        AcquisitionKind::Random | AcquisitionKind::MaxRegret => T::zero(),
    };
    candidates
        .par_iter()
        .map_init(Vec::new, |buf, q| {
            buf.clear();
            if let Some(c) = cache.as_ref() {
                if let Query::Choice { items } = q {
                    if items.len() == 2 {
                        let (a, b) = (ctx.pool.position(items[0])?, ctx.pool.position(items[1])?);
                        return Ok(c.pair_score(a, b, ctx.cfg.beta_choice, kind));
                    }
                }
                if let Some(n) = c.fill(ctx, q, buf)? {
                    return Ok(score(buf, n));
                }
            }
            let (t, n) = tables_for(ctx, samples, q)?;
            Ok(score(&t, n))
        })
        .collect()
}

/// Picks the next query from `candidates`. Ties go to the lowest index.
pub fn select_query<T: Real>(
    ctx: &ModelContext<T>,
    samples: &[ParamPoint<T>],
    candidates: &[Query<T>],
    kind: AcquisitionKind,
    cost: &CostModel<T>,
    seed: u64,
) -> Result<Selection<T>> {
    if candidates.is_empty() {
        return Err(AcqError::NoCandidates);
    }
    match kind {
        AcquisitionKind::Random => {
            let i = ChaCha8Rng::seed_from_u64(seed).random_range(0..candidates.len());
            let c = cost.query_cost(&ctx.pool, &candidates[i])?;
            return Ok(Selection { query: candidates[i].clone(), index: Some(i), score: -c, stop: false, warning: None });
        }
        AcquisitionKind::MaxRegret => {
            let mr = max_regret_select(samples, &ctx.pool)?;
            let query = match &candidates[0] {
                Query::Scale { step, .. } => Query::Scale { items: mr.items, step: *step },
                Query::WeakChoice { .. } => Query::WeakChoice { items: mr.items },
                _ => Query::Choice { items: mr.items.to_vec() },
            };
            let c = cost.query_cost(&ctx.pool, &query)?;
            let warning = mr.degenerate.then(|| "max regret collapsed to a trivial query".to_string());
            return Ok(Selection { query, index: None, score: mr.value - c, stop: false, warning });
        }
        _ => {}
    }
    if samples.len() < 2 {
        return Err(AcqError::TooFewSamples(2));
    }
    let scores = score_candidates(ctx, samples, candidates, kind)?;
    let net = scores
        .iter()
        .zip(candidates)
        .map(|(&s, q)| Ok(s - cost.query_cost(&ctx.pool, q)?))
        .collect::<Result<Vec<T>>>()?;
    let i = argmax(&net);
    let stop = kind.is_mi() && !cost.is_zero() && stopping_rule(net[i]) == StopDecision::Stop;
    Ok(Selection { query: candidates[i].clone(), index: Some(i), score: net[i], stop, warning: None })
}

/// Candidate item pairs: all pairs for small pools, else a seeded random
/// subset of `max_pairs` distinct unordered pairs.
pub fn candidate_pairs<T: Real>(pool: &QueryPool<T>, max_pairs: usize, seed: u64) -> Vec<[ItemId; 2]> {
    let ids: Vec<ItemId> = pool.ids().collect();
    let n = ids.len();
    let total = n * n.saturating_sub(1) / 2;
    if total <= max_pairs {
        let mut out = Vec::with_capacity(total);
        for i in 0..n {
            for j in i + 1..n {
                out.push([ids[i], ids[j]]);
            }
        }
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(max_pairs);
    let mut out = Vec::with_capacity(max_pairs);
    while out.len() < max_pairs {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if seen.insert(key) {
            out.push([ids[key.0], ids[key.1]]);
        }
    }
    out
}

/// Common random numbers for ranking draws: per sample, one uniform for the
/// mixture component and one per ranked position.
#[derive(Debug, Clone)]
pub struct RankingDraws {
    u: Vec<Vec<f64>>,
}

impl RankingDraws {
    pub fn new(n_samples: usize, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RankingDraws { u: (0..n_samples).map(|_| (0..=k).map(|_| rng.random::<f64>()).collect()).collect() }
    }
}

fn modes_of<T: Real>(p: &ParamPoint<T>) -> Vec<(T, &[T])> {
    match p {
        ParamPoint::Mixture(m) => m.coeffs.iter().copied().zip(m.weights.iter().map(Vec::as_slice)).collect(),
        other => vec![(T::one(), other.omega().expect("ranking samples are mixtures or unimodal"))],
    }
}

/// `Σ_j [ln Σ_j' P(q̄_j | Q, θ_j') − ln P(q̄_j | Q, θ_j)]` with `q̄_j` drawn
/// from `θ_j` using the common random numbers. Lower is more informative.
/// The items are sorted first so the value depends only on the item set.
pub fn ranking_objective<T: Real>(
    pool: &QueryPool<T>,
    samples: &[ParamPoint<T>],
    items: &[ItemId],
    beta: T,
    draws: &RankingDraws,
) -> Result<f64> {
    let mut items = items.to_vec();
    items.sort_unstable();
    let k = items.len();
    let feats = items.iter().map(|&i| pool.features(i)).collect::<std::result::Result<Vec<_>, _>>()?;
    // rewards[s][m][i], scaled by β
    let rewards: Vec<Vec<(f64, Vec<f64>)>> = samples
        .iter()
        .map(|s| {
            modes_of(s)
                .into_iter()
                .map(|(a, w)| (a.f64(), feats.iter().map(|f| (beta * dot(w, f)).f64()).collect()))
                .collect()
        })
        .collect();
    let log_pl = |r: &[f64], order: &[usize]| -> f64 {
        let mut lp = 0.0;
        let mut rem: Vec<usize> = order.to_vec();
        for &i in order.iter().take(k - 1) {
            let vals: Vec<f64> = rem.iter().map(|&j| r[j]).collect();
            lp += r[i] - log_sum_exp_f64(&vals);
            rem.retain(|&j| j != i);
        }
        lp
    };
    let log_mix = |s: &[(f64, Vec<f64>)], order: &[usize]| -> f64 {
        let terms: Vec<f64> = s.iter().map(|(a, r)| a.ln() + log_pl(r, order)).collect();
        log_sum_exp_f64(&terms)
    };
    let mut total = 0.0;
    for (j, s) in rewards.iter().enumerate() {
        let u = draws.u.get(j).ok_or(AcqError::Config("too few ranking draws".into()))?;
        // component
        let mut acc = 0.0;
        let mut comp = s.len() - 1;
        for (m, (a, _)) in s.iter().enumerate() {
            acc += a;
            if u[0] < acc {
                comp = m;
                break;
            }
        }
        let r = &s[comp].1;
        let mut rem: Vec<usize> = (0..k).collect();
        let mut order = Vec::with_capacity(k);
        for step in 0..k {
            let vals: Vec<f64> = rem.iter().map(|&i| r[i]).collect();
            let lse = log_sum_exp_f64(&vals);
            let mut c = 0.0;
            let mut pick = rem.len() - 1;
            for (t, &v) in vals.iter().enumerate() {
                c += (v - lse).exp();
                if u[1 + step.min(u.len() - 2)] < c {
                    pick = t;
                    break;
                }
            }
            order.push(rem.remove(pick));
        }
        let all: Vec<f64> = rewards.iter().map(|s2| log_mix(s2, &order)).collect();
        total += log_sum_exp_f64(&all) - all[j];
    }
    Ok(total)
}

fn log_sum_exp_f64(xs: &[f64]) -> f64 {
    crate::scalar::log_sum_exp(xs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingSelection {
    pub items: Vec<ItemId>,
    pub objective: f64,
}

/// Simulated-annealing search for the most informative ranking query of `k`
/// distinct pool items.
pub fn ranking_mi_select<T: Real>(
    ctx: &ModelContext<T>,
    samples: &[ParamPoint<T>],
    k: usize,
    sa: &SAConfig,
) -> Result<RankingSelection> {
    sa.validate()?;
    let pool = &*ctx.pool;
    let ids: Vec<ItemId> = pool.ids().collect();
    if k < 2 || k > ids.len() {
        return Err(AcqError::Config(format!("ranking size {k} vs pool {}", ids.len())));
    }
    if samples.is_empty() {
        return Err(AcqError::TooFewSamples(1));
    }
    let draws = RankingDraws::new(samples.len(), k, sa.seed ^ 0x5EED);
    let eval = |q: &[ItemId]| ranking_objective(pool, samples, q, ctx.cfg.beta_choice, &draws);
    let mut rng = ChaCha8Rng::seed_from_u64(sa.seed);
    let mut best: Option<(Vec<ItemId>, f64)> = None;
    for _ in 0..sa.n_restarts {
        let mut cur: Vec<ItemId> = ids.choose_multiple(&mut rng, k).copied().collect();
        let mut cur_v = eval(&cur)?;
        if best.as_ref().is_none_or(|b| cur_v < b.1) {
            best = Some((cur.clone(), cur_v));
        }
        let mut temp = sa.t0;
        for step in 0..sa.horizon {
            if step > 0 {
                temp *= sa.gamma;
            }
            if ids.len() == k {
                break;
            }
            let slot = rng.random_range(0..k);
            let fresh = loop {
                let c = ids[rng.random_range(0..ids.len())];
                if !cur.contains(&c) {
                    break c;
                }
            };
            let mut next = cur.clone();
            next[slot] = fresh;
            let v = eval(&next)?;
            if v <= cur_v || rng.random::<f64>() < (-(v - cur_v) / temp).exp() {
                cur = next;
                cur_v = v;
                if cur_v < best.as_ref().expect("set above").1 {
                    best = Some((cur.clone(), cur_v));
                }
            }
        }
    }
    let (mut items, objective) = best.expect("at least one restart");
    items.sort_unstable();
    Ok(RankingSelection { items, objective })
}

/// Candidate minimizing `Σ_resp (Σ_s P(resp | θ_s, Q))²` over distinct
/// answer pairs; lowest index on ties.
pub fn hierarchical_vr_select<T: Real>(
    ctx: &ModelContext<T>,
    candidates: &[Query<T>],
    samples: &[ParamPoint<T>],
) -> Result<(usize, T)> {
    if candidates.is_empty() {
        return Err(AcqError::NoCandidates);
    }
    let vals = candidates
        .iter()
        .map(|q| {
            let (t, n) = tables_for(ctx, samples, q)?;
            let sums = outcome_sums(&t, n);
            // responses are id pairs, so positions holding the same ids merge
            let mut merged: Vec<(crate::domain::Response<T>, T)> = Vec::new();
            for (i, s) in sums.into_iter().enumerate() {
                let r = ctx.outcome_response(q, i)?;
                match merged.iter_mut().find(|(x, _)| *x == r) {
                    Some((_, acc)) => *acc += s,
                    None => merged.push((r, s)),
                }
            }
            Ok(merged.into_iter().map(|(_, s)| s * s).sum::<T>())
        })
        .collect::<Result<Vec<T>>>()?;
    let i = argmin(&vals);
    Ok((i, vals[i]))
}
