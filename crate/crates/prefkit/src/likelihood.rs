//! Human response models.
//!
//! Every function returns the probability of one response given the rewards
//! of the items involved. Rewards are linear, `R_ω(τ) = ω·ψ(τ)`.
//!
//! ```text
//! choice        P(q = Q_j)      = exp(β R_j) / Σ_l exp(β R_l)
//! weak choice   P(Q_j)          = 1 / (1 + exp(δ + R_j' − R_j))
//!               P(about equal)  = (e^{2δ} − 1) P(Q_1) P(Q_2)
//! probit        P(Q_1 ≻ Q_2)    = Φ((R_1 − R_2) / (√2 σ_p))
//! ordinal       P(y | r)        = g((b_y − r)/σ_o) − g((b_{y−1} − r)/σ_o)
//! scale         ȳ               = clamp((R_1 − R_2) / (α Γ(ω)), −1, 1)
//! ```
//!
//! Queries may repeat an item. Outcomes of a choice are positions; the
//! probability of a chosen *id* sums over the positions holding it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{grid_half_width, grid_index, DomainError, ItemId, Query, QueryPool, Response};
use crate::scalar::{dot, log_sum_exp, norm, norm_cdf, sigmoid, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LikelihoodError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("pool has zero reward gap but the two items differ in reward")]
    DegeneratePool,
    #[error("ordinal label {label} outside 1..={categories}")]
    LabelRange { label: u32, categories: usize },
    #[error("thresholds must be finite and strictly increasing")]
    BadThresholds,
    #[error("unsupported configuration: {0}")]
    Unsupported(&'static str),
}

type Result<T> = std::result::Result<T, LikelihoodError>;

/// Link function `g` of the ordinal and generalized comparison models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    GaussianCdf,
    #[default]
    Sigmoid,
}

impl Link {
    pub fn cdf<T: Real>(self, x: T) -> T {
        match self {
            Link::GaussianCdf => norm_cdf(x),
            Link::Sigmoid => sigmoid(x),
        }
    }

    /// `g(a) − g(c)` for `a ≥ c`, using the upper tail when both are positive.
    pub fn cdf_diff<T: Real>(self, a: T, c: T) -> T {
        if c > T::zero() {
            self.cdf(-c) - self.cdf(-a)
        } else {
            self.cdf(a) - self.cdf(c)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalityConfig<T> {
    /// `β^D`, demonstrations.
    pub beta_demo: T,
    /// `β^C`, choices and rankings.
    pub beta_choice: T,
    /// Minimum perceivable difference `δ` of weak choices.
    pub delta_min: T,
    pub sigma_pref: T,
    pub sigma_ord: T,
    pub sigma_scale: T,
    pub link: Link,
}

impl<T: Real> Default for RationalityConfig<T> {
    fn default() -> Self {
        RationalityConfig {
            beta_demo: T::of(0.02),
            beta_choice: T::one(),
            delta_min: T::one(),
            sigma_pref: T::one(),
            sigma_ord: T::one(),
            sigma_scale: T::of(0.1),
            link: Link::Sigmoid,
        }
    }
}

impl<T: Real> RationalityConfig<T> {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let pos = [("sigma_pref", self.sigma_pref), ("sigma_ord", self.sigma_ord), ("sigma_scale", self.sigma_scale)];
        for (name, v) in pos {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        let nonneg = [("beta_demo", self.beta_demo), ("beta_choice", self.beta_choice), ("delta_min", self.delta_min)];
        for (name, v) in nonneg {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Interior thresholds `b_1 < … < b_{o−1}`; `b_0 = −∞`, `b_o = +∞` are implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalThresholds<T> {
    values: Vec<T>,
}

impl<T: Real> OrdinalThresholds<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LikelihoodError::BadThresholds);
        }
        Ok(OrdinalThresholds { values })
    }

    /// Number of categories `o`.
    pub fn categories(&self) -> usize {
        self.values.len() + 1
    }

    pub fn interior(&self) -> &[T] {
        &self.values
    }

    /// `b_k` for `k ∈ 0..=o`.
    pub fn bound(&self, k: usize) -> T {
        if k == 0 {
            T::neg_infinity()
        } else if k > self.values.len() {
            T::infinity()
        } else {
            self.values[k - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams<T> {
    /// `ω_1..ω_M`.
    pub weights: Vec<Vec<T>>,
    /// `α_1..α_M` on the simplex.
    pub coeffs: Vec<T>,
}

/// Structure of the mode-transition prior `P₀`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    #[default]
    Uniform,
    Identity,
    Band,
}

impl PriorKind {
    /// Entry `(m, m2)` of the `M × M` prior matrix.
    pub fn entry<T: Real>(self, m: usize, m2: usize, modes: usize) -> T {
        match self {
            PriorKind::Uniform => T::one() / T::count(modes),
            PriorKind::Identity => {
                if m == m2 { T::one() } else { T::zero() }
            }
            PriorKind::Band => {
                let near = |a: usize, b: usize| a.abs_diff(b) <= 1;
                if near(m, m2) {
                    let width = (0..modes).filter(|&j| near(m, j)).count();
                    T::one() / T::count(width)
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Two-mode reward dynamics: reward weights per mode plus `ΔV = V_1 − V_2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardDynamicsParams<T> {
    /// Columns `ω_1, ω_2` of `W`.
    pub w: Vec<Vec<T>>,
    pub dv: Vec<T>,
    pub prior: PriorKind,
}

impl<T: Real> RewardDynamicsParams<T> {
    /// Column norms at most 1, `‖ΔV‖ ≤ 2`, and `ΔV[0] > 0` against label switching.
    pub fn feasible(&self) -> bool {
        self.w.iter().all(|c| norm(c) <= T::one())
            && self.dv.first().is_some_and(|&x| x > T::zero())
            && norm(&self.dv) <= T::of(2.0)
    }
}

pub fn linear_reward<T: Real>(omega: &[T], psi: &[T]) -> Result<T> {
    if omega.len() != psi.len() {
        return Err(LikelihoodError::DimMismatch(omega.len(), psi.len()));
    }
    Ok(dot(omega, psi))
}

/// Rewards of the listed items under `ω`.
pub fn item_rewards<T: Real>(pool: &QueryPool<T>, items: &[ItemId], omega: &[T]) -> Result<Vec<T>> {
    items.iter().map(|&id| linear_reward(omega, pool.features(id)?)).collect()
}

/// Positional softmax over `β R`, with max-subtraction.
pub fn choice_probs<T: Real>(rewards: &[T], beta: T) -> Vec<T> {
    let m = rewards.iter().map(|&r| beta * r).fold(T::neg_infinity(), T::max);
    let e: Vec<T> = rewards.iter().map(|&r| (beta * r - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Probability that `chosen` is picked from `items`.
pub fn softmax_choice<T: Real>(
    pool: &QueryPool<T>,
    items: &[ItemId],
    chosen: ItemId,
    omega: &[T],
    cfg: &RationalityConfig<T>,
) -> Result<T> {
    if !items.contains(&chosen) {
        return Err(DomainError::NotInQuery(chosen).into());
    }
    let p = choice_probs(&item_rewards(pool, items, omega)?, cfg.beta_choice);
    Ok(items.iter().zip(p).filter(|(&id, _)| id == chosen).map(|(_, p)| p).sum())
}

/// `[P(Q_1), P(Q_2), P(about equal)]` of the weak model.
pub fn weak_choice_probs<T: Real>(r1: T, r2: T, delta: T) -> [T; 3] {
    let p1 = sigmoid(r1 - r2 - delta);
    let p2 = sigmoid(r2 - r1 - delta);
    let eq = ((T::of(2.0) * delta).exp() - T::one()) * p1 * p2;
    [p1, p2, eq]
}

/// Weak-choice probability of a response. β is not used by this model.
pub fn weak_choice<T: Real>(
    pool: &QueryPool<T>,
    items: [ItemId; 2],
    response: &Response<T>,
    omega: &[T],
    cfg: &RationalityConfig<T>,
) -> Result<T> {
    let r = item_rewards(pool, &items, omega)?;
    let p = weak_choice_probs(r[0], r[1], cfg.delta_min);
    match response {
        Response::AboutEqual => Ok(p[2]),
        Response::Chosen { item } => {
            let mut s = T::zero();
            if *item == items[0] {
                s += p[0];
            }
            if *item == items[1] {
                s += p[1];
            }
            if *item != items[0] && *item != items[1] {
                return Err(DomainError::NotInQuery(*item).into());
            }
            Ok(s)
        }
        _ => Err(DomainError::KindMismatch { query: "weak_choice", response: response.kind_name() }.into()),
    }
}

/// `P(first ≻ second)` under probit or sigmoid comparison noise.
pub fn probit_pref<T: Real>(r1: T, r2: T, sigma_p: T, link: Link) -> T {
    match link {
        Link::GaussianCdf => norm_cdf((r1 - r2) / (T::SQRT_2() * sigma_p)),
        Link::Sigmoid => sigmoid((r1 - r2) / sigma_p),
    }
}

/// `Γ(ω) = max R − min R` over the pool.
pub fn max_reward_gap<T: Real>(omega: &[T], pool: &QueryPool<T>) -> Result<T> {
    if pool.is_empty() {
        return Err(DomainError::EmptyPool.into());
    }
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for t in pool.trajectories() {
        let r = linear_reward(omega, t.features.as_slice())?;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(hi - lo)
}

/// Noiseless slider position `clamp((R_1 − R_2)/(α Γ), −1, 1)`.
pub fn scale_noiseless<T: Real>(r1: T, r2: T, alpha: T, gap: T) -> Result<T> {
    let diff = r1 - r2;
    if diff == T::zero() {
        return Ok(T::zero());
    }
    if !(gap > T::zero()) {
        return Err(LikelihoodError::DegeneratePool);
    }
    Ok((diff / (alpha * gap)).max(-T::one()).min(T::one()))
}

/// Unnormalized grid-cell probabilities for cells `n = −N..=N`.
pub fn scale_cells_raw<T: Real>(ybar: T, step: T, sigma: T) -> Result<Vec<T>> {
    let half = grid_half_width(step).ok_or(DomainError::BadStep(step.f64()))? as i64;
    let h = step / T::of(2.0);
    let out = (-half..=half)
        .map(|n| {
            let y = T::of(n as f64) * step;
            if n == -half {
                norm_cdf((y - ybar + h) / sigma)
            } else if n == half {
                norm_cdf((ybar - y + h) / sigma)
            } else {
                Link::GaussianCdf.cdf_diff((ybar - y + h) / sigma, (ybar - y - h) / sigma)
            }
        })
        .collect();
    Ok(out)
}

/// Grid-cell distribution of the slider response, renormalized.
pub fn scale_cells<T: Real>(ybar: T, step: T, sigma: T) -> Result<Vec<T>> {
    let raw = scale_cells_raw(ybar, step, sigma)?;
    let s: T = raw.iter().copied().sum();
    Ok(raw.into_iter().map(|p| p / s).collect())
}

/// `P(y | ȳ)` for a slider value on the grid.
pub fn scale_likelihood<T: Real>(y: T, ybar: T, step: T, sigma: T) -> Result<T> {
    let n = grid_index(y, step).ok_or(DomainError::OffGrid { value: y.f64(), step: step.f64() })?;
    let half = grid_half_width(step).expect("checked by grid_index") as i64;
    Ok(scale_cells(ybar, step, sigma)?[(n + half) as usize])
}

/// Distribution over labels `1..=o` given utility `r`.
pub fn ordinal_probs<T: Real>(r: T, thr: &OrdinalThresholds<T>, sigma: T, link: Link) -> Vec<T> {
    (1..=thr.categories())
        .map(|k| {
            let a = (thr.bound(k) - r) / sigma;
            let c = (thr.bound(k - 1) - r) / sigma;
            link.cdf_diff(a, c)
        })
        .collect()
}

pub fn ordinal_likelihood<T: Real>(r: T, label: u32, thr: &OrdinalThresholds<T>, sigma: T, link: Link) -> Result<T> {
    let o = thr.categories();
    if label < 1 || label as usize > o {
        return Err(LikelihoodError::LabelRange { label, categories: o });
    }
    let k = label as usize;
    Ok(link.cdf_diff((thr.bound(k) - r) / sigma, (thr.bound(k - 1) - r) / sigma))
}

/// `ln P(ranking)` of the sequential softmax, rewards listed in ranked order.
pub fn plackett_luce_log<T: Real>(ranked_rewards: &[T], beta: T) -> T {
    let scaled: Vec<T> = ranked_rewards.iter().map(|&r| beta * r).collect();
    (0..scaled.len().saturating_sub(1)).map(|j| scaled[j] - log_sum_exp(&scaled[j..])).sum()
}

fn ranked_rewards<T: Real>(pool: &QueryPool<T>, items: &[ItemId], order: &[ItemId], omega: &[T]) -> Result<Vec<T>> {
    let mut a = items.to_vec();
    let mut b = order.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    if a != b {
        return Err(DomainError::NotPermutation.into());
    }
    item_rewards(pool, order, omega)
}

pub fn plackett_luce<T: Real>(
    pool: &QueryPool<T>,
    items: &[ItemId],
    order: &[ItemId],
    omega: &[T],
    cfg: &RationalityConfig<T>,
) -> Result<T> {
    Ok(plackett_luce_log(&ranked_rewards(pool, items, order, omega)?, cfg.beta_choice).exp())
}

/// `ln Σ_m α_m PL_m(ranking)`.
pub fn mixture_ranking_log<T: Real>(
    pool: &QueryPool<T>,
    items: &[ItemId],
    order: &[ItemId],
    mix: &MixtureParams<T>,
    cfg: &RationalityConfig<T>,
) -> Result<T> {
    let terms = mix
        .weights
        .iter()
        .zip(&mix.coeffs)
        .map(|(w, &a)| Ok(a.ln() + plackett_luce_log(&ranked_rewards(pool, items, order, w)?, cfg.beta_choice)))
        .collect::<Result<Vec<T>>>()?;
    Ok(log_sum_exp(&terms))
}

pub fn mixture_ranking<T: Real>(
    pool: &QueryPool<T>,
    items: &[ItemId],
    order: &[ItemId],
    mix: &MixtureParams<T>,
    cfg: &RationalityConfig<T>,
) -> Result<T> {
    Ok(mixture_ranking_log(pool, items, order, mix, cfg)?.exp())
}

/// Probability of moving from mode `m` to mode `m2` (0-based) after
/// experiencing a trajectory with features `prev_psi`.
pub fn mode_transition<T: Real>(m: usize, m2: usize, prev_psi: &[T], params: &RewardDynamicsParams<T>) -> Result<T> {
    if params.w.len() != 2 {
        return Err(LikelihoodError::Unsupported("reward dynamics are implemented for two modes"));
    }
    if m > 1 || m2 > 1 {
        return Err(LikelihoodError::Unsupported("mode index out of range"));
    }
    let u = linear_reward(&params.dv, prev_psi)?;
    let soft = [sigmoid(u), sigmoid(-u)];
    let weighted: Vec<T> = (0..2).map(|j| soft[j] * params.prior.entry::<T>(m, j, 2)).collect();
    let z: T = weighted.iter().copied().sum();
    Ok(weighted[m2] / z)
}

/// Joint probability of both sub-query answers, marginalizing the modes.
pub fn hierarchical_likelihood<T: Real>(
    pool: &QueryPool<T>,
    query: &Query<T>,
    response: &Response<T>,
    params: &RewardDynamicsParams<T>,
    cfg: &RationalityConfig<T>,
) -> Result<T> {
    let (Query::Hierarchical { context, first, second }, Response::HierarchicalPair { first: c1, second: c2 }) =
        (query, response)
    else {
        return Err(DomainError::KindMismatch { query: query.kind_name(), response: response.kind_name() }.into());
    };
    let table = hierarchical_table(pool, *context, first, second, params, cfg)?;
    let mut p = T::zero();
    for (i, a) in first.iter().enumerate() {
        for (j, b) in second.iter().enumerate() {
            if a == c1 && b == c2 {
                p += table[i * second.len() + j];
            }
        }
    }
    if !first.contains(c1) {
        return Err(DomainError::NotInQuery(*c1).into());
    }
    if !second.contains(c2) {
        return Err(DomainError::NotInQuery(*c2).into());
    }
    Ok(p)
}

/// Probabilities of every positional answer pair `(i, j)`, row-major.
pub fn hierarchical_table<T: Real>(
    pool: &QueryPool<T>,
    context: ItemId,
    first: &[ItemId],
    second: &[ItemId],
    params: &RewardDynamicsParams<T>,
    cfg: &RationalityConfig<T>,
) -> Result<Vec<T>> {
    if params.w.len() != 2 {
        return Err(LikelihoodError::Unsupported("reward dynamics are implemented for two modes"));
    }
    let ctx = pool.features(context)?;
    let choice: Vec<[Vec<T>; 2]> = [first, second]
        .iter()
        .map(|items| {
            Ok([
                choice_probs(&item_rewards(pool, items, &params.w[0])?, cfg.beta_choice),
                choice_probs(&item_rewards(pool, items, &params.w[1])?, cfg.beta_choice),
            ])
        })
        .collect::<Result<_>>()?;
    let half = T::of(0.5);
    let mut m1 = [T::zero(); 2];
    for (k, slot) in m1.iter_mut().enumerate() {
        for m0 in 0..2 {
            *slot += half * mode_transition(m0, k, ctx, params)?;
        }
    }
    let mut out = vec![T::zero(); first.len() * second.len()];
    for (i, &a) in first.iter().enumerate() {
        let psi_a = pool.features(a)?;
        let mut trans = [[T::zero(); 2]; 2];
        for (k, row) in trans.iter_mut().enumerate() {
            for (k2, cell) in row.iter_mut().enumerate() {
                *cell = mode_transition(k, k2, psi_a, params)?;
            }
        }
        for j in 0..second.len() {
            let mut p = T::zero();
            for k in 0..2 {
                for k2 in 0..2 {
                    p += m1[k] * choice[0][k][i] * trans[k][k2] * choice[1][k2][j];
                }
            }
            out[i * second.len() + j] = p;
        }
    }
    Ok(out)
}

/// Unnormalized demonstration log-likelihood `β^D ω·Σψ`.
pub fn demo_loglik<T: Real>(demos: &[Vec<T>], omega: &[T], cfg: &RationalityConfig<T>) -> Result<T> {
    let mut total = T::zero();
    for d in demos {
        total += linear_reward(omega, d)?;
    }
    Ok(cfg.beta_demo * total)
}
