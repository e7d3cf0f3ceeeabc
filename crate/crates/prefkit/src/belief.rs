//! Sample-set posteriors over reward parameters.
//!
//! A [`Posterior`] is the unnormalized log density of one parameter space
//! given a dataset; a [`SampleBelief`] is a set of draws from it produced by
//! the Metropolis-Hastings samplers in this module.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{grid_half_width, Dataset, DomainError, ItemId, Query, QueryPool, Response};
use crate::likelihood::{
    choice_probs, demo_loglik, hierarchical_table, item_rewards, max_reward_gap, mixture_ranking_log,
    ordinal_likelihood, ordinal_probs, plackett_luce_log, probit_pref, scale_cells, scale_likelihood,
    scale_noiseless, weak_choice_probs, LikelihoodError, MixtureParams, OrdinalThresholds, PriorKind,
    RationalityConfig, RewardDynamicsParams,
};
use crate::metrics::match_columns;
use crate::scalar::{log_sum_exp, norm, Real};

/// Upper end of the uniform prior on the minimum perceivable difference.
pub const DELTA_MAX: f64 = 2.0;
/// Radius of the ball `ΔV` lives in.
pub const DV_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BeliefError {
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("{query} queries are not supported by the {space} space")]
    Unsupported { query: &'static str, space: &'static str },
    #[error("point does not have the shape of the {0} space")]
    Shape(&'static str),
    #[error("belief has no samples")]
    Empty,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("ordinal queries need thresholds")]
    NoThresholds,
    #[error("no point with finite log posterior found among {0} prior draws")]
    NoSupport(usize),
}

type Result<T> = std::result::Result<T, BeliefError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceKind {
    LinearOmega,
    /// `(ω, α)` of slider feedback.
    OmegaAlpha,
    /// `(ω, δ)` of weak comparisons with unknown δ.
    OmegaDelta,
    Mixture { modes: usize },
    /// Two modes; the transition prior structure is fixed, not inferred.
    RewardDynamics { prior: PriorKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub kind: SpaceKind,
    pub dim: usize,
}

impl ParamSpace {
    pub fn linear(dim: usize) -> Self {
        ParamSpace { kind: SpaceKind::LinearOmega, dim }
    }

    pub fn omega_alpha(dim: usize) -> Self {
        ParamSpace { kind: SpaceKind::OmegaAlpha, dim }
    }

    pub fn omega_delta(dim: usize) -> Self {
        ParamSpace { kind: SpaceKind::OmegaDelta, dim }
    }

    pub fn mixture(dim: usize, modes: usize) -> Self {
        ParamSpace { kind: SpaceKind::Mixture { modes }, dim }
    }

    pub fn dynamics(dim: usize, prior: PriorKind) -> Self {
        ParamSpace { kind: SpaceKind::RewardDynamics { prior }, dim }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            SpaceKind::LinearOmega => "linear_omega",
            SpaceKind::OmegaAlpha => "omega_alpha",
            SpaceKind::OmegaDelta => "omega_delta",
            SpaceKind::Mixture { .. } => "mixture",
            SpaceKind::RewardDynamics { .. } => "reward_dynamics",
        }
    }

    /// Length of the flat encoding of a point.
    pub fn flat_len(&self) -> usize {
        let d = self.dim;
        match self.kind {
            SpaceKind::LinearOmega => d,
            SpaceKind::OmegaAlpha | SpaceKind::OmegaDelta => d + 1,
            SpaceKind::Mixture { modes } => modes * (d + 1),
            SpaceKind::RewardDynamics { .. } => 3 * d,
        }
    }

    /// Dimension of the sampler's unconstrained-where-needed coordinates.
    pub fn mh_len(&self) -> usize {
        match self.kind {
            SpaceKind::Mixture { modes } => modes * (self.dim + 1) - 1,
            _ => self.flat_len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(BeliefError::Config("dimension must be at least 1".into()));
        }
        if let SpaceKind::Mixture { modes } = self.kind {
            if modes < 1 {
                return Err(BeliefError::Config("mixture needs at least one mode".into()));
            }
        }
        Ok(())
    }

    /// Log prior density, `−∞` outside the support. Constant terms dropped.
    pub fn log_prior<T: Real>(&self, p: &ParamPoint<T>) -> T {
        if !self.fits(p) {
            return T::neg_infinity();
        }
        let inside = match p {
            ParamPoint::Linear { omega } => in_ball(omega, 1.0),
            ParamPoint::OmegaAlpha { omega, alpha } => {
                in_ball(omega, 1.0) && *alpha > T::zero() && *alpha <= T::one()
            }
            ParamPoint::OmegaDelta { omega, delta } => {
                in_ball(omega, 1.0) && *delta >= T::zero() && *delta <= T::of(DELTA_MAX)
            }
            ParamPoint::Mixture(m) => {
                let on_simplex = m.coeffs.iter().all(|&a| a > T::zero())
                    && (m.coeffs.iter().copied().sum::<T>() - T::one()).abs() < T::of(1e-9);
                if !on_simplex || !m.weights.iter().all(|w| in_ball(w, 1.0)) {
                    return T::neg_infinity();
                }
                return -T::of(0.5) * m.weights.iter().flatten().map(|&x| x * x).sum::<T>();
            }
            ParamPoint::Dynamics(dy) => dy.feasible(),
        };
        if inside { T::zero() } else { T::neg_infinity() }
    }

    /// Whether a point has this space's variant and dimensions.
    pub fn fits<T: Real>(&self, p: &ParamPoint<T>) -> bool {
        let d = self.dim;
        match (self.kind, p) {
            (SpaceKind::LinearOmega, ParamPoint::Linear { omega }) => omega.len() == d,
            (SpaceKind::OmegaAlpha, ParamPoint::OmegaAlpha { omega, .. }) => omega.len() == d,
            (SpaceKind::OmegaDelta, ParamPoint::OmegaDelta { omega, .. }) => omega.len() == d,
            (SpaceKind::Mixture { modes }, ParamPoint::Mixture(m)) => {
                m.weights.len() == modes && m.coeffs.len() == modes && m.weights.iter().all(|w| w.len() == d)
            }
            (SpaceKind::RewardDynamics { prior }, ParamPoint::Dynamics(dy)) => {
                dy.prior == prior && dy.w.len() == 2 && dy.w.iter().all(|w| w.len() == d) && dy.dv.len() == d
            }
            _ => false,
        }
    }

    /// Rebuilds a point from its flat encoding.
    pub fn unflatten<T: Real>(&self, v: &[T]) -> Result<ParamPoint<T>> {
        if v.len() != self.flat_len() {
            return Err(BeliefError::Shape(self.name()));
        }
        let d = self.dim;
        Ok(match self.kind {
            SpaceKind::LinearOmega => ParamPoint::Linear { omega: v.to_vec() },
            SpaceKind::OmegaAlpha => ParamPoint::OmegaAlpha { omega: v[..d].to_vec(), alpha: v[d] },
            SpaceKind::OmegaDelta => ParamPoint::OmegaDelta { omega: v[..d].to_vec(), delta: v[d] },
            SpaceKind::Mixture { modes } => ParamPoint::Mixture(MixtureParams {
                weights: v[..modes * d].chunks(d).map(<[T]>::to_vec).collect(),
                coeffs: v[modes * d..].to_vec(),
            }),
            SpaceKind::RewardDynamics { prior } => ParamPoint::Dynamics(RewardDynamicsParams {
                w: vec![v[..d].to_vec(), v[d..2 * d].to_vec()],
                dv: v[2 * d..].to_vec(),
                prior,
            }),
        })
    }

    fn to_mh(&self, p: &ParamPoint<f64>) -> Vec<f64> {
        match p {
            ParamPoint::Mixture(m) => {
                let mut v: Vec<f64> = m.weights.iter().flatten().copied().collect();
                let last = m.coeffs[m.coeffs.len() - 1].ln();
                v.extend(m.coeffs[..m.coeffs.len() - 1].iter().map(|a| a.ln() - last));
                v
            }
            _ => p.flatten(),
        }
    }

    fn from_mh(&self, z: &[f64]) -> ParamPoint<f64> {
        match self.kind {
            SpaceKind::Mixture { modes } => {
                let k = modes * self.dim;
                let mut logits: Vec<f64> = z[k..].to_vec();
                logits.push(0.0);
                let lse = log_sum_exp(&logits);
                let coeffs = logits.iter().map(|l| (l - lse).exp()).collect();
                ParamPoint::Mixture(MixtureParams {
                    weights: z[..k].chunks(self.dim).map(<[f64]>::to_vec).collect(),
                    coeffs,
                })
            }
            _ => self.unflatten(z).expect("sampler coordinates have the flat length"),
        }
    }

    /// `ln |∂point/∂z|` of the sampler coordinates.
    fn log_jacobian(&self, p: &ParamPoint<f64>) -> f64 {
        match p {
            ParamPoint::Mixture(m) => m.coeffs.iter().map(|a| a.ln()).sum(),
            _ => 0.0,
        }
    }

    /// i.i.d. prior draws.
    pub fn prior_sample<T: Real>(&self, n: usize, seed: u64) -> Vec<ParamPoint<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.prior_draw(&mut rng).cast()).collect()
    }

    fn prior_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamPoint<f64> {
        let d = self.dim;
        match self.kind {
            SpaceKind::LinearOmega => ParamPoint::Linear { omega: ball(rng, d, 1.0) },
            SpaceKind::OmegaAlpha => {
                // 1 − U is uniform on (0, 1].
                ParamPoint::OmegaAlpha { omega: ball(rng, d, 1.0), alpha: 1.0 - rng.random::<f64>() }
            }
            SpaceKind::OmegaDelta => {
                ParamPoint::OmegaDelta { omega: ball(rng, d, 1.0), delta: DELTA_MAX * rng.random::<f64>() }
            }
            SpaceKind::Mixture { modes } => {
                let weights = (0..modes).map(|_| project_to_ball(gaussian(rng, d), 1.0)).collect();
                ParamPoint::Mixture(MixtureParams { weights, coeffs: simplex(rng, modes) })
            }
            SpaceKind::RewardDynamics { prior } => {
                let mut dv = ball(rng, d, DV_RADIUS);
                dv[0] = dv[0].abs().max(f64::MIN_POSITIVE);
                ParamPoint::Dynamics(RewardDynamicsParams { w: vec![ball(rng, d, 1.0), ball(rng, d, 1.0)], dv, prior })
            }
        }
    }
}

fn in_ball<T: Real>(v: &[T], r: f64) -> bool {
    norm(v) <= T::of(r)
}

pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Uniform draw from the `d`-ball of radius `r`.
pub fn ball<R: Rng + ?Sized>(rng: &mut R, d: usize, r: f64) -> Vec<f64> {
    loop {
        let g = gaussian(rng, d);
        let n = norm(&g);
        if n > 0.0 {
            let rad = r * rng.random::<f64>().powf(1.0 / d as f64);
            return g.into_iter().map(|x| x * rad / n).collect();
        }
    }
}

/// Uniform draw from the unit simplex via sorted-uniform gaps.
pub fn simplex<R: Rng + ?Sized>(rng: &mut R, m: usize) -> Vec<f64> {
    loop {
        let mut cuts: Vec<f64> = (0..m - 1).map(|_| rng.random::<f64>()).collect();
        cuts.push(0.0);
        cuts.push(1.0);
        cuts.sort_by(f64::total_cmp);
        let gaps: Vec<f64> = cuts.windows(2).map(|w| w[1] - w[0]).collect();
        if gaps.iter().all(|&g| g > 0.0) {
            return gaps;
        }
    }
}

pub(crate) fn project_to_ball(v: Vec<f64>, r: f64) -> Vec<f64> {
    let n = norm(&v);
    if n <= r {
        return v;
    }
    let mut out: Vec<f64> = v.into_iter().map(|x| x * r / n).collect();
    // rounding can leave the norm a hair above r
    while norm(&out) > r {
        out.iter_mut().for_each(|x| *x *= 1.0 - f64::EPSILON);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamPoint<T> {
    Linear { omega: Vec<T> },
    OmegaAlpha { omega: Vec<T>, alpha: T },
    OmegaDelta { omega: Vec<T>, delta: T },
    Mixture(MixtureParams<T>),
    Dynamics(RewardDynamicsParams<T>),
}

impl<T: Real> ParamPoint<T> {
    /// The single reward vector of the unimodal spaces.
    pub fn omega(&self) -> Option<&[T]> {
        match self {
            ParamPoint::Linear { omega } | ParamPoint::OmegaAlpha { omega, .. } | ParamPoint::OmegaDelta { omega, .. } => {
                Some(omega)
            }
            _ => None,
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        match self {
            ParamPoint::Linear { omega } => omega.clone(),
            ParamPoint::OmegaAlpha { omega, alpha: x } | ParamPoint::OmegaDelta { omega, delta: x } => {
                let mut v = omega.clone();
                v.push(*x);
                v
            }
            ParamPoint::Mixture(m) => m.weights.iter().flatten().chain(&m.coeffs).copied().collect(),
            ParamPoint::Dynamics(d) => d.w.iter().flatten().chain(&d.dv).copied().collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParamPoint<U> {
        let c = |v: &[T]| v.iter().map(|x| U::of(x.f64())).collect::<Vec<U>>();
        match self {
            ParamPoint::Linear { omega } => ParamPoint::Linear { omega: c(omega) },
            ParamPoint::OmegaAlpha { omega, alpha } => ParamPoint::OmegaAlpha { omega: c(omega), alpha: U::of(alpha.f64()) },
            ParamPoint::OmegaDelta { omega, delta } => ParamPoint::OmegaDelta { omega: c(omega), delta: U::of(delta.f64()) },
            ParamPoint::Mixture(m) => ParamPoint::Mixture(MixtureParams {
                weights: m.weights.iter().map(|w| c(w)).collect(),
                coeffs: c(&m.coeffs),
            }),
            ParamPoint::Dynamics(d) => ParamPoint::Dynamics(RewardDynamicsParams {
                w: d.w.iter().map(|w| c(w)).collect(),
                dv: c(&d.dv),
                prior: d.prior,
            }),
        }
    }
}

/// How the maximum reward gap `Γ(ω)` of slider queries is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GapPolicy<T> {
    /// Recomputed over the pool for every parameter point.
    #[default]
    PerSample,
    Fixed { gap: T },
}

/// Everything a likelihood needs besides the parameter point.
#[derive(Debug, Clone)]
pub struct ModelContext<T> {
    pub pool: Arc<QueryPool<T>>,
    pub cfg: RationalityConfig<T>,
    pub thresholds: Option<OrdinalThresholds<T>>,
    pub gap: GapPolicy<T>,
    /// Replace pairwise choice likelihoods by `min(1, exp(β(R_c − R_o)))`.
    pub surrogate: bool,
}

impl<T: Real> ModelContext<T> {
    pub fn new(pool: Arc<QueryPool<T>>, cfg: RationalityConfig<T>) -> Self {
        ModelContext { pool, cfg, thresholds: None, gap: GapPolicy::PerSample, surrogate: false }
    }

    /// `Γ` for this point, computed only when a slider query needs it.
    pub fn gap_for(&self, point: &ParamPoint<T>) -> Result<T> {
        match self.gap {
            GapPolicy::Fixed { gap } => Ok(gap),
            GapPolicy::PerSample => {
                let w = point.omega().ok_or(BeliefError::Unsupported { query: "scale", space: "mixture" })?;
                Ok(max_reward_gap(w, &self.pool)?)
            }
        }
    }

    fn unsupported(q: &Query<T>, p: &ParamPoint<T>) -> BeliefError {
        let space = match p {
            ParamPoint::Linear { .. } => "linear_omega",
            ParamPoint::OmegaAlpha { .. } => "omega_alpha",
            ParamPoint::OmegaDelta { .. } => "omega_delta",
            ParamPoint::Mixture(_) => "mixture",
            ParamPoint::Dynamics(_) => "reward_dynamics",
        };
        BeliefError::Unsupported { query: q.kind_name(), space }
    }

    fn delta_of(&self, p: &ParamPoint<T>) -> T {
        match p {
            ParamPoint::OmegaDelta { delta, .. } => *delta,
            _ => self.cfg.delta_min,
        }
    }

    fn alpha_of(&self, p: &ParamPoint<T>) -> T {
        match p {
            ParamPoint::OmegaAlpha { alpha, .. } => *alpha,
            _ => T::one(),
        }
    }

    /// Whether a query kind can be scored under a space.
    pub fn supports(space: &ParamSpace, q: &Query<T>) -> bool {
        match space.kind {
            SpaceKind::LinearOmega | SpaceKind::OmegaAlpha | SpaceKind::OmegaDelta => {
                !matches!(q, Query::Hierarchical { .. })
            }
            SpaceKind::Mixture { .. } => matches!(q, Query::Choice { .. } | Query::Ranking { .. }),
            SpaceKind::RewardDynamics { .. } => matches!(q, Query::Hierarchical { .. }),
        }
    }

    /// `ln P(response | query, point)`.
    pub fn log_likelihood(&self, point: &ParamPoint<T>, q: &Query<T>, r: &Response<T>) -> Result<T> {
        let gap = if matches!(q, Query::Scale { .. }) { Some(self.gap_for(point)?) } else { None };
        self.log_likelihood_with_gap(point, gap, q, r)
    }

    /// As [`Self::log_likelihood`] with `Γ` supplied by the caller.
    pub fn log_likelihood_with_gap(
        &self,
        point: &ParamPoint<T>,
        gap: Option<T>,
        q: &Query<T>,
        r: &Response<T>,
    ) -> Result<T> {
        let pool = &*self.pool;
        let cfg = &self.cfg;
        let bad = || Self::unsupported(q, point);
        let mismatch =
            || BeliefError::Domain(DomainError::KindMismatch { query: q.kind_name(), response: r.kind_name() });
        match (point, q, r) {
            (ParamPoint::Mixture(m), Query::Ranking { items }, Response::Ranking { order }) => {
                Ok(mixture_ranking_log(pool, items, order, m, cfg)?)
            }
            (ParamPoint::Mixture(m), Query::Choice { items }, Response::Chosen { item }) => {
                let mut terms = Vec::with_capacity(m.weights.len());
                for (w, &a) in m.weights.iter().zip(&m.coeffs) {
                    let p = positional_sum(items, *item, &choice_probs(&item_rewards(pool, items, w)?, cfg.beta_choice))?;
                    terms.push(a.ln() + p.ln());
                }
                Ok(log_sum_exp(&terms))
            }
            (ParamPoint::Dynamics(dy), Query::Hierarchical { context, first, second }, Response::HierarchicalPair { first: c1, second: c2 }) => {
                let table = hierarchical_table(pool, *context, first, second, dy, cfg)?;
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
                Ok(p.ln())
            }
            (ParamPoint::Mixture(_) | ParamPoint::Dynamics(_), _, _) => Err(bad()),
            (_, Query::Hierarchical { .. }, _) => Err(bad()),
            (p, _, _) => {
                let w = p.omega().expect("unimodal point");
                match (q, r) {
                    (Query::Choice { items }, Response::Chosen { item }) => {
                        let rw = item_rewards(pool, items, w)?;
                        if self.surrogate && items.len() == 2 {
                            let pos = items.iter().position(|x| x == item).ok_or(DomainError::NotInQuery(*item))?;
                            let d = cfg.beta_choice * (rw[pos] - rw[1 - pos]);
                            return Ok(d.min(T::zero()));
                        }
                        Ok(positional_sum(items, *item, &choice_probs(&rw, cfg.beta_choice))?.ln())
                    }
                    (Query::WeakChoice { items }, _) => {
                        let rw = item_rewards(pool, items, w)?;
                        let pr = weak_choice_probs(rw[0], rw[1], self.delta_of(p));
                        let v = match r {
                            Response::AboutEqual => pr[2],
                            Response::Chosen { item } => {
                                if !items.contains(item) {
                                    return Err(DomainError::NotInQuery(*item).into());
                                }
                                (0..2).filter(|&j| items[j] == *item).map(|j| pr[j]).sum()
                            }
                            _ => return Err(mismatch()),
                        };
                        Ok(v.ln())
                    }
                    (Query::Scale { items, step }, Response::ScaleValue { value }) => {
                        let rw = item_rewards(pool, items, w)?;
                        let gap = match gap {
                            Some(g) => g,
                            None => self.gap_for(p)?,
                        };
                        let ybar = scale_noiseless(rw[0], rw[1], self.alpha_of(p), gap)?;
                        Ok(scale_likelihood(*value, ybar, *step, cfg.sigma_scale)?.ln())
                    }
                    (Query::Ordinal { item, previous }, Response::OrdinalLabel { label, preferred }) => {
                        let thr = self.thresholds.as_ref().ok_or(BeliefError::NoThresholds)?;
                        let r_item = crate::scalar::dot(w, pool.features(*item)?);
                        let mut lp = ordinal_likelihood(r_item, *label, thr, cfg.sigma_ord, cfg.link)?.ln();
                        match (previous, preferred) {
                            (Some(prev), Some(win)) => {
                                let r_prev = crate::scalar::dot(w, pool.features(*prev)?);
                                let (a, b) = if win == item { (r_item, r_prev) } else { (r_prev, r_item) };
                                lp += probit_pref(a, b, cfg.sigma_pref, cfg.link).ln();
                            }
                            (None, None) => {}
                            _ => return Err(mismatch()),
                        }
                        Ok(lp)
                    }
                    (Query::Ranking { items }, Response::Ranking { order }) => {
                        let mut a = items.clone();
                        let mut b = order.clone();
                        a.sort_unstable();
                        b.sort_unstable();
                        if a != b {
                            return Err(DomainError::NotPermutation.into());
                        }
                        Ok(plackett_luce_log(&item_rewards(pool, order, w)?, cfg.beta_choice))
                    }
                    _ => Err(mismatch()),
                }
            }
        }
    }

    /// Number of positional outcomes of a query.
    pub fn outcome_count(&self, q: &Query<T>) -> Result<usize> {
        Ok(match q {
            Query::Choice { items } => items.len(),
            Query::WeakChoice { .. } => 3,
            Query::Scale { step, .. } => 2 * grid_half_width(*step).ok_or(DomainError::BadStep(step.f64()))? + 1,
            Query::Ordinal { previous, .. } => {
                let o = self.thresholds.as_ref().ok_or(BeliefError::NoThresholds)?.categories();
                if previous.is_some() { 2 * o } else { o }
            }
            Query::Ranking { items } => (1..=items.len()).product(),
            Query::Hierarchical { first, second, .. } => first.len() * second.len(),
        })
    }

    /// Probability of every positional outcome, in the order of
    /// [`Self::outcome_response`]. Sums to one.
    pub fn outcome_table(&self, point: &ParamPoint<T>, q: &Query<T>) -> Result<Vec<T>> {
        let pool = &*self.pool;
        let cfg = &self.cfg;
        match (point, q) {
            (ParamPoint::Mixture(m), Query::Choice { items }) => {
                let mut out = vec![T::zero(); items.len()];
                for (w, &a) in m.weights.iter().zip(&m.coeffs) {
                    for (o, p) in out.iter_mut().zip(choice_probs(&item_rewards(pool, items, w)?, cfg.beta_choice)) {
                        *o += a * p;
                    }
                }
                Ok(out)
            }
            (ParamPoint::Mixture(m), Query::Ranking { items }) => {
                let perms = permutations(items.len());
                let mut out = vec![T::zero(); perms.len()];
                for (w, &a) in m.weights.iter().zip(&m.coeffs) {
                    let rw = item_rewards(pool, items, w)?;
                    for (o, perm) in out.iter_mut().zip(&perms) {
                        let ranked: Vec<T> = perm.iter().map(|&i| rw[i]).collect();
                        *o += a * plackett_luce_log(&ranked, cfg.beta_choice).exp();
                    }
                }
                Ok(out)
            }
            (ParamPoint::Dynamics(dy), Query::Hierarchical { context, first, second }) => {
                Ok(hierarchical_table(pool, *context, first, second, dy, cfg)?)
            }
            (ParamPoint::Mixture(_) | ParamPoint::Dynamics(_), _) | (_, Query::Hierarchical { .. }) => {
                Err(Self::unsupported(q, point))
            }
            (p, _) => {
                let w = p.omega().expect("unimodal point");
                match q {
                    Query::Choice { items } => Ok(choice_probs(&item_rewards(pool, items, w)?, cfg.beta_choice)),
                    Query::WeakChoice { items } => {
                        let rw = item_rewards(pool, items, w)?;
                        Ok(weak_choice_probs(rw[0], rw[1], self.delta_of(p)).to_vec())
                    }
                    Query::Scale { items, step } => {
                        let rw = item_rewards(pool, items, w)?;
                        let ybar = scale_noiseless(rw[0], rw[1], self.alpha_of(p), self.gap_for(p)?)?;
                        Ok(scale_cells(ybar, *step, cfg.sigma_scale)?)
                    }
                    Query::Ordinal { item, previous } => {
                        let thr = self.thresholds.as_ref().ok_or(BeliefError::NoThresholds)?;
                        let r_item = crate::scalar::dot(w, pool.features(*item)?);
                        let labels = ordinal_probs(r_item, thr, cfg.sigma_ord, cfg.link);
                        match previous {
                            None => Ok(labels),
                            Some(prev) => {
                                let r_prev = crate::scalar::dot(w, pool.features(*prev)?);
                                let win = probit_pref(r_item, r_prev, cfg.sigma_pref, cfg.link);
                                Ok(labels.iter().flat_map(|&l| [l * win, l * (T::one() - win)]).collect())
                            }
                        }
                    }
                    Query::Ranking { items } => {
                        let rw = item_rewards(pool, items, w)?;
                        Ok(permutations(items.len())
                            .iter()
                            .map(|perm| {
                                let ranked: Vec<T> = perm.iter().map(|&i| rw[i]).collect();
                                plackett_luce_log(&ranked, cfg.beta_choice).exp()
                            })
                            .collect())
                    }
                    Query::Hierarchical { .. } => unreachable!("handled above"),
                }
            }
        }
    }

    /// The response of positional outcome `idx`.
    pub fn outcome_response(&self, q: &Query<T>, idx: usize) -> Result<Response<T>> {
        let n = self.outcome_count(q)?;
        if idx >= n {
            return Err(BeliefError::Config(format!("outcome {idx} out of range {n}")));
        }
        Ok(match q {
            Query::Choice { items } => Response::Chosen { item: items[idx] },
            Query::WeakChoice { items } => {
                if idx == 2 { Response::AboutEqual } else { Response::Chosen { item: items[idx] } }
            }
            Query::Scale { step, .. } => {
                let half = grid_half_width(*step).expect("checked by outcome_count") as i64;
                Response::ScaleValue { value: T::of((idx as i64 - half) as f64 * step.f64()) }
            }
            Query::Ordinal { item, previous } => match previous {
                None => Response::OrdinalLabel { label: idx as u32 + 1, preferred: None },
                Some(prev) => Response::OrdinalLabel {
                    label: (idx / 2) as u32 + 1,
                    preferred: Some(if idx % 2 == 0 { *item } else { *prev }),
                },
            },
            Query::Ranking { items } => {
                let perm = &permutations(items.len())[idx];
                Response::Ranking { order: perm.iter().map(|&i| items[i]).collect() }
            }
            Query::Hierarchical { first, second, .. } => {
                Response::HierarchicalPair { first: first[idx / second.len()], second: second[idx % second.len()] }
            }
        })
    }
}

fn positional_sum<T: Real>(items: &[ItemId], chosen: ItemId, probs: &[T]) -> Result<T> {
    if !items.contains(&chosen) {
        return Err(DomainError::NotInQuery(chosen).into());
    }
    Ok(items.iter().zip(probs).filter(|(&id, _)| id == chosen).map(|(_, &p)| p).sum())
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        // next lexicographic permutation
        let Some(i) = (1..k).rev().find(|&i| cur[i - 1] < cur[i]) else { break };
        let j = (i..k).rev().find(|&j| cur[j] > cur[i - 1]).expect("pivot has a successor");
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

/// Unnormalized log posterior of one space given a dataset.
#[derive(Debug, Clone)]
pub struct Posterior<T> {
    pub space: ParamSpace,
    pub model: ModelContext<T>,
    pub dataset: Dataset<T>,
}

impl<T: Real> Posterior<T> {
    pub fn new(space: ParamSpace, model: ModelContext<T>, dataset: Dataset<T>) -> Result<Self> {
        space.validate()?;
        model.cfg.validate().map_err(BeliefError::Config)?;
        if model.pool.dim() != space.dim {
            return Err(BeliefError::Config(format!("pool dimension {} vs space {}", model.pool.dim(), space.dim)));
        }
        let unimodal = matches!(space.kind, SpaceKind::LinearOmega | SpaceKind::OmegaAlpha | SpaceKind::OmegaDelta);
        if !dataset.demonstrations.is_empty() && !unimodal {
            return Err(BeliefError::Unsupported { query: "demonstration", space: space.name() });
        }
        for (q, _) in &dataset.interactions {
            if !ModelContext::supports(&space, q) {
                return Err(BeliefError::Unsupported { query: q.kind_name(), space: space.name() });
            }
        }
        Ok(Posterior { space, model, dataset })
    }

    /// Appends one validated interaction.
    pub fn push(&mut self, q: Query<T>, r: Response<T>) -> Result<()> {
        if !ModelContext::supports(&self.space, &q) {
            return Err(BeliefError::Unsupported { query: q.kind_name(), space: self.space.name() });
        }
        self.dataset.push(&self.model.pool, q, r)?;
        Ok(())
    }

    /// Log prior + demonstration term + Σ log likelihoods; `−∞` off support.
    pub fn log_posterior(&self, point: &ParamPoint<T>) -> Result<T> {
        if !self.space.fits(point) {
            return Err(BeliefError::Shape(self.space.name()));
        }
        let mut lp = self.space.log_prior(point);
        if lp == T::neg_infinity() {
            return Ok(lp);
        }
        if let Some(w) = point.omega() {
            let demos: Vec<Vec<T>> = self.dataset.demonstrations.iter().map(|d| d.0.clone()).collect();
            lp += demo_loglik(&demos, w, &self.model.cfg)?;
        }
        let needs_gap = self.dataset.interactions.iter().any(|(q, _)| matches!(q, Query::Scale { .. }));
        let gap = if needs_gap { Some(self.model.gap_for(point)?) } else { None };
        for (q, r) in &self.dataset.interactions {
            lp += self.model.log_likelihood_with_gap(point, gap, q, r)?;
            if lp == T::neg_infinity() {
                break;
            }
        }
        Ok(lp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MHMode {
    /// Many short chains from prior draws; only the final state of each is kept.
    MultiChainLastState,
    /// One chain with covariance-adapted proposals, thinned after burn-in.
    AdaptiveSingleChain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MHConfig {
    pub mode: MHMode,
    pub n_chains: usize,
    pub horizon: usize,
    pub proposal_sigma: f64,
    pub burn_in: usize,
    pub thin: usize,
    /// Samples kept by the adaptive chain.
    pub n_samples: usize,
    pub seed: u64,
}

impl MHConfig {
    pub fn multi_chain(seed: u64) -> Self {
        MHConfig {
            mode: MHMode::MultiChainLastState,
            n_chains: 100,
            horizon: 200,
            proposal_sigma: 0.15,
            burn_in: 0,
            thin: 1,
            n_samples: 100,
            seed,
        }
    }

    pub fn adaptive(n_samples: usize, seed: u64) -> Self {
        MHConfig {
            mode: MHMode::AdaptiveSingleChain,
            n_chains: 1,
            horizon: 0,
            proposal_sigma: 0.15,
            burn_in: 500,
            thin: 5,
            n_samples,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BeliefError::Config(m.into()));
        if !(self.proposal_sigma > 0.0 && self.proposal_sigma.is_finite()) {
            return bad("proposal_sigma must be positive");
        }
        match self.mode {
            MHMode::MultiChainLastState if self.n_chains == 0 || self.horizon == 0 => {
                bad("n_chains and horizon must be positive")
            }
            MHMode::AdaptiveSingleChain if self.n_samples == 0 || self.thin == 0 => {
                bad("n_samples and thin must be positive")
            }
            _ => Ok(()),
        }
    }
}

impl Default for MHConfig {
    fn default() -> Self {
        MHConfig::multi_chain(0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerStats {
    pub proposed: u64,
    pub accepted: u64,
    /// Set when no move was accepted at all.
    pub warning: Option<String>,
}

impl SamplerStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 { 0.0 } else { self.accepted as f64 / self.proposed as f64 }
    }
}

#[derive(Debug, Clone)]
pub struct SampleBelief<T> {
    pub posterior: Posterior<T>,
    pub samples: Vec<ParamPoint<T>>,
    pub log_posts: Vec<T>,
    pub seed: u64,
    pub version: u64,
    pub stats: SamplerStats,
}

/// Prior draws tried when looking for a starting point in the support.
const INIT_TRIES: usize = 10_000;

struct Target<'a, T> {
    post: &'a Posterior<T>,
}

impl<T: Real> Target<'_, T> {
    /// Log density in sampler coordinates.
    fn eval(&self, z: &[f64]) -> Result<(f64, ParamPoint<f64>)> {
        let p = self.post.space.from_mh(z);
        let lp = self.post.log_posterior(&p.cast())?.f64();
        if lp == f64::NEG_INFINITY || lp.is_nan() {
            return Ok((f64::NEG_INFINITY, p));
        }
        Ok((lp + self.post.space.log_jacobian(&p), p))
    }

    fn init<R: Rng>(&self, rng: &mut R) -> Result<(Vec<f64>, f64)> {
        for _ in 0..INIT_TRIES {
            let p = self.post.space.prior_draw(rng);
            let z = self.post.space.to_mh(&p);
            let (lp, _) = self.eval(&z)?;
            if lp > f64::NEG_INFINITY {
                return Ok((z, lp));
            }
        }
        Err(BeliefError::NoSupport(INIT_TRIES))
    }
}

/// Draws a fresh sample set from `post`.
pub fn sample_posterior<T: Real>(post: Posterior<T>, mh: &MHConfig, version: u64) -> Result<SampleBelief<T>> {
    mh.validate()?;
    let target = Target { post: &post };
    let (points, stats) = match mh.mode {
        MHMode::MultiChainLastState => multi_chain(&target, mh)?,
        MHMode::AdaptiveSingleChain => adaptive_chain(&target, mh)?,
    };
    let samples: Vec<ParamPoint<T>> = points.iter().map(|p| p.cast()).collect();
    let log_posts = samples.iter().map(|p| post.log_posterior(p)).collect::<Result<Vec<T>>>()?;
    Ok(SampleBelief { posterior: post, samples, log_posts, seed: mh.seed, version, stats })
}

fn stuck_warning(stats: &mut SamplerStats) {
    if stats.accepted == 0 {
        stats.warning = Some(format!(
            "sampler stuck: 0 of {} proposals accepted (acceptance rate {:.3})",
            stats.proposed,
            stats.acceptance_rate()
        ));
    }
}

fn multi_chain<T: Real>(target: &Target<'_, T>, mh: &MHConfig) -> Result<(Vec<ParamPoint<f64>>, SamplerStats)> {
    let runs: Vec<Result<(ParamPoint<f64>, u64)>> = (0..mh.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(mh.seed.wrapping_add(c as u64));
            let (mut z, mut lp) = target.init(&mut rng)?;
            let mut acc = 0;
            for _ in 0..mh.horizon {
                let prop: Vec<f64> =
                    z.iter().map(|&x| x + mh.proposal_sigma * rng.sample::<f64, _>(StandardNormal)).collect();
                let (lq, _) = target.eval(&prop)?;
                if lq > f64::NEG_INFINITY && rng.random::<f64>().ln() < lq - lp {
                    z = prop;
                    lp = lq;
                    acc += 1;
                }
            }
            Ok((target.post.space.from_mh(&z), acc))
        })
        .collect();
    let mut stats = SamplerStats::default();
    let mut points = Vec::with_capacity(runs.len());
    for r in runs {
        let (p, acc) = r?;
        points.push(p);
        stats.accepted += acc;
        stats.proposed += mh.horizon as u64;
    }
    stuck_warning(&mut stats);
    Ok((points, stats))
}

/// Steps before the empirical covariance replaces the isotropic proposal.
const ADAPT_START: usize = 100;
/// The proposal Cholesky factor is refreshed this often during adaptation.
const ADAPT_EVERY: usize = 25;

fn adaptive_chain<T: Real>(target: &Target<'_, T>, mh: &MHConfig) -> Result<(Vec<ParamPoint<f64>>, SamplerStats)> {
    let mut rng = ChaCha8Rng::seed_from_u64(mh.seed);
    let (mut z, mut lp) = target.init(&mut rng)?;
    let n = z.len();
    let sd = 2.38 * 2.38 / n as f64;
    let mut chol = DMatrix::<f64>::identity(n, n) * mh.proposal_sigma;
    let mut mean = DVector::from_column_slice(&z);
    let mut m2 = DMatrix::<f64>::zeros(n, n);
    let mut seen = 1usize;
    let mut stats = SamplerStats::default();
    let mut out = Vec::with_capacity(mh.n_samples);
    let total = mh.burn_in + mh.n_samples * mh.thin;
    for step in 0..total {
        let g = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let dz = &chol * g;
        let prop: Vec<f64> = z.iter().zip(dz.iter()).map(|(a, b)| a + b).collect();
        let (lq, _) = target.eval(&prop)?;
        stats.proposed += 1;
        if lq > f64::NEG_INFINITY && rng.random::<f64>().ln() < lq - lp {
            z = prop;
            lp = lq;
            stats.accepted += 1;
        }
        if step < mh.burn_in {
            // Welford update of the running covariance in sampler coordinates.
            seen += 1;
            let x = DVector::from_column_slice(&z);
            let delta = &x - &mean;
            mean += &delta / seen as f64;
            let delta2 = &x - &mean;
            m2 += &delta * delta2.transpose();
            if seen >= ADAPT_START && step % ADAPT_EVERY == 0 {
                let cov = &m2 / (seen - 1) as f64;
                let reg = (cov + DMatrix::<f64>::identity(n, n) * 1e-8) * sd;
                if let Some(c) = reg.cholesky() {
                    chol = c.l();
                }
            }
        } else if (step - mh.burn_in + 1) % mh.thin == 0 {
            out.push(target.post.space.from_mh(&z));
        }
    }
    stuck_warning(&mut stats);
    Ok((out, stats))
}

impl<T: Real> SampleBelief<T> {
    pub fn space(&self) -> ParamSpace {
        self.posterior.space
    }

    pub fn log_post(&self, p: &ParamPoint<T>) -> Result<T> {
        self.posterior.log_posterior(p)
    }

    /// Component-wise sample mean. Mixture columns are first aligned to the
    /// first sample by optimal assignment.
    pub fn mean_estimate(&self) -> Result<ParamPoint<T>> {
        let first = self.samples.first().ok_or(BeliefError::Empty)?;
        let n = T::count(self.samples.len());
        let aligned: Vec<Vec<T>> = match first {
            ParamPoint::Mixture(base) => self
                .samples
                .iter()
                .map(|s| match s {
                    ParamPoint::Mixture(m) => {
                        let perm = match_columns(&base.weights, &m.weights);
                        let weights: Vec<Vec<T>> = perm.iter().map(|&j| m.weights[j].clone()).collect();
                        let coeffs: Vec<T> = perm.iter().map(|&j| m.coeffs[j]).collect();
                        ParamPoint::Mixture(MixtureParams { weights, coeffs }).flatten()
                    }
                    other => other.flatten(),
                })
                .collect(),
            _ => self.samples.iter().map(ParamPoint::flatten).collect(),
        };
        let mut acc = vec![T::zero(); aligned[0].len()];
        for v in &aligned {
            for (a, &x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        let mean: Vec<T> = acc.into_iter().map(|a| a / n).collect();
        self.space().unflatten(&mean)
    }

    /// The sample of highest log posterior; the lowest index wins ties.
    pub fn mle_estimate(&self) -> Result<ParamPoint<T>> {
        if self.samples.is_empty() {
            return Err(BeliefError::Empty);
        }
        let mut best = 0;
        for (i, &lp) in self.log_posts.iter().enumerate() {
            if lp > self.log_posts[best] {
                best = i;
            }
        }
        Ok(self.samples[best].clone())
    }

    /// Reward vectors of a unimodal belief.
    pub fn omegas(&self) -> Vec<Vec<T>> {
        self.samples.iter().filter_map(|p| p.omega().map(<[T]>::to_vec)).collect()
    }

    pub fn snapshot(&self) -> BeliefSnapshot<T> {
        BeliefSnapshot {
            space: self.space(),
            seed: self.seed,
            version: self.version,
            dataset_digest: self.posterior.dataset.digest(),
            samples: self.samples.iter().map(ParamPoint::flatten).collect(),
        }
    }
}

/// Serializable sample matrix of a belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct BeliefSnapshot<T> {
    pub space: ParamSpace,
    pub seed: u64,
    pub version: u64,
    pub dataset_digest: String,
    pub samples: Vec<Vec<T>>,
}

impl<T: Real> BeliefSnapshot<T> {
    pub fn points(&self) -> Result<Vec<ParamPoint<T>>> {
        self.samples.iter().map(|s| self.space.unflatten(s)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// A posterior plus lazily refreshed samples. Updates append data and bump
/// the version; samples are redrawn only when requested for a newer version.
#[derive(Debug, Clone)]
pub struct BeliefState<T> {
    posterior: Posterior<T>,
    version: u64,
    mh: MHConfig,
    cached: Option<SampleBelief<T>>,
}

impl<T: Real> BeliefState<T> {
    pub fn new(posterior: Posterior<T>, mh: MHConfig) -> Result<Self> {
        mh.validate()?;
        Ok(BeliefState { posterior, version: 0, mh, cached: None })
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn posterior(&self) -> &Posterior<T> {
        &self.posterior
    }

    pub fn update(&mut self, q: Query<T>, r: Response<T>) -> Result<()> {
        self.posterior.push(q, r)?;
        self.version += 1;
        Ok(())
    }

    /// Samples for the current version. The chain seed is offset by the
    /// version so successive refreshes are independent but reproducible.
    pub fn samples(&mut self) -> Result<&SampleBelief<T>> {
        let stale = self.cached.as_ref().is_none_or(|c| c.version != self.version);
        if stale {
            let mut mh = self.mh.clone();
            mh.seed = mh.seed.wrapping_add(self.version.wrapping_mul(1_000_003));
            self.cached = Some(sample_posterior(self.posterior.clone(), &mh, self.version)?);
        }
        Ok(self.cached.as_ref().expect("just filled"))
    }
}
