//! Synthetic environments: the linear dynamical system pool, random true
//! rewards, Poisson-disk test sets and simulated users.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{BeliefError, ModelContext, ParamPoint, ParamSpace};
use crate::domain::{grid_half_width, DomainError, ItemId, Query, QueryPool, Response, TrajectoryRecord};
use crate::scalar::{dot, norm, Real};

type Result<T> = std::result::Result<T, BeliefError>;

/// Linear dynamical system whose controls are the features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LDSSpec {
    pub dim: usize,
}

/// `n` trajectories with features uniform on `[−1,1]^d`, ids `0..n`.
pub fn gen_pool<T: Real>(spec: LDSSpec, n: usize, seed: u64) -> std::result::Result<QueryPool<T>, DomainError> {
    if n == 0 {
        return Err(DomainError::EmptyPool);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let recs = (0..n)
        .map(|i| {
            let f: Vec<T> = (0..spec.dim).map(|_| T::of(rng.random_range(-1.0..=1.0))).collect();
            // display path: origin to the first two control coordinates
            let end = [f.first().copied().unwrap_or(T::zero()), f.get(1).copied().unwrap_or(T::zero())];
            let mut rec = TrajectoryRecord::new(i as ItemId, f);
            rec.render = Some(vec![[T::zero(), T::zero()], end]);
            rec
        })
        .collect();
    QueryPool::new(spec.dim, recs)
}

/// A random true parameter. Unimodal and dynamics weights lie on the unit
/// sphere; other coordinates come from the prior.
pub fn synth_reward<T: Real>(space: &ParamSpace, seed: u64) -> ParamPoint<T> {
    let p: ParamPoint<f64> = space.prior_sample(1, seed).pop().expect("one draw");
    let unit = |w: Vec<f64>| {
        let n = norm(&w);
        w.into_iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let p = match p {
        ParamPoint::Linear { omega } => ParamPoint::Linear { omega: unit(omega) },
        ParamPoint::OmegaAlpha { omega, alpha } => ParamPoint::OmegaAlpha { omega: unit(omega), alpha },
        ParamPoint::OmegaDelta { omega, delta } => ParamPoint::OmegaDelta { omega: unit(omega), delta },
        ParamPoint::Dynamics(mut d) => {
            d.w = d.w.into_iter().map(unit).collect();
            ParamPoint::Dynamics(d)
        }
        m @ ParamPoint::Mixture(_) => m,
    };
    p.cast()
}

/// Dart throwing over a seeded permutation of the pool. Returns ids.
pub fn poisson_disk_subset<T: Real>(pool: &QueryPool<T>, min_dist: f64, seed: u64) -> Vec<ItemId> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let md2 = min_dist * min_dist;
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let fi = pool.features_at(i);
        let ok = kept.iter().all(|&j| {
            let d2: f64 = fi.iter().zip(pool.features_at(j)).map(|(a, b)| (a.f64() - b.f64()).powi(2)).sum();
            d2 >= md2
        });
        if ok {
            kept.push(i);
        }
    }
    let ids: Vec<ItemId> = pool.ids().collect();
    kept.into_iter().map(|i| ids[i]).collect()
}

/// Bisects `min_dist` for a subset of roughly `count` points.
pub fn poisson_disk_count<T: Real>(pool: &QueryPool<T>, count: usize, seed: u64) -> Vec<ItemId> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while poisson_disk_subset(pool, hi, seed).len() > count && hi < 1e6 {
        hi *= 2.0;
    }
    let mut best = poisson_disk_subset(pool, lo, seed);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let s = poisson_disk_subset(pool, mid, seed);
        if s.len() >= count {
            lo = mid;
            best = s;
        } else {
            hi = mid;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Always the most likely answer.
    Oracle,
    /// Samples the likelihood.
    ModelNoisy,
}

/// A simulated respondent with a fixed true parameter.
#[derive(Debug, Clone)]
pub struct SimUser<T> {
    pub truth: ParamPoint<T>,
    pub noise: NoiseMode,
    pub ctx: ModelContext<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> SimUser<T> {
    pub fn new(truth: ParamPoint<T>, noise: NoiseMode, ctx: ModelContext<T>, seed: u64) -> Self {
        SimUser { truth, noise, ctx, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn respond(&mut self, q: &Query<T>) -> Result<Response<T>> {
        crate::domain::validate(q, &self.ctx.pool)?;
        let table = self.ctx.outcome_table(&self.truth, q)?;
        let idx = match self.noise {
            NoiseMode::ModelNoisy => sample_index(&table, self.rng.random::<f64>()),
            NoiseMode::Oracle => return self.oracle(q, &table),
        };
        self.ctx.outcome_response(q, idx)
    }

    fn oracle(&self, q: &Query<T>, table: &[T]) -> Result<Response<T>> {
        let pool = &self.ctx.pool;
        match (q, &self.truth) {
            (Query::WeakChoice { items }, p) => {
                let w = p.omega().expect("weak queries need a unimodal point");
                let r0 = dot(w, pool.features(items[0])?);
                let r1 = dot(w, pool.features(items[1])?);
                let delta = match p {
                    ParamPoint::OmegaDelta { delta, .. } => *delta,
                    _ => self.ctx.cfg.delta_min,
                };
                Ok(if (r0 - r1).abs() < delta {
                    Response::AboutEqual
                } else {
                    Response::Chosen { item: if r0 >= r1 { items[0] } else { items[1] } }
                })
            }
            (Query::Scale { items, step }, p) => {
                let w = p.omega().expect("scale queries need a unimodal point");
                let r0 = dot(w, pool.features(items[0])?);
                let r1 = dot(w, pool.features(items[1])?);
                let alpha = match p {
                    ParamPoint::OmegaAlpha { alpha, .. } => *alpha,
                    _ => T::one(),
                };
                let ybar = crate::likelihood::scale_noiseless(r0, r1, alpha, self.ctx.gap_for(p)?)?;
                let half = grid_half_width(*step).ok_or(DomainError::BadStep(step.f64()))? as f64;
                let n = (ybar.f64() / step.f64()).round().clamp(-half, half);
                Ok(Response::ScaleValue { value: T::of(n * step.f64()) })
            }
            _ => self.ctx.outcome_response(q, argmax_first(table)),
        }
    }
}

fn argmax_first<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a probability table with uniform `u`.
pub fn sample_index<T: Real>(table: &[T], u: f64) -> usize {
    let total: f64 = table.iter().map(|p| p.f64()).sum();
    let mut acc = 0.0;
    let target = u * total;
    for (i, p) in table.iter().enumerate() {
        acc += p.f64();
        if target < acc {
            return i;
        }
    }
    table.iter().rposition(|p| p.f64() > 0.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::likelihood::RationalityConfig;

    #[test]
    fn pool_is_seeded_and_in_range() {
        let a: QueryPool<f64> = gen_pool(LDSSpec { dim: 3 }, 50, 7).unwrap();
        let b: QueryPool<f64> = gen_pool(LDSSpec { dim: 3 }, 50, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.trajectories().iter().all(|t| t.features.0.iter().all(|x| x.abs() <= 1.0)));
    }

    #[test]
    fn synth_is_unit() {
        let p: ParamPoint<f64> = synth_reward(&ParamSpace::linear(4), 3);
        assert!((norm(p.omega().unwrap()) - 1.0).abs() < 1e-12);
        let q: ParamPoint<f64> = synth_reward(&ParamSpace::linear(4), 4);
        assert_ne!(p, q);
    }

    #[test]
    fn oracle_answers() {
        let pool = Arc::new(QueryPool::from_features(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap());
        let ctx = ModelContext::new(pool, RationalityConfig::default());
        let mut u = SimUser::new(ParamPoint::Linear { omega: vec![1.0, 0.0] }, NoiseMode::Oracle, ctx, 0);
        assert_eq!(u.respond(&Query::pair(0, 1)).unwrap(), Response::Chosen { item: 0 });
        let s = u.respond(&Query::Scale { items: [0, 1], step: 0.25 }).unwrap();
        assert_eq!(s, Response::ScaleValue { value: 1.0 });
        let s = u.respond(&Query::Scale { items: [1, 0], step: 0.25 }).unwrap();
        assert_eq!(s, Response::ScaleValue { value: -1.0 });
    }

    #[test]
    fn disk_extremes() {
        let pool: QueryPool<f64> = gen_pool(LDSSpec { dim: 2 }, 40, 1).unwrap();
        assert_eq!(poisson_disk_subset(&pool, 0.0, 2).len(), 40);
        assert_eq!(poisson_disk_subset(&pool, 10.0, 2).len(), 1);
    }
}
