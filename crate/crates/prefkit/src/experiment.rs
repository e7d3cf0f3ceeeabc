//! Simulated elicitation runs producing metric tables.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::acquisition::{
    candidate_pairs, ranking_mi_select, select_query, AcqError, AcquisitionKind, CostModel, SAConfig,
};
use crate::batch::{generate_batch, BatchConfig, BatchError, BatchMethod};
use crate::belief::{BeliefError, BeliefState, MHConfig, ModelContext, ParamPoint, ParamSpace, Posterior};
use crate::domain::{Dataset, DomainError, ItemId, Query, QueryPool};
use crate::likelihood::RationalityConfig;
use crate::metrics::{alignment, mse_hungarian, mse_unimodal, MetricReport};
use crate::simenv::{gen_pool, synth_reward, LDSSpec, NoiseMode, SimUser};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("cannot read pool {path}: {msg}")]
    Pool { path: String, msg: String },
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Acq(#[from] AcqError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    /// Fresh LDS pool per seed.
    Lds { dim: usize, pool_size: usize },
    /// Pool file shared by all seeds.
    PoolFile { path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QueryKindSpec {
    Pair,
    Choice { size: usize },
    Weak,
    Scale { step: f64 },
    Ranking { size: usize },
}

impl QueryKindSpec {
    /// Items per query.
    pub fn size(self) -> usize {
        match self {
            QueryKindSpec::Choice { size } | QueryKindSpec::Ranking { size } => size,
            _ => 2,
        }
    }

    pub fn build(self, items: Vec<ItemId>) -> Query<f64> {
        match self {
            QueryKindSpec::Pair | QueryKindSpec::Choice { .. } => Query::Choice { items },
            QueryKindSpec::Weak => Query::WeakChoice { items: [items[0], items[1]] },
            QueryKindSpec::Scale { step } => Query::Scale { items: [items[0], items[1]], step },
            QueryKindSpec::Ranking { .. } => Query::Ranking { items },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceSpec {
    Linear,
    OmegaAlpha,
    OmegaDelta,
    Mixture { modes: usize },
}

impl SpaceSpec {
    pub fn space(self, dim: usize) -> ParamSpace {
        match self {
            SpaceSpec::Linear => ParamSpace::linear(dim),
            SpaceSpec::OmegaAlpha => ParamSpace::omega_alpha(dim),
            SpaceSpec::OmegaDelta => ParamSpace::omega_delta(dim),
            SpaceSpec::Mixture { modes } => ParamSpace::mixture(dim, modes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub query_kind: QueryKindSpec,
    pub acquisition: AcquisitionKind,
    #[serde(default)]
    pub batch: Option<BatchConfig>,
    pub mh: MHConfig,
    pub noise: NoiseMode,
    pub n_queries: usize,
    pub n_seeds: usize,
    pub seed: u64,
    #[serde(default)]
    pub cost: CostModel<f64>,
    #[serde(default)]
    pub rationality: RationalityConfig<f64>,
    pub truth_space: SpaceSpec,
    pub learner_space: SpaceSpec,
    /// Size of the fixed per-seed candidate query set.
    pub n_candidates: usize,
    #[serde(default)]
    pub sa: SAConfig,
    /// Parallel seeds; 0 uses the rayon default.
    #[serde(default)]
    pub workers: usize,
}

impl ExperimentConfig {
    /// Pairwise comparisons in a `dim`-dimensional LDS, linear truth and learner.
    pub fn lds(dim: usize, acquisition: AcquisitionKind) -> Self {
        ExperimentConfig {
            env: EnvSpec::Lds { dim, pool_size: 1000 },
            query_kind: QueryKindSpec::Pair,
            acquisition,
            batch: None,
            mh: MHConfig::multi_chain(0),
            noise: NoiseMode::ModelNoisy,
            n_queries: 20,
            n_seeds: 1,
            seed: 0,
            cost: CostModel::Zero,
            rationality: RationalityConfig::default(),
            truth_space: SpaceSpec::Linear,
            learner_space: SpaceSpec::Linear,
            n_candidates: 1000,
            sa: SAConfig::default(),
            workers: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        match self.env {
            EnvSpec::Lds { dim, pool_size } if dim == 0 || pool_size < 2 => {
                return bad("lds needs dim ≥ 1 and at least 2 trajectories".into())
            }
            _ => {}
        }
        if self.n_seeds == 0 {
            return bad("n_seeds must be positive".into());
        }
        if self.n_candidates == 0 {
            return bad("n_candidates must be positive".into());
        }
        self.mh.validate()?;
        self.rationality.validate().map_err(ExperimentError::Config)?;
        let size = self.query_kind.size();
        if size < 2 {
            return bad("queries need at least 2 items".into());
        }
        let ranking = matches!(self.query_kind, QueryKindSpec::Ranking { .. });
        if let QueryKindSpec::Scale { step } = self.query_kind {
            if crate::domain::grid_half_width(step).is_none() {
                return bad(format!("slider step {step} must lie in (0,1] and divide 1"));
            }
        }
        let mix = |s: SpaceSpec| matches!(s, SpaceSpec::Mixture { .. });
        if (mix(self.truth_space) || mix(self.learner_space))
            && !matches!(self.query_kind, QueryKindSpec::Pair | QueryKindSpec::Choice { .. } | QueryKindSpec::Ranking { .. })
        {
            return bad("mixture spaces answer only choice and ranking queries".into());
        }
        if matches!(self.learner_space, SpaceSpec::Mixture { modes } if modes < 2)
            || matches!(self.truth_space, SpaceSpec::Mixture { modes } if modes < 2)
        {
            return bad("mixtures need at least 2 modes".into());
        }
        match self.acquisition {
            AcquisitionKind::MutualInformation | AcquisitionKind::Random => {}
            AcquisitionKind::MaxRegret
                if !ranking && !mix(self.learner_space) && size == 2 => {}
            AcquisitionKind::VolumeRemoval | AcquisitionKind::WorstCaseVolumeRemoval if !ranking => {}
            k => return bad(format!("{k:?} acquisition does not fit {:?} queries", self.query_kind)),
        }
        if ranking && self.acquisition == AcquisitionKind::MutualInformation && !self.cost.is_zero() {
            return bad("ranking selection has no cost model".into());
        }
        if let Some(b) = &self.batch {
            if !matches!(self.query_kind, QueryKindSpec::Pair) || mix(self.learner_space) {
                return bad("batches need pairwise queries and a unimodal learner".into());
            }
            b.validate(self.n_candidates)?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    fn pool(&self, seed: u64) -> Result<Arc<QueryPool<f64>>> {
        Ok(Arc::new(match &self.env {
            EnvSpec::Lds { dim, pool_size } => gen_pool(LDSSpec { dim: *dim }, *pool_size, seed ^ 0x9001)?,
            EnvSpec::PoolFile { path } => load_pool(path)?,
        }))
    }
}

pub fn load_pool(path: &str) -> Result<QueryPool<f64>> {
    let err = |msg: String| ExperimentError::Pool { path: path.to_string(), msg };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    QueryPool::from_json(&text).map_err(|e| err(e.to_string()))
}

fn seed_of(cfg: &ExperimentConfig, i: usize) -> u64 {
    cfg.seed.wrapping_add(i as u64)
}

/// Fixed candidate set of a seed.
pub fn candidates(cfg: &ExperimentConfig, pool: &QueryPool<f64>, seed: u64) -> Vec<Query<f64>> {
    candidate_queries(cfg.query_kind, pool, cfg.n_candidates, seed)
}

/// `n` seeded candidate queries of one kind: distinct pairs for two-item
/// kinds, random item subsets otherwise.
pub fn candidate_queries(kind: QueryKindSpec, pool: &QueryPool<f64>, n: usize, seed: u64) -> Vec<Query<f64>> {
    let size = kind.size();
    if size == 2 {
        return candidate_pairs(pool, n, seed ^ 0xCA4D).into_iter().map(|p| kind.build(p.to_vec())).collect();
    }
    let ids: Vec<ItemId> = pool.ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xCA4D);
    (0..n).map(|_| kind.build(ids.choose_multiple(&mut rng, size).copied().collect())).collect()
}

struct Run {
    ctx: ModelContext<f64>,
    truth: ParamPoint<f64>,
    user: SimUser<f64>,
    belief: BeliefState<f64>,
    cands: Vec<Query<f64>>,
}

fn setup(cfg: &ExperimentConfig, seed: u64) -> Result<Run> {
    let pool = cfg.pool(seed)?;
    let dim = pool.dim();
    let ctx = ModelContext::new(pool.clone(), cfg.rationality.clone());
    let truth = synth_reward(&cfg.truth_space.space(dim), seed ^ 0x7207);
    let user = SimUser::new(truth.clone(), cfg.noise, ctx.clone(), seed ^ 0x05E2);
    let posterior = Posterior::new(cfg.learner_space.space(dim), ctx.clone(), Dataset::new())?;
    let mut mh = cfg.mh.clone();
    mh.seed = mh.seed.wrapping_add(seed.wrapping_mul(0x9E37_79B9));
    let belief = BeliefState::new(posterior, mh)?;
    let cands = candidates(cfg, &pool, seed);
    Ok(Run { ctx, truth, user, belief, cands })
}

fn record_metrics(report: &mut MetricReport, run: &mut Run, it: usize, seed: u64, prefix: &str) -> Result<()> {
    let s = run.belief.samples()?;
    let name = |m: &str| if prefix.is_empty() { m.to_string() } else { format!("{m}/{prefix}") };
    match &run.truth {
        ParamPoint::Mixture(truth) => {
            let mse = |p: ParamPoint<f64>| match p {
                ParamPoint::Mixture(est) => mse_hungarian(truth, &est).ok(),
                p => p.omega().and_then(|w| mse_unimodal(truth, w).ok()),
            };
            // the reported error uses the sample-restricted MLE
            report.record(it, seed, &name("mse"), mse(s.mle_estimate()?));
            report.record(it, seed, &name("mse_mean"), mse(s.mean_estimate()?));
        }
        t => {
            if let Some(w) = t.omega() {
                let v = alignment(w, &s.omegas()).ok();
                report.record(it, seed, &name("alignment"), v);
            }
        }
    }
    Ok(())
}

fn run_seed(cfg: &ExperimentConfig, idx: usize) -> Result<MetricReport> {
    let seed = seed_of(cfg, idx);
    let mut report = MetricReport::new(cfg.digest());
    report.seeds.push(seed);
    let mut run = setup(cfg, seed)?;
    record_metrics(&mut report, &mut run, 0, seed, "")?;
    let mut asked = 0;
    while asked < cfg.n_queries {
        let sel_seed = seed.wrapping_mul(31).wrapping_add(asked as u64);
        let samples = run.belief.samples()?.samples.clone();
        if let Some(b) = &cfg.batch {
            let mut bc = b.clone();
            bc.seed = bc.seed.wrapping_add(sel_seed);
            bc.k = bc.k.min(cfg.n_queries - asked).min(bc.reduced_size);
            let batch = generate_batch(&run.ctx, &samples, &run.cands, &bc)?;
            for q in batch.queries {
                let r = run.user.respond(&q)?;
                run.belief.update(q, r)?;
                asked += 1;
            }
            record_metrics(&mut report, &mut run, asked, seed, "")?;
            continue;
        }
        let query = match (cfg.query_kind, cfg.acquisition) {
            (QueryKindSpec::Ranking { size }, AcquisitionKind::MutualInformation) => {
                let mut sa = cfg.sa.clone();
                sa.seed = sa.seed.wrapping_add(sel_seed);
                let sel = ranking_mi_select(&run.ctx, &samples, size, &sa)?;
                report.record(asked + 1, seed, "score", Some(-sel.objective));
                Query::Ranking { items: sel.items }
            }
            _ => {
                let sel = select_query(&run.ctx, &samples, &run.cands, cfg.acquisition, &cfg.cost, sel_seed)?;
                report.record(asked + 1, seed, "score", Some(sel.score));
                if sel.stop {
                    report.record(asked + 1, seed, "stop", Some(1.0));
                    break;
                }
                sel.query
            }
        };
        let r = run.user.respond(&query)?;
        run.belief.update(query, r)?;
        asked += 1;
        record_metrics(&mut report, &mut run, asked, seed, "")?;
    }
    Ok(report)
}

fn for_seeds<F>(cfg: &ExperimentConfig, f: F) -> Result<MetricReport>
where
    F: Fn(usize) -> Result<MetricReport> + Sync + Send,
{
    let run_all = || (0..cfg.n_seeds).into_par_iter().map(&f).collect::<Vec<_>>();
    let parts = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| ExperimentError::Config(e.to_string()))?
            .install(run_all)
    } else {
        run_all()
    };
    let mut report = MetricReport::new(cfg.digest());
    for p in parts {
        report.extend(p?);
    }
    Ok(report)
}

/// Runs every seed of `cfg`; the report is a pure function of the config.
pub fn run_simulation(cfg: &ExperimentConfig) -> Result<MetricReport> {
    cfg.validate()?;
    for_seeds(cfg, |i| run_seed(cfg, i))
}

fn method_name(m: Option<BatchMethod>) -> &'static str {
    match m {
        None => "sequential",
        Some(BatchMethod::Greedy) => "greedy",
        Some(BatchMethod::Medoids) => "medoids",
        Some(BatchMethod::BoundaryMedoids) => "boundary_medoids",
        Some(BatchMethod::SuccessiveElimination) => "successive_elimination",
        Some(BatchMethod::DppMode) => "dpp_mode",
    }
}

/// Same truth, pool and candidates for every method of a seed. `None` is
/// the one-at-a-time worst-case volume removal baseline. Records
/// `alignment/<method>` after every batch and `seconds_per_query/<method>`.
pub fn run_batch_comparison(cfg: &ExperimentConfig, methods: &[Option<BatchMethod>]) -> Result<MetricReport> {
    cfg.validate()?;
    let base = cfg.batch.clone().ok_or_else(|| ExperimentError::Config("batch comparison needs a batch config".into()))?;
    for_seeds(cfg, |i| {
        let seed = seed_of(cfg, i);
        let mut report = MetricReport::new(cfg.digest());
        report.seeds.push(seed);
        for &m in methods {
            let name = method_name(m);
            let mut run = setup(cfg, seed)?;
            record_metrics(&mut report, &mut run, 0, seed, name)?;
            let mut asked = 0;
            let mut select_time = 0.0;
            while asked < cfg.n_queries {
                let samples = run.belief.samples()?.samples.clone();
                let t0 = Instant::now();
                let queries = match m {
                    Some(method) => {
                        let mut bc = base.clone();
                        bc.method = method;
                        bc.seed = bc.seed.wrapping_add(seed.wrapping_mul(31).wrapping_add(asked as u64));
                        bc.k = bc.k.min(cfg.n_queries - asked);
                        generate_batch(&run.ctx, &samples, &run.cands, &bc)?.queries
                    }
                    None => {
                        let kind = AcquisitionKind::WorstCaseVolumeRemoval;
                        vec![select_query(&run.ctx, &samples, &run.cands, kind, &CostModel::Zero, seed)?.query]
                    }
                };
                select_time += t0.elapsed().as_secs_f64();
                for q in queries {
                    let r = run.user.respond(&q)?;
                    run.belief.update(q, r)?;
                    asked += 1;
                }
                record_metrics(&mut report, &mut run, asked, seed, name)?;
            }
            let per = if asked > 0 { Some(select_time / asked as f64) } else { None };
            report.record(asked, seed, &format!("seconds_per_query/{name}"), per);
        }
        Ok(report)
    })
}
