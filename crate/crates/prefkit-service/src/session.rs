//! Session state machine behind the HTTP layer. Everything here is
//! synchronous; the server wraps each session in a mutex.

use std::sync::Arc;

use prefkit::acquisition::{ranking_mi_select, select_query, AcquisitionKind, CostModel, SAConfig};
use prefkit::belief::{BeliefError, BeliefState, MHConfig, ModelContext, ParamPoint, Posterior};
use prefkit::domain::{validate, validate_response, Dataset, DomainError, ItemId, Query, QueryPool, Response};
use prefkit::experiment::{candidate_queries, load_pool, QueryKindSpec, SpaceSpec};
use prefkit::likelihood::RationalityConfig;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ApiError;

fn default_space() -> SpaceSpec {
    SpaceSpec::Linear
}

fn default_kind() -> QueryKindSpec {
    QueryKindSpec::Pair
}

fn default_acq() -> AcquisitionKind {
    AcquisitionKind::MutualInformation
}

fn default_mh() -> MHConfig {
    MHConfig::multi_chain(0)
}

fn default_candidates() -> usize {
    2000
}

/// Body of `POST /sessions`. Exactly one of `pool` and `pool_path` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<QueryPool<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_path: Option<String>,
    #[serde(default = "default_space")]
    pub space: SpaceSpec,
    #[serde(default = "default_kind")]
    pub query_kind: QueryKindSpec,
    #[serde(default = "default_acq")]
    pub acquisition: AcquisitionKind,
    #[serde(default)]
    pub cost: CostModel<f64>,
    #[serde(default)]
    pub rationality: RationalityConfig<f64>,
    #[serde(default = "default_mh")]
    pub mh: MHConfig,
    #[serde(default)]
    pub sa: SAConfig,
    #[serde(default = "default_candidates")]
    pub n_candidates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Feature vectors of demonstrated trajectories.
    #[serde(default)]
    pub demonstrations: Vec<Vec<f64>>,
}

impl SessionConfig {
    /// A pairwise MI session over an inline pool.
    pub fn with_pool(pool: QueryPool<f64>) -> Self {
        SessionConfig {
            pool: Some(pool),
            pool_path: None,
            space: default_space(),
            query_kind: default_kind(),
            acquisition: default_acq(),
            cost: CostModel::Zero,
            rationality: RationalityConfig::default(),
            mh: default_mh(),
            sa: SAConfig::default(),
            n_candidates: default_candidates(),
            seed: 0,
            demonstrations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub id: ItemId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub query_id: u64,
    pub version: u64,
    pub query: Query<f64>,
    pub items: Vec<ItemView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextQuery {
    Query(QueryView),
    Stopped { version: u64, estimate: Estimate },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub version: u64,
    pub n_samples: usize,
    pub mean: ParamPoint<f64>,
    pub mle: ParamPoint<f64>,
    /// Score minus cost of each selected query, in order.
    pub scores: Vec<f64>,
    pub stop_recommended: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub version: u64,
    pub stop_recommended: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub query_id: u64,
    pub query: Query<f64>,
    pub response: Response<f64>,
    /// Belief version after this answer.
    pub version: u64,
}

/// Everything needed to rebuild the belief offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub session_id: String,
    pub version: u64,
    pub config: SessionConfig,
    pub entries: Vec<HistoryEntry>,
}

#[derive(Debug, Clone)]
struct Pending {
    id: u64,
    view: QueryView,
}

pub struct Session {
    id: String,
    config: SessionConfig,
    ctx: ModelContext<f64>,
    belief: BeliefState<f64>,
    candidates: Vec<Query<f64>>,
    pending: Option<Pending>,
    next_qid: u64,
    stopped: bool,
    scores: Vec<f64>,
    entries: Vec<HistoryEntry>,
}

fn belief_err(e: BeliefError) -> ApiError {
    match e {
        BeliefError::Domain(d) => domain_err(d),
        BeliefError::Config(_) | BeliefError::Unsupported { .. } => ApiError::validation(e.to_string(), Value::Null),
        e => ApiError::internal(e.to_string()),
    }
}

fn domain_err(e: DomainError) -> ApiError {
    let detail = match &e {
        DomainError::OffGrid { value, step } => json!({ "field": "response.value", "value": value, "epsilon": step }),
        DomainError::BadStep(step) => json!({ "field": "query_kind.step", "epsilon": step }),
        DomainError::UnknownId(id) => json!({ "item": id }),
        DomainError::NotInQuery(id) => json!({ "item": id }),
        _ => Value::Null,
    };
    let msg = match &e {
        DomainError::OffGrid { value, step } => format!("slider value {value} is not a multiple of ε = {step} in [-1, 1]"),
        e => e.to_string(),
    };
    ApiError::validation(msg, detail)
}

/// Builds the posterior a session starts from; shared with offline replay.
pub fn prior_belief(cfg: &SessionConfig, pool: Arc<QueryPool<f64>>) -> Result<(ModelContext<f64>, BeliefState<f64>), ApiError> {
    let ctx = ModelContext::new(pool.clone(), cfg.rationality.clone());
    if let Some(bad) = cfg.demonstrations.iter().find(|d| d.len() != pool.dim()) {
        return Err(ApiError::validation(
            format!("demonstration has {} features, pool dimension is {}", bad.len(), pool.dim()),
            json!({ "field": "demonstrations" }),
        ));
    }
    let data = Dataset::with_demonstrations(cfg.demonstrations.clone());
    let post = Posterior::new(cfg.space.space(pool.dim()), ctx.clone(), data).map_err(belief_err)?;
    let belief = BeliefState::new(post, cfg.mh.clone()).map_err(belief_err)?;
    Ok((ctx, belief))
}

/// Replays a history through the library, returning the resulting belief.
pub fn replay(history: &History) -> Result<BeliefState<f64>, ApiError> {
    let pool = resolve_pool(&history.config)?;
    let (_, mut belief) = prior_belief(&history.config, Arc::new(pool))?;
    for e in &history.entries {
        belief.update(e.query.clone(), e.response.clone()).map_err(belief_err)?;
    }
    Ok(belief)
}

fn resolve_pool(cfg: &SessionConfig) -> Result<QueryPool<f64>, ApiError> {
    match (&cfg.pool, &cfg.pool_path) {
        (Some(p), None) => Ok(p.clone()),
        (None, Some(path)) => load_pool(path).map_err(|e| ApiError::validation(e.to_string(), json!({ "field": "pool_path" }))),
        (None, None) => Err(ApiError::validation("a pool is required", json!({ "field": "pool" }))),
        (Some(_), Some(_)) => Err(ApiError::validation("give either pool or pool_path, not both", json!({ "field": "pool" }))),
    }
}

impl Session {
    pub fn new(id: String, mut config: SessionConfig) -> Result<Self, ApiError> {
        let pool = resolve_pool(&config)?;
        // keep the pool inline so the history is self-contained
        config.pool = Some(pool.clone());
        config.pool_path = None;
        let pool = Arc::new(pool);
        let size = config.query_kind.size();
        if size < 2 || size > pool.len() {
            return Err(ApiError::validation(
                format!("queries of {size} items need a pool of at least that many"),
                json!({ "field": "query_kind" }),
            ));
        }
        if let QueryKindSpec::Scale { step } = config.query_kind {
            if prefkit::domain::grid_half_width(step).is_none() {
                return Err(domain_err(DomainError::BadStep(step)));
            }
        }
        if config.n_candidates == 0 {
            return Err(ApiError::validation("n_candidates must be positive", json!({ "field": "n_candidates" })));
        }
        let (ctx, belief) = prior_belief(&config, pool.clone())?;
        let candidates = candidate_queries(config.query_kind, &pool, config.n_candidates, config.seed);
        if let Some(q) = candidates.first() {
            if !ModelContext::supports(&belief.posterior().space, q) {
                return Err(ApiError::validation(
                    format!("{} queries are not supported by the {} space", q.kind_name(), belief.posterior().space.name()),
                    json!({ "field": "query_kind" }),
                ));
            }
        }
        Ok(Session { id, config, ctx, belief, candidates, pending: None, next_qid: 1, stopped: false, scores: Vec::new(), entries: Vec::new() })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn version(&self) -> u64 {
        self.belief.version()
    }

    pub fn interactions(&self) -> usize {
        self.entries.len()
    }

    fn view(&self, id: u64, query: Query<f64>, score: f64) -> Result<QueryView, ApiError> {
        let pool = &self.ctx.pool;
        let items = query
            .item_ids()
            .into_iter()
            .map(|i| {
                let r = pool.get(i).map_err(domain_err)?;
                Ok(ItemView { id: i, render: r.render.clone(), label: r.label.clone() })
            })
            .collect::<Result<Vec<_>, ApiError>>()?;
        let step = match &query {
            Query::Scale { step, .. } => Some(*step),
            _ => None,
        };
        Ok(QueryView { query_id: id, version: self.version(), query, items, step, score })
    }

    /// The pending query, selecting a new one against the current belief if
    /// none is outstanding.
    pub fn next_query(&mut self) -> Result<NextQuery, ApiError> {
        if self.stopped {
            return Ok(NextQuery::Stopped { version: self.version(), estimate: self.estimate()? });
        }
        if let Some(p) = &self.pending {
            return Ok(NextQuery::Query(p.view.clone()));
        }
        let samples = self.belief.samples().map_err(belief_err)?.samples.clone();
        let sel_seed = self.config.seed.wrapping_mul(31).wrapping_add(self.entries.len() as u64);
        let (query, score) = match (self.config.query_kind, self.config.acquisition) {
            (QueryKindSpec::Ranking { size }, AcquisitionKind::MutualInformation) => {
                let mut sa = self.config.sa.clone();
                sa.seed = sa.seed.wrapping_add(sel_seed);
                let sel = ranking_mi_select(&self.ctx, &samples, size, &sa).map_err(|e| ApiError::internal(e.to_string()))?;
                (Query::Ranking { items: sel.items }, -sel.objective)
            }
            _ => {
                let sel = select_query(&self.ctx, &samples, &self.candidates, self.config.acquisition, &self.config.cost, sel_seed)
                    .map_err(|e| ApiError::internal(e.to_string()))?;
                if sel.stop {
                    self.stopped = true;
                    self.scores.push(sel.score);
                    return Ok(NextQuery::Stopped { version: self.version(), estimate: self.estimate()? });
                }
                (sel.query, sel.score)
            }
        };
        self.scores.push(score);
        let id = self.next_qid;
        self.next_qid += 1;
        let view = self.view(id, query, score)?;
        self.pending = Some(Pending { id, view: view.clone() });
        Ok(NextQuery::Query(view))
    }

    /// Applies the answer to the pending query. Any other id is a conflict
    /// and leaves the session untouched.
    pub fn respond(&mut self, query_id: u64, response: Response<f64>) -> Result<Ack, ApiError> {
        let query = match &self.pending {
            Some(p) if p.id == query_id => p.view.query.clone(),
            p => {
                return Err(ApiError::conflict(
                    format!("query {query_id} is not pending"),
                    json!({ "query_id": query_id, "pending": p.as_ref().map(|p| p.id) }),
                ))
            }
        };
        validate(&query, &self.ctx.pool).map_err(domain_err)?;
        validate_response(&query, &response).map_err(domain_err)?;
        self.belief.update(query.clone(), response.clone()).map_err(belief_err)?;
        self.pending = None;
        self.entries.push(HistoryEntry { query_id, query, response, version: self.version() });
        Ok(Ack { version: self.version(), stop_recommended: self.stopped })
    }

    pub fn estimate(&mut self) -> Result<Estimate, ApiError> {
        let version = self.version();
        let s = self.belief.samples().map_err(belief_err)?;
        Ok(Estimate {
            version,
            n_samples: s.samples.len(),
            mean: s.mean_estimate().map_err(belief_err)?,
            mle: s.mle_estimate().map_err(belief_err)?,
            scores: self.scores.clone(),
            stop_recommended: self.stopped,
        })
    }

    pub fn history(&self) -> History {
        History { session_id: self.id.clone(), version: self.version(), config: self.config.clone(), entries: self.entries.clone() }
    }
}
