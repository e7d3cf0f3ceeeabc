//! Trajectories, queries, responses and datasets.
//!
//! A trajectory is only ever seen through its feature embedding `ψ(τ)` plus an
//! optional screen-space render path. Queries reference pool items by id.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Pool-local trajectory identifier.
pub type ItemId = u64;

/// Tolerance used when checking that a slider value sits on its grid.
const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("unknown item id {0}")]
    UnknownId(ItemId),
    #[error("duplicate item id {0} in pool")]
    DuplicateId(ItemId),
    #[error("pool is empty")]
    EmptyPool,
    #[error("item {id} has {got} features, pool dimension is {dim}")]
    DimMismatch { id: ItemId, got: usize, dim: usize },
    #[error("item {0} has a non-finite feature")]
    NonFinite(ItemId),
    #[error("item {0} render path needs at least 2 points")]
    ShortRender(ItemId),
    #[error("{kind} query needs at least {min} items, got {got}")]
    TooFewItems { kind: &'static str, min: usize, got: usize },
    #[error("slider step {0} must lie in (0,1] and divide 1")]
    BadStep(f64),
    #[error("response {response} does not match a {query} query")]
    KindMismatch { query: &'static str, response: &'static str },
    #[error("chosen item {0} is not part of the query")]
    NotInQuery(ItemId),
    #[error("slider value {value} is off the grid of step {step}")]
    OffGrid { value: f64, step: f64 },
    #[error("ordinal label must be at least 1, got {0}")]
    BadLabel(u32),
    #[error("ordinal query with a previous item needs a preferred item")]
    MissingPreference,
    #[error("ranking is not a permutation of the query items")]
    NotPermutation,
}

/// Feature embedding `ψ(τ)` of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector<T>(pub Vec<T>);

impl<T: Real> FeatureVector<T> {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

impl<T> From<Vec<T>> for FeatureVector<T> {
    fn from(v: Vec<T>) -> Self {
        FeatureVector(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct TrajectoryRecord<T> {
    pub id: ItemId,
    pub features: FeatureVector<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render: Option<Vec<[T; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl<T: Real> TrajectoryRecord<T> {
    pub fn new(id: ItemId, features: Vec<T>) -> Self {
        TrajectoryRecord { id, features: FeatureVector(features), render: None, label: None }
    }
}

#[derive(Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
struct PoolDoc<T> {
    dim: usize,
    trajectories: Vec<TrajectoryRecord<T>>,
}

/// The set of trajectories queries are drawn from.
///
/// Records are kept sorted by id, which is also the canonical serialization
/// order of the pool file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoolDoc<T>", bound(deserialize = "T: Real"))]
pub struct QueryPool<T> {
    dim: usize,
    trajectories: Vec<TrajectoryRecord<T>>,
    #[serde(skip)]
    index: HashMap<ItemId, usize>,
}

impl<T: Real> TryFrom<PoolDoc<T>> for QueryPool<T> {
    type Error = DomainError;

    fn try_from(doc: PoolDoc<T>) -> Result<Self, DomainError> {
        QueryPool::new(doc.dim, doc.trajectories)
    }
}

impl<T: Real> QueryPool<T> {
    pub fn new(dim: usize, mut trajectories: Vec<TrajectoryRecord<T>>) -> Result<Self, DomainError> {
        if trajectories.is_empty() {
            return Err(DomainError::EmptyPool);
        }
        trajectories.sort_by_key(|t| t.id);
        let mut index = HashMap::with_capacity(trajectories.len());
        for (i, t) in trajectories.iter().enumerate() {
            if t.features.dim() != dim || dim == 0 {
                return Err(DomainError::DimMismatch { id: t.id, got: t.features.dim(), dim });
            }
            if t.features.0.iter().any(|x| !x.is_finite()) {
                return Err(DomainError::NonFinite(t.id));
            }
            if matches!(&t.render, Some(r) if r.len() < 2) {
                return Err(DomainError::ShortRender(t.id));
            }
            if index.insert(t.id, i).is_some() {
                return Err(DomainError::DuplicateId(t.id));
            }
        }
        Ok(QueryPool { dim, trajectories, index })
    }

    /// Pool whose ids are `0..n` in the order given.
    pub fn from_features(features: Vec<Vec<T>>) -> Result<Self, DomainError> {
        let dim = features.first().map_or(0, Vec::len);
        let recs = features
            .into_iter()
            .enumerate()
            .map(|(i, f)| TrajectoryRecord::new(i as ItemId, f))
            .collect();
        QueryPool::new(dim, recs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectories(&self) -> &[TrajectoryRecord<T>] {
        &self.trajectories
    }

    pub fn get(&self, id: ItemId) -> Result<&TrajectoryRecord<T>, DomainError> {
        self.index.get(&id).map(|&i| &self.trajectories[i]).ok_or(DomainError::UnknownId(id))
    }

    /// Position of `id` in the sorted record list.
    pub fn position(&self, id: ItemId) -> Result<usize, DomainError> {
        self.index.get(&id).copied().ok_or(DomainError::UnknownId(id))
    }

    pub fn contains(&self, id: ItemId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn features(&self, id: ItemId) -> Result<&[T], DomainError> {
        self.get(id).map(|t| t.features.as_slice())
    }

    /// Features by position in the sorted record list.
    pub fn features_at(&self, pos: usize) -> &[T] {
        self.trajectories[pos].features.as_slice()
    }

    pub fn ids(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.trajectories.iter().map(|t| t.id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("pool serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// `ψ(a) − ψ(b)`.
pub fn feature_diff<T: Real>(
    pool: &QueryPool<T>,
    a: ItemId,
    b: ItemId,
) -> Result<FeatureVector<T>, DomainError> {
    let fa = pool.features(a)?;
    let fb = pool.features(b)?;
    Ok(FeatureVector(fa.iter().zip(fb).map(|(&x, &y)| x - y).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Query<T> {
    /// Best-of-k choice.
    Choice { items: Vec<ItemId> },
    /// Pairwise choice with an "about equal" option.
    WeakChoice { items: [ItemId; 2] },
    /// Slider between two items on a grid of step `step`.
    Scale { items: [ItemId; 2], step: T },
    /// Ordinal label for one item, optionally also compared with `previous`.
    Ordinal {
        item: ItemId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        previous: Option<ItemId>,
    },
    /// Full ranking of the items.
    Ranking { items: Vec<ItemId> },
    /// A context trajectory followed by two choice sub-queries.
    Hierarchical { context: ItemId, first: Vec<ItemId>, second: Vec<ItemId> },
}

impl<T: Real> Query<T> {
    pub fn pair(a: ItemId, b: ItemId) -> Self {
        Query::Choice { items: vec![a, b] }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Query::Choice { .. } => "choice",
            Query::WeakChoice { .. } => "weak_choice",
            Query::Scale { .. } => "scale",
            Query::Ordinal { .. } => "ordinal",
            Query::Ranking { .. } => "ranking",
            Query::Hierarchical { .. } => "hierarchical",
        }
    }

    /// Every item id the query references, in order, duplicates kept.
    pub fn item_ids(&self) -> Vec<ItemId> {
        match self {
            Query::Choice { items } | Query::Ranking { items } => items.clone(),
            Query::WeakChoice { items } | Query::Scale { items, .. } => items.to_vec(),
            Query::Ordinal { item, previous } => {
                let mut v = vec![*item];
                v.extend(previous.iter().copied());
                v
            }
            Query::Hierarchical { context, first, second } => {
                let mut v = vec![*context];
                v.extend(first);
                v.extend(second);
                v
            }
        }
    }
}

/// Number of grid cells on each side of zero, `1/ε`, if `ε` is a valid step.
pub fn grid_half_width<T: Real>(step: T) -> Option<usize> {
    let e = step.f64();
    if !(e > 0.0 && e <= 1.0) {
        return None;
    }
    let n = (1.0 / e).round();
    if (n * e - 1.0).abs() > GRID_TOL {
        return None;
    }
    Some(n as usize)
}

/// Grid index `n` of a slider value `y = n·ε`, if on the grid.
pub fn grid_index<T: Real>(value: T, step: T) -> Option<i64> {
    let half = grid_half_width(step)? as i64;
    let r = value.f64() / step.f64();
    let n = r.round();
    if (r - n).abs() > GRID_TOL * half.max(1) as f64 || n.abs() > half as f64 {
        return None;
    }
    Some(n as i64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Response<T> {
    Chosen { item: ItemId },
    AboutEqual,
    ScaleValue { value: T },
    /// Ordinal label in `1..=o`; `preferred` answers the comparison with the
    /// previous item when the query carries one.
    OrdinalLabel {
        label: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        preferred: Option<ItemId>,
    },
    /// Most preferred first.
    Ranking { order: Vec<ItemId> },
    HierarchicalPair { first: ItemId, second: ItemId },
}

impl<T: Real> Response<T> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Response::Chosen { .. } => "chosen",
            Response::AboutEqual => "about_equal",
            Response::ScaleValue { .. } => "scale_value",
            Response::OrdinalLabel { .. } => "ordinal_label",
            Response::Ranking { .. } => "ranking",
            Response::HierarchicalPair { .. } => "hierarchical_pair",
        }
    }
}

/// Checks a query against a pool.
pub fn validate<T: Real>(query: &Query<T>, pool: &QueryPool<T>) -> Result<(), DomainError> {
    for id in query.item_ids() {
        if !pool.contains(id) {
            return Err(DomainError::UnknownId(id));
        }
    }
    let need = |kind, items: &[ItemId]| {
        if items.len() < 2 {
            Err(DomainError::TooFewItems { kind, min: 2, got: items.len() })
        } else {
            Ok(())
        }
    };
    match query {
        Query::Choice { items } => need("choice", items),
        Query::Ranking { items } => need("ranking", items),
        Query::Hierarchical { first, second, .. } => {
            need("hierarchical", first)?;
            need("hierarchical", second)
        }
        Query::Scale { step, .. } => {
            grid_half_width(*step).map(|_| ()).ok_or(DomainError::BadStep(step.f64()))
        }
        Query::WeakChoice { .. } | Query::Ordinal { .. } => Ok(()),
    }
}

fn is_permutation(items: &[ItemId], order: &[ItemId]) -> bool {
    let mut a = items.to_vec();
    let mut b = order.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    a == b
}

/// Checks that a response type-matches and fits its query.
pub fn validate_response<T: Real>(query: &Query<T>, response: &Response<T>) -> Result<(), DomainError> {
    let mismatch = || DomainError::KindMismatch { query: query.kind_name(), response: response.kind_name() };
    match (query, response) {
        (Query::Choice { items }, Response::Chosen { item }) => {
            if items.contains(item) { Ok(()) } else { Err(DomainError::NotInQuery(*item)) }
        }
        (Query::WeakChoice { items }, Response::Chosen { item }) => {
            if items.contains(item) { Ok(()) } else { Err(DomainError::NotInQuery(*item)) }
        }
        (Query::WeakChoice { .. }, Response::AboutEqual) => Ok(()),
        (Query::Scale { step, .. }, Response::ScaleValue { value }) => grid_index(*value, *step)
            .map(|_| ())
            .ok_or(DomainError::OffGrid { value: value.f64(), step: step.f64() }),
        (Query::Ordinal { item, previous }, Response::OrdinalLabel { label, preferred }) => {
            if *label < 1 {
                return Err(DomainError::BadLabel(*label));
            }
            match (previous, preferred) {
                (None, None) => Ok(()),
                (None, Some(_)) => Err(mismatch()),
                (Some(_), None) => Err(DomainError::MissingPreference),
                (Some(p), Some(w)) if w == p || w == item => Ok(()),
                (Some(_), Some(w)) => Err(DomainError::NotInQuery(*w)),
            }
        }
        (Query::Ranking { items }, Response::Ranking { order }) => {
            if is_permutation(items, order) { Ok(()) } else { Err(DomainError::NotPermutation) }
        }
        (Query::Hierarchical { first: q1, second: q2, .. }, Response::HierarchicalPair { first, second }) => {
            if !q1.contains(first) {
                return Err(DomainError::NotInQuery(*first));
            }
            if !q2.contains(second) {
                return Err(DomainError::NotInQuery(*second));
            }
            Ok(())
        }
        _ => Err(mismatch()),
    }
}

/// Demonstrations plus the ordered history of answered queries.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct Dataset<T> {
    pub demonstrations: Vec<FeatureVector<T>>,
    pub interactions: Vec<(Query<T>, Response<T>)>,
}

impl<T: Real> Dataset<T> {
    pub fn new() -> Self {
        Dataset { demonstrations: Vec::new(), interactions: Vec::new() }
    }

    pub fn with_demonstrations(demos: Vec<Vec<T>>) -> Self {
        Dataset { demonstrations: demos.into_iter().map(FeatureVector).collect(), interactions: Vec::new() }
    }

    /// Appends an interaction after validating it against the pool.
    pub fn push(&mut self, pool: &QueryPool<T>, query: Query<T>, response: Response<T>) -> Result<(), DomainError> {
        validate(&query, pool)?;
        validate_response(&query, &response)?;
        self.interactions.push((query, response));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("dataset serializes");
        hex::encode(Sha256::digest(&json))
    }
}
