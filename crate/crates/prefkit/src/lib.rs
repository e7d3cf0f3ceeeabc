//! Active preference-based reward learning.
//!
//! Modules are generic over the scalar type; the aliases below fix it to
//! `f64`, which is what the runner, CLI and service use.

pub mod acquisition;
pub mod batch;
pub mod belief;
pub mod domain;
pub mod experiment;
pub mod gppref;
pub mod likelihood;
pub mod metrics;
pub mod scalar;
pub mod simenv;

pub use scalar::Real;

pub type Pool = domain::QueryPool<f64>;
pub type Query = domain::Query<f64>;
pub type Response = domain::Response<f64>;
pub type Dataset = domain::Dataset<f64>;
pub type Point = belief::ParamPoint<f64>;
pub type Context = belief::ModelContext<f64>;
pub type Posterior = belief::Posterior<f64>;
pub type Belief = belief::BeliefState<f64>;
pub type Samples = belief::SampleBelief<f64>;
pub type Rationality = likelihood::RationalityConfig<f64>;
pub type Cost = acquisition::CostModel<f64>;
pub type User = simenv::SimUser<f64>;
