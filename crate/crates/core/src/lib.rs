//! Clinical information extraction with large language models: prompt
//! templates, task resolvers, evaluation metrics and weak supervision.

pub mod corpus;
pub mod gateway;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod prompting;
pub mod resolvers;
pub mod tokenize;
pub mod validate;
pub mod weaksup;

pub use metrics::Scalar;
pub use model::*;

/// Exact rational scalar used by the oracle checks.
pub type Exact = num_rational::BigRational;

pub type Prf = metrics::Prf<f64>;
pub type GroupedEvalReport = metrics::GroupedEvalReport<f64>;
pub type TypedF1Report = metrics::TypedF1Report<f64>;
