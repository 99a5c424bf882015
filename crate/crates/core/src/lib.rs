//! Graph-transformer neural operator for learning PDE solution operators on
//! arbitrary point discretizations.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`, which is what the training and
//! evaluation tooling uses.

pub mod attention;
pub mod graph;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use scalar::Real;

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tensor::Tape<f64>;
pub type PointSet = graph::PointSet<f64>;
pub type Graph = graph::Graph<f64>;

pub type GtBlockParams = attention::GtBlockParams<f64>;
pub type RopeConfig = attention::RopeConfig<f64>;
pub type OperatorModel = model::OperatorModel<f64>;
pub type QuerySet = model::QuerySet<f64>;
pub type OperatorSample = training::OperatorSample<f64>;
pub type Trainer = training::Trainer<f64>;
