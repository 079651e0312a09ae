//! Structural equation modeling engine.
//!
//! The pipeline mirrors how a model is used in practice:
//!
//! 1. [`syntax::parse`] turns lavaan-style model text into a [`syntax::ModelDescription`].
//! 2. [`model::Model::new`] classifies variables, lays out the `B`, `Λ`, `Ψ`, `Θ`
//!    matrices and computes starting values from a [`dataset::Dataset`].
//! 3. [`optim::Optimizer`] minimizes one of the discrepancy functions in
//!    [`objective`], keeping the estimate between successive runs.
//! 4. [`stats`] turns a fitted model into standard errors, p-values and fit indices.
//!
//! [`generator`] and [`bench`] form the testing framework: random models with known
//! parameters, and campaigns that count how often an estimator fails to recover them.

pub mod bench;
pub mod dataset;
pub mod error;
pub mod generator;
pub mod model;
pub mod objective;
pub mod optim;
pub mod report;
pub mod stats;
pub mod syntax;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use model::Model;
pub use objective::ObjectiveKind;
pub use optim::{Method, MethodConfig, Optimizer};
pub use syntax::{parse, ModelDescription};
