//! Evaluation harness for goal-based mobile UI navigation agents.

pub mod action;
pub mod agent;
pub mod backend;
pub mod env;
pub mod error;
pub mod evaluator;
pub mod model;
pub mod observation;
pub mod probes;
pub mod report;
pub mod runner;
pub mod suite;
#[doc(hidden)]
pub mod testkit;

pub use error::{Error, LoadError, Result, SchemaError};
