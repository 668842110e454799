//! Hyperbolic review-based cross-domain recommendation.

pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod data;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod model;
pub mod objectives;
pub mod training;

pub use error::{Error, ErrorClass, Result};
