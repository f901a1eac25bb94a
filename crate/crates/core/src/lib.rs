//! Layered semantic joint source-channel coding: a multi-head autoencoder
//! whose encoder emits successive sub-blocks over a noisy channel, decoders
//! that refine reconstructions and class predictions with each sub-block,
//! the training objective and loop, evaluation harnesses, and a multicast
//! cost planner.
//!
//! Numerical code is generic over [`scalar::Scalar`]; the aliases below fix
//! the common precisions.

pub mod channel;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod nn;
pub mod objective;
pub mod planner;
pub mod plot;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};

pub type Model32 = model::SmrcModel<f32>;
pub type Model64 = model::SmrcModel<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Checkpoint32 = training::Checkpoint<f32>;
pub type Checkpoint64 = training::Checkpoint<f64>;
pub type ExactTiers = planner::TierSpec<num_rational::Rational64>;
pub type Tiers64 = planner::TierSpec<f64>;
