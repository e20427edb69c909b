//! Counterfactual training and off-policy evaluation of graph-based
//! recommenders from propensity-logged implicit feedback.
//!
//! The crate covers log generation ([`synthgen`]), MovieLens ingestion
//! ([`ingest`]), a LightGCN ranker ([`graph`]), weighted training
//! ([`training`]), value estimators ([`estimators`]) and ranking metrics
//! ([`metrics`]). All randomness flows through [`rng`], keyed by explicit
//! seeds.

pub mod domain;
pub mod error;
pub mod estimators;
pub mod formats;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod rng;
pub mod synthgen;
pub mod training;

pub use domain::{
    EstimateReport, EstimatorKind, GroundTruthModel, LoggedDataset, LoggedInteraction, Matrix, Provenance,
    TargetPolicy,
};
pub use error::{Error, Result};
pub use graph::{BipartiteGraph, EmbeddingModel, PolicyMode};
