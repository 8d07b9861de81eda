//! Per-user causal graphs from longitudinal nutrition, glucose, and activity
//! logs.
//!
//! The pipeline has five stages: featurize raw CSV streams into per-meal rows
//! ([`ingest`]), discover a causal DAG over nutrients, modulators, and glucose
//! outcomes ([`discovery`]), fit a linear structural causal model on it
//! ([`scm`]), reason over ranked causal paths to pick and verify food
//! recommendations ([`paths`], [`food`], [`recommend`]), and score those
//! recommendations counterfactually against a full-data oracle graph
//! ([`eval`]). The [`synth`] module generates cohorts from known ground-truth
//! models so every stage can be checked against an exact oracle.

pub mod config;
pub mod discovery;
pub mod error;
pub mod eval;
pub mod food;
pub mod graph;
pub mod ingest;
pub mod paths;
pub mod persist;
pub mod recommend;
pub mod scm;
pub mod stats;
pub mod synth;

pub use config::RunConfig;
pub use error::{Error, Result};
