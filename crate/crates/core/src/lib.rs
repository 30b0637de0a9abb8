//! Agent-based human mobility simulation engine.
//!
//! The pipeline runs in four stages: persona generation (demographics,
//! personality traits, anchor locations, activity-location lists), iterative
//! per-day activity scheduling, destination choice (a gravity-style physical
//! model fused with visit-frequency weights, or an LLM-backed selector), and
//! per-agent hierarchical memory with importance-scored pruning.
//!
//! Everything is seeded and deterministic: the same config and seed produce
//! byte-identical trace files regardless of worker-pool size.

pub mod activity;
pub mod config;
pub mod destination;
pub mod frequency;
pub mod geo;
pub mod llm;
pub mod memory;
pub mod metrics;
pub mod persona;
pub mod poi;
pub mod rng;
pub mod sim;
pub mod spatial;
pub mod trace;

pub use config::SimConfig;
pub use geo::GeoPoint;
pub use poi::{CheckinLog, Poi, PoiStore};
