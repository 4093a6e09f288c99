//! Forecasting per-location epidemic counts from daily knowledge-graph
//! snapshots with graph attention and an attentive bidirectional GRU.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod dgnn;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod forecast;
pub mod graph;
pub mod model;
pub mod risk;
pub mod synth;
pub mod temporal;
pub mod train;

pub use config::{Ablation, Combine, ForecastConfig, TargetKind};
pub use error::{Error, Result};
