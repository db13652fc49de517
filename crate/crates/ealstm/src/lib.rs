//! Entity-aware LSTM toolkit for multi-basin rainfall-runoff modeling.
//!
//! The library implements, from scratch and in 64-bit floats throughout:
//!
//! - standard LSTM and entity-aware LSTM cells in sequence-to-value mode,
//!   with exact backpropagation through time verified against central
//!   finite differences ([`cell`], [`train`]);
//! - the basin-averaged NSE* objective that normalizes each basin's
//!   squared errors by its own discharge variability ([`train`]);
//! - CAMELS-style data ingestion, pooled standardization, window
//!   extraction, and a synthetic linear-reservoir generator for
//!   verification at desk scale ([`data`]);
//! - the hydrological evaluation metric suite and thirteen hydrologic
//!   signatures ([`metrics`]);
//! - analytic elementary-effect sensitivity, the attribute-noise
//!   robustness protocol, catchment-embedding extraction, k-means
//!   clustering with silhouettes, and paired statistical model comparison
//!   ([`analysis`]);
//! - reproducible experiment commands with checkpoint and manifest
//!   artifacts ([`commands`]).

pub mod analysis;
pub mod cell;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod metrics;
pub mod train;

pub use error::{Error, Result};
