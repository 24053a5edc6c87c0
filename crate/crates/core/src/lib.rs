//! Spatio-temporal PM2.5 forecasting on station graphs.
//!
//! The crate provides the full pipeline: station-graph construction with
//! wind-driven edge attributes ([`geo_graph`]), differentiable layers with
//! hand-written gradients ([`nn_core`]), the AGNN_GRU encoder-decoder and
//! its ablation baselines ([`model`]), data ingestion and windowing
//! ([`data`]), a synthetic advection-diffusion generator ([`synth`]),
//! training and evaluation ([`train_eval`]) and the command-line front end
//! ([`cli`]).

pub mod cli;
pub mod data;
pub mod error;
pub mod geo_graph;
pub mod model;
pub mod nn_core;
pub mod synth;
pub mod train_eval;

pub use error::{Error, Result};
