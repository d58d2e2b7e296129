//! Behavioral alpha research pipeline.
//!
//! The crate is organized bottom-up:
//!
//! * [`panel`] loads or synthesizes aligned OHLCV panels.
//! * [`indicators`] holds the rolling and cross-sectional kernels.
//! * [`dsl`] parses and evaluates the formulaic factor language.
//! * [`dataset`] turns factor values into standardized training samples.
//! * [`grad`] is a small reverse-mode engine with Adam and friends.
//! * [`models`] trains the dual-task MLP, the 1-D CNN and the linear SVR.
//! * [`evalkit`] computes IC statistics, Sharpe ratios and long-short backtests.
//! * [`attribution`] estimates Shapley values by permutation sampling.
//! * [`config`] and [`pipeline`] wire everything to a single run config.

// `!(x > 0.0)` rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attribution;
pub mod config;
pub mod dataset;
pub mod dsl;
pub mod error;
pub mod evalkit;
pub mod grad;
pub mod indicators;
pub mod models;
pub mod panel;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
