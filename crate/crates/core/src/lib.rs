//! Bi-predictability (P) and predictive-asymmetry (ΔH) analysis of
//! `(S, A, S')` interaction streams.
//!
//! The crate is organised bottom-up:
//!
//! - [`metrics`]: plug-in entropies and per-window interaction metrics
//! - [`discretize`]: continuous streams to composite symbols
//! - [`windowing`]: sliding windows and metric series
//! - [`detector`]: baseline fitting, k-sigma detection, ensemble union
//! - [`pendulum`]: double-pendulum calibration system
//! - [`agent`]: synthetic agent/environment harness
//! - [`dialogue`]: token-bag metrics over multi-turn transcripts
//! - [`quantum`]: von Neumann entropy and the quantum bound
//! - [`io`], [`config`], [`experiments`]: file formats and reproducible runs

// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod config;
pub mod detector;
pub mod dialogue;
pub mod discretize;
pub mod error;
pub mod experiments;
pub mod io;
pub mod metrics;
pub mod pendulum;
pub mod quantum;
pub mod windowing;

pub use error::{Error, Result};
