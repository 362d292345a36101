//! Sequential Bayesian analysis of count flows on directed networks.
//!
//! Every edge of the network carries its own Poisson dynamic generalized
//! linear model (DGLM). The edge models are filtered independently and in
//! parallel, then recoupled: sampled edge rates are normalized into
//! multinomial transition probabilities and mapped onto a dynamic gravity
//! model (baseline, origin, destination and affinity effects).
//!
//! Module map:
//!
//! * [`special`] - digamma / trigamma / tetragamma.
//! * [`dglm`] - single-series forward filtering (evolve, predict, update).
//! * [`retro`] - retrospective backward sampling of state trajectories.
//! * [`network`] - flow panels, occupancy ratios, parallel edge filtering,
//!   multinomial recoupling.
//! * [`gravity`] - dynamic gravity decomposition and credible values.
//! * [`simulate`] - ground-truth generator for the full network model.
//! * [`evaluation`] - one-step forecast scoring and a discount-gamma baseline.
//! * [`io`], [`config`], [`pipeline`] - file formats and the staged pipeline.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dglm;
pub mod error;
pub mod evaluation;
pub mod gravity;
pub mod io;
pub mod network;
pub mod pipeline;
pub mod retro;
pub mod rng;
pub mod simulate;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
