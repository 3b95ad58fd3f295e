//! Trace-driven engine for two-tier cascaded decision systems.
//!
//! A cascade routes each query through a cheap base model, optionally
//! regenerates with a large model, and abstains to a human expert when
//! uncertainty stays high. Everything here runs off frozen trace files, so
//! the full experiment loop (verification scoring, Bayesian calibration,
//! soft-mask risk, online threshold learning, cost-benefit metrics) needs
//! no model access.
//!
//! Module map:
//! - [`trace`]: trace file schema, loading, calibration/stream splits,
//!   synthetic trace generation
//! - [`verify`]: raw confidence scores from verification evidence
//! - [`calibrate`]: score transform and Bayesian Platt scaling (Laplace)
//! - [`cost`]: token cost model and per-stage costs
//! - [`cascade`]: hard routing, soft logistic masks, differentiable risk
//! - [`learn`]: threshold reparameterization, analytic risk gradient, Adam,
//!   the online loop, grid-search baseline
//! - [`metrics`]: probabilistic-deferral evaluation, IBC and delta-IBC
//! - [`stats`]: small numeric helpers shared across modules

pub mod calibrate;
pub mod cascade;
pub mod cost;
pub mod learn;
pub mod metrics;
pub mod stats;
pub mod trace;
pub mod verify;
