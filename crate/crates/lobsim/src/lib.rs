//! Discrete-event limit order book simulation toolkit for small-tick assets.
//!
//! The crate provides:
//!
//! - [`book`]: an order book on an integer tick grid with price-time
//!   priority, unit-size orders and periodic recentering around the mid-price.
//! - [`models`]: Poisson order flow (limit orders, market orders engine,
//!   cancellations) with an optional trend-reactive limit-order sign
//!   probability driven by an exponentially weighted mid-price return.
//! - [`execution`]: a constant-speed metaorder harness that superimposes
//!   child market orders on the background flow and aggregates ensembles
//!   of independent simulations.
//! - [`estimation`]: a LOBSTER message/orderbook file parser, the cleaning
//!   pipeline, and closed-form flow-rate estimators used to calibrate the
//!   simulator on market data.
//! - [`analysis`]: response functions, trend-return diagnostics,
//!   stationary-regime and post-execution fits, and the per-child
//!   decomposition of price impact.
//! - [`master_eq`]: discrete-time master equations for the spread and the
//!   mid-price between child market orders, used as a semi-analytic check
//!   of the Monte Carlo dynamics.
//!
//! Simulations are deterministic given a seed: ensemble member `i` draws
//! from stream `i` of a counter-based generator seeded with the run seed.

pub mod analysis;
pub mod book;
pub mod estimation;
pub mod execution;
pub mod master_eq;
pub mod models;
pub mod stats;

pub use book::{BookDelta, BookError, Observables, OrderBook, OrderId, Side};
pub use execution::{EnsembleResult, ExecutionPath, MetaorderSpec};

pub use models::{EwmaState, ModelParams, SimTrajectory, Simulation, TrendParams};
