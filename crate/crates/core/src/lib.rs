//! Event-triggered coordination between agents and a supervisor for
//! network optimization problems of the form `sum_i f_i(x_i) + g(x)`.
//!
//! Agents run a local gradient flow using the last coupling gradient the
//! supervisor broadcast. Each agent requests a fresh broadcast only when its
//! own trigger fires, so communication is aperiodic and sparse.

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod coordinator;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod io;
pub mod problem;
pub mod scenarios;
pub mod simulator;
pub mod trigger;

pub use error::{Error, Result};
pub use problem::{BoxConstraint, CouplingCost, LocalCost, NetworkProblem, Polynomial};
