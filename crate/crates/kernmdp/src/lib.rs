//! Kernelized reinforcement learning in continuous-state episodic MDPs.
//!
//! The crate provides the pieces needed to run and evaluate optimistic and
//! posterior-sampling model-based agents whose reward and transition models
//! live in a kernel function class:
//!
//! - kernel families and composites with exact Gaussian-process posteriors
//!   ([`kernel`]),
//! - low-rank feature approximations: quadrature Fourier features and
//!   leverage-based dictionary embeddings ([`features`]),
//! - ridge regression on those features with confidence widths
//!   ([`regression`]),
//! - synthetic benchmark environments with exactly known value functions
//!   ([`env`]),
//! - grid-based value iteration and policy evaluation ([`planner`]),
//! - the two agents and the episodic simulation loop ([`agents`]),
//! - the experiment harness: configs, CSV/JSON outputs, regret reports
//!   ([`harness`]).
//!
//! Heavy inner loops go through [`parallel`], which maps work across a thread
//! pool when the `parallel` feature (on by default) is enabled and falls back
//! to plain sequential iteration otherwise. Results are identical either way.

extern crate blas_src;

pub mod agents;
pub mod env;
pub mod error;
pub mod features;
pub mod harness;
pub mod kernel;
pub mod parallel;
pub mod planner;
pub mod regression;

pub use error::{Error, Result};
