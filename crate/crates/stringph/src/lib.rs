//! Simulation and gray-box identification toolkit for the geometrically
//! nonlinear damped string.
//!
//! The crate has two halves that share one time discretization:
//!
//! * a structure-preserving reference simulator — port-Hamiltonian finite
//!   differences in space, an explicit staggered scalar-auxiliary-variable
//!   stepper in time ([`sav`]) — used to generate datasets ([`datagen`]);
//! * a differentiable re-implementation of the same step ([`model`], [`nn`])
//!   whose physical coefficients and nonlinear energy are learned from
//!   one-step transitions ([`train`]), evaluated by recursive rollout
//!   ([`eval`]).

pub mod ckpt;
pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod export;
pub mod model;
pub mod nn;
pub mod physics;
pub mod sav;
pub mod stencil;
pub mod train;
pub mod tridiag;
pub mod types;

pub use error::{Error, Result};
