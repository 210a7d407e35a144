//! Simulation, attractor analysis, multistability switching control and
//! periodic-orbit continuation for forced soft-impact and Duffing oscillators.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod attractor;
pub mod continuation;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod output;
pub mod scenario;

pub use dynamics::{Channel, DuffingParams, ImpactParams, Model, Param, State, System};
pub use error::{Error, Result};
pub use integrator::StepSpec;
