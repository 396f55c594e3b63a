#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Mixed-strategy equilibrium stopping times for time-inconsistent stopping
//! problems `J_τ(x) = E_x f(X_τ) + g(E_x h(X_τ))` driven by a one-dimensional
//! diffusion.

pub mod diffusion;
pub mod equilibrium;
pub mod error;
pub mod oracle;
mod path;
pub mod payoff;
pub mod rng;
pub mod smooth;
pub mod solvers;
pub mod stats;
pub mod strategy;

pub use error::{Error, Result};
