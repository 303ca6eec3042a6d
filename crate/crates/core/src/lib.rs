//! Operator learning for controlled ODE systems.
//!
//! A DeepONet is trained on one-step responses `(x(t), u, h) -> x(t + h)` of a
//! system `dx/dt = f(x, u)`, then used to simulate long horizons either by
//! feeding its predictions back in ([`predict::Scheme::Recursive`]) or by an
//! improved-Euler scheme whose slopes come from the network's derivative with
//! respect to the step size ([`predict::Scheme::Rk2`]).

pub mod baselines;
pub mod cli;
pub mod dataset;
pub mod deeponet;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod predict;
pub mod systems;
pub mod train;

pub use error::{Error, Result};
