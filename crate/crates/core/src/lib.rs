//! Numerical solver and simulator for two-player zero-sum stochastic
//! differential games with asymmetric information.
//!
//! The value `V(t, x, p, q)` is computed on a state × belief-simplex grid as
//! the dual solution of a second-order Hamilton-Jacobi-Isaacs equation, and
//! cross-checked against game simulation and exact discrete-game recursions.

pub mod dualcheck;
pub mod error;
pub mod hamiltonian;
pub mod model;
pub mod oracle;
pub mod simplex;
pub mod simulator;
pub mod solver;
pub mod transform;

pub use error::{GameError, Result};
