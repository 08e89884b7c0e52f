//! Distributed seeking of the socially optimal Nash equilibrium in monotone
//! aggregative games.
//!
//! Players run gradient play on their own costs plus a vanishing
//! (Tikhonov) incentive term pulling toward the social optimum, while
//! consensus recursions over a communication graph track the aggregate
//! decision and the aggregate social-cost gradient.
//!
//! - [`graph`]: topologies and Metropolis mixing matrices.
//! - [`game`]: the game abstraction and the quadratic charging family.
//! - [`solver`]: the distributed iteration, step schedules and the safe
//!   bound on the initial step.
//! - [`oracle`]: centralized reference solutions.
//! - [`diagnostics`]: numerical audit of the error recursion.

pub mod diagnostics;
pub mod error;
pub mod game;
pub mod graph;
pub mod linalg;
pub mod oracle;
pub mod solver;

pub use error::{Error, Result};
pub use nalgebra;
