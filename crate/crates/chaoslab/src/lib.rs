//! chaoslab: a numerical laboratory for finite-grid Wiener chaos.
//!
//! The library implements multiple Wiener-Ito integrals on a discretized
//! interval, the product formula for chaos expansions, two exchangeable-pair
//! constructions (Ornstein-Uhlenbeck interpolation and Gibbs block
//! resampling), closed-form fourth-moment bounds for normal approximation,
//! and a seeded Monte Carlo harness for confronting those bounds with
//! empirical distribution distances.

pub mod chaos_algebra;
pub mod error;
pub mod exchange_pairs;
pub mod families;
pub mod grid_kernel;
pub mod mc_lab;
pub mod stein_bounds;

pub use error::{Error, Result};
