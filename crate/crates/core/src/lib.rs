//! Monte Carlo laboratory for target detection among moving Poisson particles.
//!
//! Particles start from a Poisson cloud on `Z^d` (or `R^d`) and perform
//! independent continuous-time random walks (or Brownian motions). A target
//! of bounded speed tries to avoid them. The crate builds space-time cells,
//! vacancy fields, oriented vacant paths through them, the influence regions
//! used to dominate those fields, and harnesses for survival experiments.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod evasion;
pub mod field;
pub mod harness;
pub mod influence;
pub mod lemmas;
pub mod model;
pub mod rng;
pub mod stats;

pub use dynamics::{ParticleRealization, Region, SimulationWindow};
pub use error::{Error, Result};
pub use model::{cell_of, Cell, Cone, Mode, ModelParams, Site};
