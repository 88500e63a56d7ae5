//! Simulation and verification laboratory for multiscale crossing trees of a
//! conditioned Brownian path, good-box percolation statistics, the nested
//! exceptional field they carry, and level-set covers with rectilinear
//! detour routing.
//!
//! The crate is organized around exact, reproducible sampling: every
//! stochastic routine draws from a counter-based [`rng::RngStream`], embedded
//! walks use the discrete Doob transform (no discretization parameter), and
//! crossing durations come from an inverse-CDF exit-time sampler. On top of
//! that sit the box hierarchy ([`boxes`]), the percolation estimators
//! ([`percolation`]), the field construction ([`field`]) and the level-set
//! toolkit ([`level_set`], [`detour`]).

pub mod boxes;
pub mod detour;
pub mod error;
pub mod exit_time;
pub mod field;
pub mod fine_path;
pub mod io;
pub mod level_set;
pub mod percolation;
pub mod rng;
pub mod stats;
pub mod tree;
pub mod walk;

pub use boxes::{GoodnessLabels, GoodnessParams, Rational, SelectedFamily};
pub use error::{Error, Result};
pub use fine_path::{BridgePath, ExcursionPath, FinePath};
pub use rng::RngStream;
pub use tree::{CrossingTree, DurationMode};
pub use walk::LatticeWalkPath;
