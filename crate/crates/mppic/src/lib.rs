//! A multiphase particle-in-cell (MP-PIC) fluidized-bed solver on a
//! staggered structured grid, parallelized by equation decomposition: each
//! transport equation (u, v, w momentum, pressure correction) runs on its
//! own logical worker, with the particle workload on worker 1 and barriers
//! between phases instead of a spatial domain decomposition. All reductions
//! are per-equation and order-fixed, so results are bitwise independent of
//! the worker mapping.
//!
//! The crate also ships the verification toolkit around the solver: binary
//! state dumps with a significant-digits comparison, point probes with a
//! bubble-frequency spectrum, strong/weak scaling drivers, and an energy
//! estimator.

pub mod bench;
pub mod config;
pub mod drag;
pub mod eulerian;
pub mod fields;
pub mod grid;
pub mod lagrangian;
pub mod probe;
pub mod scheduler;
pub mod util;
pub mod verify;

pub use config::{parse_config, parse_config_str, RunConfig};
pub use scheduler::{parse_assignment, CouplingMode, Simulation};
