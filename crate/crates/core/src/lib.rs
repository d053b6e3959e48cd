//! Core library: constrained N-body simulation, a minimal reverse-mode
//! autodiff engine, graph mechanics network models, and the training and
//! evaluation machinery built on top of them.

pub mod ad;
pub mod checks;
pub mod geom;
pub mod model;
pub mod rng;
pub mod sim;
pub mod train;

pub use geom::{Mat3, Vec3};
