//! Differentiable Kohn–Sham DFT for hydrogen-only molecules with a
//! linearly scaling expander-graph transformer exchange-correlation
//! functional defined on the molecular quadrature grid.

pub mod ad;
pub mod basis;
pub mod error;
pub mod fci;
pub mod geometry;
pub mod graph;
pub mod grid;
pub mod nn;
pub mod scf;
pub mod stats;
pub mod train;
pub mod units;
pub mod xc;

pub use error::{Error, Result};
pub use geometry::Geometry;
