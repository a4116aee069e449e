//! Clustered reduced-rank learning: fitting `B = S Vᵀ` with clustered
//! rows of `S` and orthonormal `V` under quadratic and GLM losses.

pub mod error;
pub mod graph;
pub mod io;
pub mod kmeans;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod par;
pub mod protocols;
pub mod selection;
pub mod sim;
pub mod solver;

pub use error::{CrlError, Result};
