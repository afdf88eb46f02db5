//! Acoustic hologram design through voxelized lens media.

pub mod analysis;
pub mod baselines;
pub mod dhla;
pub mod error;
pub mod io;
pub mod medium;
pub mod optim;
pub mod solver;

pub use error::{Error, Result};
