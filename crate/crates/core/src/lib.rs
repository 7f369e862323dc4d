//! Lattice Bogoliubov-de Gennes operators on `Z^2`: model construction,
//! spectral statistics, random perturbations, resolvent decay, and Chern
//! number estimators.

pub mod chern;
pub mod disorder;
pub mod error;
pub mod green;
pub mod linalg;
pub mod models;
pub mod operator;
pub mod spectral;
pub mod table;
pub mod verify;

pub use error::{Error, Result};
