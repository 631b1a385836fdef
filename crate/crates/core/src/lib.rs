//! Discrete spectral geometry on triangulated closed surfaces.
//!
//! The crate assembles the cotangent Laplacian and a connection Laplacian on
//! the bundle `TM ⊕ ℝe`, solves their generalized eigenproblems, and layers
//! eigenvalue-pinching diagnostics on top: Obata constants, band projections,
//! eigenfunction sphere maps with Gromov–Hausdorff upper bounds, geodesic
//! excess, spherical suspensions, and almost-umbilical hypersurface checks.

pub mod error;
pub mod fields;
pub mod geodesy;
pub mod mesh;
pub mod operators;
pub mod pinching;
pub mod spectra;
pub mod rng;
pub mod sparse;

pub use error::{Error, Result};
