//! Infinitesimal phase response curves (iPRCs) for limit cycles of
//! piecewise-smooth systems.
//!
//! The iPRC of a hybrid limit cycle solves the adjoint equation inside each
//! region and jumps at every switching surface by the matrix `M` that keeps
//! `F.z` and the tangential components of `z` consistent across the surface.
//! For piecewise-affine systems the whole curve is assembled from matrix
//! exponentials and the unit eigenvector of the cycle matrix `B`.

pub mod coupling;
pub mod cycle;
pub mod dense;
pub mod error;
pub mod integrate;
pub mod io;
pub mod iprc;
pub mod linalg;
pub mod oracle;
pub mod par;
pub mod system;
pub mod zoo;

pub use error::{Error, Result};
