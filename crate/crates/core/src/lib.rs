//! Reconstruction of the radial interaction kernel of a first-order
//! nonlocal particle system from observed trajectories.
//!
//! The pipeline simulates (or ingests) particle trajectories, assembles the
//! discrete least-squares error functional over a linear B-spline trial
//! space, and minimizes it under the constraint
//! `2 ||a||_inf + ||D a||_inf <= M` with an interior-point method. The
//! [`measures`] module provides exact Wasserstein-1 distances and the
//! pairwise-distance measures weighting the reconstruction error, and
//! [`diagnostics`] verifies coercivity identities, the trajectory
//! approximation bound, and related estimates.

pub mod basis;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod learn;
pub mod measures;
pub mod rng;

pub use error::{Error, Result};
