//! Recursive-batch least-squares estimation with history stacks, affine
//! uncertainty propagation (zonotopes and Gaussians), and robust adaptive
//! control barrier function safety filters.
//!
//! The crate is organised bottom-up:
//!
//! * [`regression`] keeps the history stack and propagates the estimate,
//! * [`uncertainty`] maps the prior set/belief through the estimator,
//! * [`safety_filter`] builds barrier constraints and solves the filter QP,
//! * [`plant`] is the planar double integrator flying through wind,
//! * [`sim`] closes the loop and collects metrics, [`export`] writes CSV.

pub mod error;
pub mod export;
pub mod linalg;
pub mod plant;
pub mod regression;
pub mod safety_filter;
pub mod sim;
pub mod uncertainty;

pub use error::{Error, Result};
