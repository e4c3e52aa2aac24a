//! Desk-scale laboratory for the Euler-Reynolds convex-integration iteration
//! with Beltrami waves, alpha-scaled stochastic solution families and
//! transport noise with its eddy-viscosity corrector, all on the periodic box.

pub mod beltrami;
pub mod certifier;
pub mod convexint;
pub mod error;
pub mod fields;
pub mod multiscale;
pub mod noiselab;
pub mod run;
pub mod seed;
pub mod stochastic;
pub mod transport;

pub use error::{Error, Result};
