//! Exact enumeration and Monte Carlo estimates for mixed p-spin glasses with Gaussian couplings,
//! focused on identities and bounds that hold on the Nishimori line.

pub mod config;
pub mod disorder_avg;
pub mod error;
pub mod exact;
pub mod geometry;
pub mod model;
pub mod observable;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod study;
pub mod verify;

pub use error::{Error, Result};
