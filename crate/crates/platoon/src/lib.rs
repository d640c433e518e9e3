//! Physics-encoded platoon dynamics: data handling, a sign-constrained
//! linear car-following rollout driven by a learned sequence network,
//! training, closed-loop simulation, an IDM baseline and analysis tools.

pub mod analysis;
pub mod apecg;
pub mod baseline;
pub mod data;
pub mod mtfln;
pub mod pipeline;
pub mod simulator;
pub mod training;
mod error;

pub use error::{Error, Result};
