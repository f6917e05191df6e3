//! Parameter-server simulation of Minibatch-SGD, Local-SGD and SLowcal-SGD
//! (local Anytime-SGD with weighted query-point averaging) on heterogeneous
//! convex problems.

pub mod algorithms;
pub mod config;
pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod objectives;
pub mod rng;
pub mod runner;
pub mod tuning;
pub mod verify;
pub mod weights;

pub use error::{Error, Result};
