//! Event-assisted bracketed HDR simulation and reconstruction.

pub mod align;
pub mod config;
pub mod deblur;
pub mod degrade;
pub mod error;
pub mod eventsim;
pub mod fuse;
pub mod image;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod scenesim;
pub mod synth;
pub mod transfer;

pub use error::{Category, Error, Result};
