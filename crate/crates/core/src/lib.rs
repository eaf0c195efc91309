//! Reference-based video super-resolution: a low-resolution frame is fused
//! with a high-resolution neighbouring frame to synthesise the missing
//! high-resolution frame.

pub mod checkpoint;
pub mod config;
pub mod context;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod image;
pub mod metrics;
pub mod motion;
pub mod network;
pub mod optim;
pub mod params;
pub mod patchmatch;
pub mod pipeline;
pub mod resample;
pub mod seed;
pub mod selftest;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
pub use image::ImageF;
