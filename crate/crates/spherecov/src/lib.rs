//! Gaussian random fields on circles and spheres: isotropic covariance
//! models under great-circle or chordal distance, positive-definiteness
//! certification, exact simulation, maximum-likelihood fitting, and simple
//! kriging with proper scoring.

pub mod config;
pub mod error;
pub mod experiments;
pub mod field;
pub mod fit;
pub mod geometry;
pub mod grid;
pub mod kernels;
pub mod linalg;
pub mod predict;
pub mod rng;

pub use error::{Error, Result};
