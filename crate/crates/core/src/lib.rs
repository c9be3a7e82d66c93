//! Egocentric 3D pose lifting from fisheye heatmaps.
//!
//! The crate bundles a small reverse-mode autodiff engine, skeleton
//! kinematics, an equidistant fisheye camera, Gaussian heatmaps, a
//! procedural dataset generator, the heatmap detector and multi-branch
//! lifting autoencoder, and the evaluation metrics used to score them.

pub mod anim;
pub mod camera;
pub mod error;
pub mod eval;
pub mod heatmap;
pub mod kinematics;
pub mod network;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
