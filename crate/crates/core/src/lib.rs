//! Multi-crop weak-perspective camera toolkit.
//!
//! Converts per-crop (local) weak-perspective cameras into the shared
//! full-image camera, measures and differentiates the pairwise
//! camera-consistency loss, and evaluates the crop-aware fusion and
//! multi-positive contrastive heads on synthetic features. A synthetic
//! scene generator and a first-order solver exercise everything end to end.

pub mod cli;
pub mod consistency;
pub mod crops;
pub mod encoding;
pub mod error;
pub mod features;
pub mod geometry;
pub mod gradsuite;
pub mod rng;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{BBox, CropIntrinsics, FullCamera, Joint2D, Joint3D, LocalCamera};
