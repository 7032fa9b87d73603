//! Display-illuminated photometric stereo.
//!
//! A monitor in front of the camera serves as a programmable array of colored
//! light sources. The toolkit simulates that rig, separates diffuse from
//! specular reflection with polarization imaging, reconstructs per-pixel
//! surface normals with a closed-form least-squares solve, and learns display
//! patterns end to end by backpropagating a normal-accuracy loss through the
//! entire reconstruction.

pub mod calib;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod learner;
pub mod mesh;
pub mod patterns;
pub mod pfm;
pub mod photostereo;
pub mod polarimetry;
pub mod posefit;
pub mod scene;
pub mod viz;

pub use error::{Error, Result};
