//! Registration of implicit signed-distance fields.
//!
//! Given a scene field and an object field from a library, recover the
//! similarity transform (rotation, translation, uniform scale) that maps scene
//! coordinates into the object's canonical frame. The pipeline is:
//!
//! 1. multi-view sphere-traced surface sampling of both fields ([`sampler`]),
//! 2. a rigid coarse alignment from FPFH + RANSAC + point-to-point ICP ([`coarse`]),
//! 3. gradient descent on a bidirectional robust surface-residual loss with
//!    periodic rejection resampling ([`optimizer`]).
//!
//! [`harness`] wraps the pipeline with scene/library file formats, synthetic
//! room generation, seeded multi-run reports and ablations.

pub mod coarse;
pub mod error;
pub mod harness;
pub mod nn;
pub mod optimizer;
pub mod sampler;
pub mod sdf;
pub mod seed;
pub mod transform;

pub use error::{Error, Result};
pub use sdf::SdfField;
pub use transform::{transform_error, SimTransform, TransformError};

/// Points and vectors are plain `f64` 3-vectors throughout.
pub type Vec3 = nalgebra::Vector3<f64>;
