//! Language-embedded 3D Gaussian splatting.

pub mod camera;
pub mod container;
pub mod dataset;
pub mod edit;
pub mod features;
pub mod fixtures;
pub mod guidance;
mod math;
pub mod optim;
pub mod ply;
pub mod raster;
pub mod retrieval;
pub mod scene;
pub mod train;

pub use camera::{Camera, CameraError, Intrinsics};
pub use math::{cosine, sigmoid};
pub use scene::{object_box, Gaussian, GaussianScene, ObjectBox, SceneError};

/// Dimension of the per-Gaussian language embedding.
pub const LANG_DIM: usize = 64;
