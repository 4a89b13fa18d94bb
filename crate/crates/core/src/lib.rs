//! Zero-shot 6DoF object pose estimation from dense feature correspondences.
//!
//! The pipeline takes per-layer feature maps of a query crop and of rendered
//! object templates, retrieves the closest template, co-projects both feature
//! sets into one PCA space, matches clusters and then features within matched
//! clusters, lifts the matches to 2D-3D correspondences through the template's
//! object-coordinate map, and solves the pose with RANSAC + EPnP.
//!
//! Alongside the estimator the crate ships BOP-style evaluation (VSD, MSSD,
//! MSPD, average recall, Acc15) and a small z-buffer rasterizer, which together
//! make a fully synthetic end-to-end check possible (see [`pipeline::fixture`]).

pub mod error;
pub mod correspondence;
pub mod geometry;
pub mod hyperfeatures;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod pose;
pub mod raster;
pub mod template_match;
pub mod tensor_store;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, CropTransform, Pose, SymmetrySet};
