//! From feature matches to a 6DoF pose: lifting, EPnP and RANSAC.

pub mod epnp;
pub mod estimate;
pub mod lift;
pub mod ransac;
pub mod refine;

pub use epnp::{epnp, reprojection_rmse};
pub use estimate::{estimate_pose, stage_seed, StageStats};
pub use lift::lift;
pub use ransac::{ransac_pnp, RansacParams};
pub use refine::refine_pose;

use crate::geometry::{Pose, Vec2, Vec3};

/// A source-image pixel paired with the model point seen there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricCorrespondence {
    pub image_point: Vec2,
    pub model_point: Vec3,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose,
    pub inliers: usize,
    /// Indices into the correspondences handed to RANSAC.
    pub inlier_indices: Vec<usize>,
    /// Over the inliers, pixels.
    pub reprojection_rmse: f64,
    /// Retrieved template; `None` when PnP was run directly.
    pub template_id: Option<u32>,
    pub iterations: usize,
    /// Wall time, seconds.
    pub elapsed: f64,
    pub stats: StageStats,
}
