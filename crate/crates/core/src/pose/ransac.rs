use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::epnp::{epnp, reprojection_error, MIN_POINTS};
use super::refine::refine_pose;
use super::{GeometricCorrespondence, PoseEstimate};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};

pub const CONFIDENCE: f64 = 0.999;
const MAX_REFITS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    /// Inlier threshold on reprojection error, pixels.
    pub threshold_px: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Polish every consensus refit with Levenberg-Marquardt on the reprojection error.
    pub refine: bool,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold_px: 3.0,
            max_iters: 1000,
            seed: 0,
            refine: true,
        }
    }
}

fn consensus(pose: &Pose, gc: &[GeometricCorrespondence], k: &CameraIntrinsics, th: f64) -> Vec<usize> {
    gc.iter()
        .enumerate()
        .filter(|(_, c)| reprojection_error(pose, c, k).is_some_and(|e| e < th))
        .map(|(i, _)| i)
        .collect()
}

fn required_iterations(inliers: usize, n: usize) -> usize {
    let w = inliers as f64 / n as f64;
    let p_good = w.powi(MIN_POINTS as i32);
    if p_good >= 1.0 {
        return 0;
    }
    if p_good <= 0.0 {
        return usize::MAX;
    }
    let it = (1.0 - CONFIDENCE).ln() / (1.0 - p_good).ln();
    if it.is_finite() {
        it.ceil() as usize
    } else {
        usize::MAX
    }
}

/// Seeded minimal-sample RANSAC around [`epnp`] with an adaptive stopping
/// rule, followed by refits on the consensus set until it stops changing.
pub fn ransac_pnp(
    gc: &[GeometricCorrespondence],
    k: &CameraIntrinsics,
    params: &RansacParams,
) -> Result<PoseEstimate> {
    let start = Instant::now();
    let n = gc.len();
    if n < MIN_POINTS {
        return Err(Error::TooFewPoints {
            needed: MIN_POINTS,
            got: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Vec<usize> = Vec::new();
    let mut needed = params.max_iters;
    let mut iter = 0;
    let mut subset = Vec::with_capacity(MIN_POINTS);
    while iter < needed.min(params.max_iters) {
        iter += 1;
        subset.clear();
        subset.extend(sample(&mut rng, n, MIN_POINTS).into_iter().map(|i| gc[i]));
        let Ok(pose) = epnp(&subset, k) else {
            continue;
        };
        let inl = consensus(&pose, gc, k, params.threshold_px);
        if inl.len() > best.len() {
            best = inl;
            needed = required_iterations(best.len(), n);
        }
    }
    if best.len() < MIN_POINTS {
        return Err(Error::NoConsensus(best.len()));
    }

    let mut pose = None;
    for _ in 0..MAX_REFITS {
        let set: Vec<GeometricCorrespondence> = best.iter().map(|&i| gc[i]).collect();
        let Ok(mut p) = epnp(&set, k) else {
            break;
        };
        if params.refine {
            p = refine_pose(&p, &set, k);
        }
        let inl = consensus(&p, gc, k, params.threshold_px);
        if inl.len() < best.len() && pose.is_some() {
            break;
        }
        let stable = inl == best;
        pose = Some(p);
        if inl.len() >= MIN_POINTS {
            best = inl;
        }
        if stable {
            break;
        }
    }
    let pose = pose.ok_or(Error::DegenerateConfiguration)?;
    if best.len() < MIN_POINTS {
        return Err(Error::NoConsensus(best.len()));
    }
    let sq: f64 = best
        .iter()
        .map(|&i| reprojection_error(&pose, &gc[i], k).unwrap_or(f64::INFINITY).powi(2))
        .sum();
    Ok(PoseEstimate {
        pose,
        inliers: best.len(),
        inlier_indices: best.clone(),
        reprojection_rmse: (sq / best.len() as f64).sqrt(),
        template_id: None,
        iterations: iter,
        elapsed: start.elapsed().as_secs_f64(),
        stats: Default::default(),
    })
}
