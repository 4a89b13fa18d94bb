use std::time::Instant;

use super::lift::lift;
use super::ransac::{ransac_pnp, RansacParams};
use super::PoseEstimate;
use crate::correspondence::{
    cluster_mean_positions, kmeans, match_all, match_clusters, match_within_clusters, ransac_filter,
    subpixel_refine, ClusterMatch, CorrespondenceSet, EpipolarCheck,
};
use crate::error::{Error, Result};
use crate::hyperfeatures::{assemble, HyperfeatureMap};
use crate::mesh::TriangleMesh;
use crate::pipeline::config::PipelineConfig;
use crate::template_match::{match_template, QueryCrop, TemplateRecord};

/// Per-stage counters of one pose estimate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageStats {
    pub template_score: f64,
    pub query_clusters: usize,
    pub template_clusters: usize,
    pub cluster_pairs: usize,
    pub surviving_pairs: usize,
    pub matches: usize,
    pub similarity_evaluations: usize,
    pub lifted: usize,
}

/// Both images are clustered with the same seed, so identical inputs get identical partitions.
pub(crate) const STAGE_KMEANS: u64 = 1;
pub(crate) const STAGE_EPIPOLAR: u64 = 2;
pub(crate) const STAGE_PNP: u64 = 3;

/// SplitMix64 of the pipeline seed and a stage index.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    let mut z = seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn vectors(h: &HyperfeatureMap) -> Vec<Vec<f64>> {
    h.foreground_positions()
        .into_iter()
        .map(|(y, x)| h.vector(y, x).to_vec())
        .collect()
}

/// Feature matches between two hyperfeature maps according to `cfg`.
pub fn correspond(
    qh: &HyperfeatureMap,
    th: &HyperfeatureMap,
    cfg: &PipelineConfig,
    stats: &mut StageStats,
) -> Result<CorrespondenceSet> {
    let cs = if cfg.clustering {
        let qv = vectors(qh);
        let tv = vectors(th);
        if qv.is_empty() || tv.is_empty() {
            return Err(Error::EmptyMask);
        }
        let qa = kmeans(&qv, cfg.clusters.min(qv.len()), stage_seed(cfg.seed, STAGE_KMEANS))?;
        let ta = kmeans(&tv, cfg.clusters.min(tv.len()), stage_seed(cfg.seed, STAGE_KMEANS))?;
        let mut cm: ClusterMatch = match_clusters(&qa, &ta, cfg.cluster_sim_floor);
        if cfg.epipolar_filter {
            let params = EpipolarCheck {
                iterations: cfg.epipolar_iters,
                threshold: cfg.sampson_thresh,
                seed: stage_seed(cfg.seed, STAGE_EPIPOLAR),
            };
            cm = ransac_filter(
                &cm,
                &cluster_mean_positions(qh, &qa),
                &cluster_mean_positions(th, &ta),
                &params,
            );
        }
        stats.query_clusters = qa.k;
        stats.template_clusters = ta.k;
        stats.cluster_pairs = cm.pairs.len();
        stats.surviving_pairs = cm.surviving().count();
        match_within_clusters(qh, th, &qa, &ta, &cm, cfg.top_k)
    } else {
        match_all(qh, th, usize::MAX)
    };
    let cs = if cfg.subpixel {
        subpixel_refine(cs, qh, th, cfg.kernel)
    } else {
        cs
    };
    stats.matches = cs.matches.len();
    stats.similarity_evaluations = cs.similarity_evaluations;
    Ok(cs)
}

/// Retrieval, hyperfeature assembly, matching, lifting and RANSAC-EPnP for
/// one query crop. All randomness is derived from `cfg.seed`.
pub fn estimate_pose(
    query: &QueryCrop,
    templates: &[TemplateRecord],
    mesh: &TriangleMesh,
    cfg: &PipelineConfig,
) -> Result<PoseEstimate> {
    let start = Instant::now();
    if query.mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let retrieved = match_template(query, templates, cfg.match_layer)?;
    let template = templates
        .iter()
        .find(|t| t.template_id == retrieved.template_id)
        .ok_or(Error::NoTemplates)?;
    let mut stats = StageStats {
        template_score: retrieved.score,
        ..StageStats::default()
    };
    let (qh, th) = assemble(query, template, &cfg.layers, cfg.pca_dim, cfg.projection_mode())?;
    let cs = correspond(&qh, &th, cfg, &mut stats)?;
    let gc = lift(&cs, template, mesh, query, (qh.height, qh.width), cfg.lift_lookup)?;
    stats.lifted = gc.len();
    let params = RansacParams {
        threshold_px: cfg.ransac_px,
        max_iters: cfg.pnp_iters,
        seed: stage_seed(cfg.seed, STAGE_PNP),
        refine: cfg.pnp_refine,
    };
    let mut est = ransac_pnp(&gc, &query.scene_intrinsics, &params)?;
    est.template_id = Some(template.template_id);
    est.stats = stats;
    est.elapsed = start.elapsed().as_secs_f64();
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_seeds_differ_and_are_stable() {
        let s: Vec<u64> = (1..=3).map(|k| stage_seed(0, k)).collect();
        for i in 0..3 {
            for j in i + 1..3 {
                assert_ne!(s[i], s[j]);
            }
        }
        assert_eq!(stage_seed(7, 2), stage_seed(7, 2));
        assert_ne!(stage_seed(7, 2), stage_seed(8, 2));
    }
}
