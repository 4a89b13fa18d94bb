use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cosine;
use super::fundamental::{eight_point, sampson_distance};
use super::kmeans::ClusterAssignment;
use crate::geometry::{Mat3, Vec2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterPair {
    pub query: usize,
    pub template: usize,
    pub similarity: f64,
    pub survived_ransac: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterMatch {
    /// In greedy selection order (descending similarity).
    pub pairs: Vec<ClusterPair>,
    /// Set when the epipolar check could not find a model and passed all pairs through.
    pub ransac_degenerate: bool,
}

impl ClusterMatch {
    pub fn surviving(&self) -> impl Iterator<Item = (usize, &ClusterPair)> {
        self.pairs.iter().enumerate().filter(|(_, p)| p.survived_ransac)
    }
}

/// Greedy one-to-one pairing on centroid cosine similarity: repeatedly take
/// the most similar pair whose clusters are both still free, stopping below
/// `floor`. Ties resolve to the lowest `(query, template)` indices.
pub fn match_clusters(q: &ClusterAssignment, t: &ClusterAssignment, floor: f64) -> ClusterMatch {
    let mut cands = Vec::with_capacity(q.k * t.k);
    for (i, qc) in q.centroids.iter().enumerate() {
        for (j, tc) in t.centroids.iter().enumerate() {
            cands.push((cosine(qc, tc), i, j));
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut q_used = vec![false; q.k];
    let mut t_used = vec![false; t.k];
    let mut pairs = Vec::new();
    for (s, i, j) in cands {
        if s < floor {
            break;
        }
        if q_used[i] || t_used[j] {
            continue;
        }
        q_used[i] = true;
        t_used[j] = true;
        pairs.push(ClusterPair {
            query: i,
            template: j,
            similarity: s,
            survived_ransac: true,
        });
    }
    ClusterMatch {
        pairs,
        ransac_degenerate: false,
    }
}

/// RANSAC parameters for the epipolar consistency check between cluster centroids.
#[derive(Debug, Clone, Copy)]
pub struct EpipolarCheck {
    pub iterations: usize,
    /// Sampson distance threshold in grid cells.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for EpipolarCheck {
    fn default() -> Self {
        Self {
            iterations: 500,
            threshold: 2.0,
            seed: 0,
        }
    }
}

fn inliers(f: &Mat3, q: &[Vec2], t: &[Vec2], threshold: f64) -> Vec<bool> {
    q.iter()
        .zip(t)
        .map(|(a, b)| sampson_distance(f, a, b) < threshold)
        .collect()
}

/// Flags cluster pairs whose mean positions (`(x, y)` grid coordinates,
/// indexed by cluster id) are inconsistent with the best fundamental matrix.
///
/// With fewer than eight pairs, or when no model can be fitted, every pair is
/// passed through.
pub fn ransac_filter(
    cm: &ClusterMatch,
    q_centpos: &[Vec2],
    t_centpos: &[Vec2],
    params: &EpipolarCheck,
) -> ClusterMatch {
    let mut out = cm.clone();
    for p in &mut out.pairs {
        p.survived_ransac = true;
    }
    let n = cm.pairs.len();
    if n < 8 {
        return out;
    }
    let q: Vec<Vec2> = cm.pairs.iter().map(|p| q_centpos[p.query]).collect();
    let t: Vec<Vec2> = cm.pairs.iter().map(|p| t_centpos[p.template]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(usize, Vec<bool>)> = None;
    for _ in 0..params.iterations {
        let idx = sample(&mut rng, n, 8).into_vec();
        let qs: Vec<Vec2> = idx.iter().map(|&i| q[i]).collect();
        let ts: Vec<Vec2> = idx.iter().map(|&i| t[i]).collect();
        let Some(f) = eight_point(&qs, &ts) else {
            continue;
        };
        let mask = inliers(&f, &q, &t, params.threshold);
        let count = mask.iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            let all = count == n;
            best = Some((count, mask));
            if all {
                break;
            }
        }
    }
    let Some((count, mut mask)) = best.filter(|(c, _)| *c >= 8) else {
        out.ransac_degenerate = true;
        return out;
    };
    // refit on the consensus and keep the refit only if it does not lose support
    let qs: Vec<Vec2> = (0..n).filter(|&i| mask[i]).map(|i| q[i]).collect();
    let ts: Vec<Vec2> = (0..n).filter(|&i| mask[i]).map(|i| t[i]).collect();
    if let Some(f) = eight_point(&qs, &ts) {
        let refit = inliers(&f, &q, &t, params.threshold);
        if refit.iter().filter(|&&b| b).count() >= count {
            mask = refit;
        }
    }
    for (p, keep) in out.pairs.iter_mut().zip(mask) {
        p.survived_ransac = keep;
    }
    out
}
