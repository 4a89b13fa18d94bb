use std::io::Write;

use super::cluster_match::ClusterMatch;
use super::cosine;
use super::kmeans::ClusterAssignment;
use crate::geometry::Vec2;
use crate::hyperfeatures::HyperfeatureMap;

/// One feature-grid match. Positions are `(y, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub q_pos: (usize, usize),
    pub t_pos: (usize, usize),
    pub similarity: f64,
    pub q_refined: (f64, f64),
    pub t_refined: (f64, f64),
    /// Index into [`ClusterMatch::pairs`]; `usize::MAX` for unclustered matching.
    pub cluster_pair: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub matches: Vec<Correspondence>,
    /// Pairwise feature similarities evaluated to produce `matches`.
    pub similarity_evaluations: usize,
}

impl CorrespondenceSet {
    /// Line-oriented dump: `q_y q_x t_y t_x sim q_ry q_rx t_ry t_rx pair_id`.
    pub fn write_text(&self, mut w: impl Write) -> std::io::Result<()> {
        for m in &self.matches {
            let pair = if m.cluster_pair == usize::MAX {
                -1
            } else {
                m.cluster_pair as i64
            };
            writeln!(
                w,
                "{} {} {} {} {:.6} {:.6} {:.6} {:.6} {:.6} {}",
                m.q_pos.0,
                m.q_pos.1,
                m.t_pos.0,
                m.t_pos.1,
                m.similarity,
                m.q_refined.0,
                m.q_refined.1,
                m.t_refined.0,
                m.t_refined.1,
                pair
            )?;
        }
        Ok(())
    }
}

/// Mutual nearest neighbors between two position lists, best `top_k` kept
/// (descending similarity, ties by query then template order).
fn mutual_matches(
    qh: &HyperfeatureMap,
    th: &HyperfeatureMap,
    qs: &[(usize, usize)],
    ts: &[(usize, usize)],
    top_k: usize,
    cluster_pair: usize,
    out: &mut CorrespondenceSet,
) {
    if qs.is_empty() || ts.is_empty() {
        return;
    }
    let mut sim = vec![0.0; qs.len() * ts.len()];
    for (i, &(qy, qx)) in qs.iter().enumerate() {
        let a = qh.vector(qy, qx);
        for (j, &(ty, tx)) in ts.iter().enumerate() {
            sim[i * ts.len() + j] = cosine(a, th.vector(ty, tx));
        }
    }
    out.similarity_evaluations += sim.len();
    let argmax = |it: &mut dyn Iterator<Item = (usize, f64)>| {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for (i, s) in it {
            if s > best.1 {
                best = (i, s);
            }
        }
        best.0
    };
    let best_t: Vec<usize> = (0..qs.len())
        .map(|i| argmax(&mut (0..ts.len()).map(|j| (j, sim[i * ts.len() + j]))))
        .collect();
    let best_q: Vec<usize> = (0..ts.len())
        .map(|j| argmax(&mut (0..qs.len()).map(|i| (i, sim[i * ts.len() + j]))))
        .collect();
    let mut found: Vec<(f64, usize, usize)> = best_t
        .iter()
        .enumerate()
        .filter(|&(i, &j)| best_q[j] == i)
        .map(|(i, &j)| (sim[i * ts.len() + j], i, j))
        .collect();
    found.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (s, i, j) in found.into_iter().take(top_k) {
        out.matches.push(Correspondence {
            q_pos: qs[i],
            t_pos: ts[j],
            similarity: s,
            q_refined: (qs[i].0 as f64, qs[i].1 as f64),
            t_refined: (ts[j].0 as f64, ts[j].1 as f64),
            cluster_pair,
        });
    }
}

/// Matches features only inside cluster pairs that survived the epipolar check.
///
/// `q_assign` / `t_assign` label the foreground positions of `qh` / `th` in
/// row-major order (see [`HyperfeatureMap::foreground_positions`]).
pub fn match_within_clusters(
    qh: &HyperfeatureMap,
    th: &HyperfeatureMap,
    q_assign: &ClusterAssignment,
    t_assign: &ClusterAssignment,
    cm: &ClusterMatch,
    top_k: usize,
) -> CorrespondenceSet {
    let qpos = qh.foreground_positions();
    let tpos = th.foreground_positions();
    let q_members = q_assign.members();
    let t_members = t_assign.members();
    let mut out = CorrespondenceSet::default();
    for (pair_id, pair) in cm.surviving() {
        let qs: Vec<_> = q_members[pair.query].iter().map(|&i| qpos[i]).collect();
        let ts: Vec<_> = t_members[pair.template].iter().map(|&i| tpos[i]).collect();
        mutual_matches(qh, th, &qs, &ts, top_k, pair_id, &mut out);
    }
    out
}

/// Mutual nearest neighbors over all foreground positions (no clustering).
pub fn match_all(qh: &HyperfeatureMap, th: &HyperfeatureMap, max_matches: usize) -> CorrespondenceSet {
    let mut out = CorrespondenceSet::default();
    mutual_matches(
        qh,
        th,
        &qh.foreground_positions(),
        &th.foreground_positions(),
        max_matches,
        usize::MAX,
        &mut out,
    );
    out
}

/// Mean `(x, y)` grid position of every cluster.
pub fn cluster_mean_positions(h: &HyperfeatureMap, assign: &ClusterAssignment) -> Vec<Vec2> {
    let pos = h.foreground_positions();
    assign
        .members()
        .iter()
        .map(|m| {
            if m.is_empty() {
                return Vec2::zeros();
            }
            let s = m
                .iter()
                .fold(Vec2::zeros(), |a, &i| a + Vec2::new(pos[i].1 as f64, pos[i].0 as f64));
            s / m.len() as f64
        })
        .collect()
}
