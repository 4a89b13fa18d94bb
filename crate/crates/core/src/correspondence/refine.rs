use super::cosine;
use super::matching::CorrespondenceSet;
use crate::hyperfeatures::HyperfeatureMap;

/// Weighted centroid of a `kernel × kernel` window around `(cy, cx)` clipped
/// to the grid. Returns the integer position when every weight is zero.
pub fn weighted_centroid(
    height: usize,
    width: usize,
    center: (usize, usize),
    kernel: usize,
    mut weight: impl FnMut(usize, usize) -> f64,
) -> (f64, f64) {
    let r = kernel / 2;
    let (cy, cx) = center;
    let (mut sw, mut sy, mut sx) = (0.0, 0.0, 0.0);
    for y in cy.saturating_sub(r)..=(cy + r).min(height - 1) {
        for x in cx.saturating_sub(r)..=(cx + r).min(width - 1) {
            let w = weight(y, x).max(0.0);
            sw += w;
            sy += w * y as f64;
            sx += w * x as f64;
        }
    }
    if sw > 0.0 {
        (sy / sw, sx / sw)
    } else {
        (cy as f64, cx as f64)
    }
}

/// Replaces each match's refined coordinates with the similarity-weighted
/// centroid of its neighborhood. Query neighbors are weighted by their cosine
/// similarity to the matched template feature and vice versa; background
/// cells get zero weight.
///
/// # Panics
/// If `kernel` is even.
pub fn subpixel_refine(
    mut cs: CorrespondenceSet,
    qh: &HyperfeatureMap,
    th: &HyperfeatureMap,
    kernel: usize,
) -> CorrespondenceSet {
    assert!(kernel % 2 == 1, "kernel must be odd");
    for m in &mut cs.matches {
        let tv = th.vector(m.t_pos.0, m.t_pos.1);
        m.q_refined = weighted_centroid(qh.height, qh.width, m.q_pos, kernel, |y, x| {
            if qh.mask.get(x, y) {
                cosine(qh.vector(y, x), tv)
            } else {
                0.0
            }
        });
        let qv = qh.vector(m.q_pos.0, m.q_pos.1);
        m.t_refined = weighted_centroid(th.height, th.width, m.t_pos, kernel, |y, x| {
            if th.mask.get(x, y) {
                cosine(th.vector(y, x), qv)
            } else {
                0.0
            }
        });
    }
    cs
}
