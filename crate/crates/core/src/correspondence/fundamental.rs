//! Normalized eight-point fundamental matrix and Sampson distance.

use nalgebra::{DMatrix, Vector3};

use crate::geometry::{Mat3, Vec2};

/// Similarity transform moving the centroid to the origin with mean distance √2.
fn normalizer(pts: &[Vec2]) -> Option<Mat3> {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vec2::zeros(), |a, p| a + p) / n;
    let mean_dist = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    if !(mean_dist > 1e-12) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Mat3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0))
}

/// Least-squares `F` with `tᵀ F q = 0` for at least eight pairs, rank 2 enforced.
pub fn eight_point(q: &[Vec2], t: &[Vec2]) -> Option<Mat3> {
    let n = q.len();
    if n < 8 || t.len() != n {
        return None;
    }
    let tq = normalizer(q)?;
    let tt = normalizer(t)?;
    let rows = n.max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for i in 0..n {
        let x = tq * Vector3::new(q[i].x, q[i].y, 1.0);
        let y = tt * Vector3::new(t[i].x, t[i].y, 1.0);
        let row = [
            y.x * x.x,
            y.x * x.y,
            y.x,
            y.y * x.x,
            y.y * x.y,
            y.y,
            x.x,
            x.y,
            1.0,
        ];
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let smallest = (0..svd.singular_values.len())
        .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))?;
    let f = v_t.row(smallest);
    let f = Mat3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);

    let svd = f.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut s = svd.singular_values;
    let min = (0..3).min_by(|&i, &j| s[i].total_cmp(&s[j]))?;
    s[min] = 0.0;
    let f = u * Mat3::from_diagonal(&s) * v_t;
    let f = tt.transpose() * f * tq;
    let norm = f.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    Some(f / norm)
}

/// Square root of the Sampson error of `(q, t)` under `F` (image units).
pub fn sampson_distance(f: &Mat3, q: &Vec2, t: &Vec2) -> f64 {
    let x = Vector3::new(q.x, q.y, 1.0);
    let y = Vector3::new(t.x, t.y, 1.0);
    let fx = f * x;
    let fty = f.transpose() * y;
    let num = y.dot(&fx);
    let den = fx.x * fx.x + fx.y * fx.y + fty.x * fty.x + fty.y * fty.y;
    if den <= 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num * num / den).sqrt()
}
