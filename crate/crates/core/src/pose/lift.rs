use super::GeometricCorrespondence;
use crate::correspondence::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::mesh::TriangleMesh;
use crate::template_match::{QueryCrop, TemplateRecord};

/// Model points further than this fraction of the extents outside the mesh
/// box are dropped.
pub const EXTENT_TOLERANCE: f64 = 0.01;

/// Crop pixel of a (fractional) grid coordinate on a grid of `cells` cells
/// covering `pixels` pixels.
pub fn grid_to_pixel(g: f64, cells: usize, pixels: usize) -> f64 {
    let stride = pixels as f64 / cells as f64;
    g * stride + (stride - 1.0) / 2.0
}

/// How template maps are sampled at a fractional pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MapLookup {
    /// Value of the nearest pixel.
    Nearest,
    /// Bilinear blend of the surrounding foreground pixels.
    #[default]
    Bilinear,
}

impl std::str::FromStr for MapLookup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Self::Nearest),
            "bilinear" => Ok(Self::Bilinear),
            _ => Err(Error::Config(format!("unknown lookup {s:?}"))),
        }
    }
}

impl std::fmt::Display for MapLookup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Nearest => "nearest",
            Self::Bilinear => "bilinear",
        })
    }
}

fn nearest(v: f64, len: usize) -> Option<usize> {
    let r = v.round();
    (r >= 0.0 && r < len as f64).then_some(r as usize)
}

/// Samples `value` at `(x, y)`; only pixels where `valid` holds contribute.
fn sample<const N: usize>(
    lookup: MapLookup,
    x: f64,
    y: f64,
    (w, h): (usize, usize),
    valid: impl Fn(usize, usize) -> bool,
    value: impl Fn(usize, usize) -> [f64; N],
) -> Option<[f64; N]> {
    let (nx, ny) = (nearest(x, w)?, nearest(y, h)?);
    if !valid(nx, ny) {
        return None;
    }
    if lookup == MapLookup::Nearest {
        return Some(value(nx, ny));
    }
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let mut acc = [0.0; N];
    let mut total = 0.0;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let (px, py) = (x0 as i64 + dx, y0 as i64 + dy);
            let wgt = wx * wy;
            if wgt <= 0.0 || px < 0 || py < 0 || px >= w as i64 || py >= h as i64 {
                continue;
            }
            let (px, py) = (px as usize, py as usize);
            if !valid(px, py) {
                continue;
            }
            let v = value(px, py);
            for (a, b) in acc.iter_mut().zip(v) {
                *a += wgt * b;
            }
            total += wgt;
        }
    }
    if total <= 0.0 {
        return Some(value(nx, ny));
    }
    Some(acc.map(|a| a / total))
}

/// Turns grid matches into 2D-3D correspondences.
///
/// Template side: refined grid position → template crop pixel → sample of
/// the template's NOCS map (or, without one, its depth map back-projected and
/// moved into the model frame). Query side: refined grid position → query
/// crop pixel → source image pixel. `grid` is the `(height, width)` of the
/// hyperfeature maps the matches were made on. Matches whose nearest template
/// or query crop pixel is background are dropped.
pub fn lift(
    cs: &CorrespondenceSet,
    template: &TemplateRecord,
    mesh: &TriangleMesh,
    query: &QueryCrop,
    grid: (usize, usize),
    lookup: MapLookup,
) -> Result<Vec<GeometricCorrespondence>> {
    if template.nocs.is_none() && template.depth.is_none() {
        return Err(Error::Config(format!(
            "template {} has neither a NOCS nor a depth map",
            template.template_id
        )));
    }
    let (gh, gw) = grid;
    let (tw, th) = (template.mask.width, template.mask.height);
    let to_model = template.pose.inverse();
    let mut out = Vec::with_capacity(cs.matches.len());
    for m in &cs.matches {
        let tx = grid_to_pixel(m.t_refined.1, gw, tw);
        let ty = grid_to_pixel(m.t_refined.0, gh, th);
        let model = if let Some(nocs) = &template.nocs {
            let Some(n) = sample(lookup, tx, ty, (tw, th), |x, y| template.mask.get(x, y), |x, y| nocs.get(x, y)) else {
                continue;
            };
            mesh.from_nocs(n)
        } else {
            let depth = template.depth.as_ref().expect("checked above");
            let valid = |x, y| template.mask.get(x, y) && depth.get(x, y) > 0.0;
            let Some([d]) = sample(lookup, tx, ty, (tw, th), valid, |x, y| [depth.get(x, y)]) else {
                continue;
            };
            let (u, v) = match lookup {
                MapLookup::Nearest => (tx.round(), ty.round()),
                MapLookup::Bilinear => (tx, ty),
            };
            to_model.transform_point(&template.intrinsics.backproject(u, v, d))
        };
        if !mesh.within_extents(&model, EXTENT_TOLERANCE) {
            continue;
        }
        let qx = grid_to_pixel(m.q_refined.1, gw, query.mask.width);
        let qy = grid_to_pixel(m.q_refined.0, gh, query.mask.height);
        let on_query = nearest(qx, query.mask.width)
            .zip(nearest(qy, query.mask.height))
            .is_some_and(|(x, y)| query.mask.get(x, y));
        if !on_query {
            continue;
        }
        out.push(GeometricCorrespondence {
            image_point: query.crop_transform.crop_to_source(&Vec2::new(qx, qy)),
            model_point: model,
            weight: ((1.0 + m.similarity) / 2.0).max(1e-6),
        });
    }
    if out.is_empty() {
        return Err(Error::NoValidCorrespondences);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::Correspondence;
    use crate::geometry::{CameraIntrinsics, CropTransform, Pose, Vec3};
    use crate::raster::rasterize;
    use crate::tensor_store::{DepthImage, MaskImage, NocsImage};
    use std::collections::BTreeMap;

    fn cube(e: f64) -> TriangleMesh {
        let v = (0..8)
            .map(|i| {
                Vec3::new(
                    if i & 1 == 0 { -e } else { e },
                    if i & 2 == 0 { -e } else { e },
                    if i & 4 == 0 { -e } else { e },
                )
            })
            .collect();
        let f = vec![
            [0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6], [0, 1, 4], [1, 5, 4],
            [2, 6, 3], [3, 6, 7], [0, 4, 2], [2, 4, 6], [1, 3, 5], [3, 7, 5],
        ];
        TriangleMesh::new(v, f).unwrap()
    }

    fn template(nocs: Option<NocsImage>, depth: Option<DepthImage>, mask: MaskImage, pose: Pose, k: CameraIntrinsics) -> TemplateRecord {
        TemplateRecord {
            template_id: 0,
            features: BTreeMap::new(),
            pose,
            intrinsics: k,
            depth,
            nocs,
            mask,
        }
    }

    fn query(w: usize, h: usize) -> QueryCrop {
        QueryCrop {
            crop_id: "q".into(),
            features: BTreeMap::new(),
            mask: MaskImage::filled(w, h, true),
            crop_transform: CropTransform::new(0.5, 100.0, 50.0).unwrap(),
            scene_intrinsics: CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap(),
        }
    }

    fn one(q: (f64, f64), t: (f64, f64)) -> CorrespondenceSet {
        CorrespondenceSet {
            matches: vec![Correspondence {
                q_pos: (q.0 as usize, q.1 as usize),
                t_pos: (t.0 as usize, t.1 as usize),
                similarity: 0.8,
                q_refined: q,
                t_refined: t,
                cluster_pair: 0,
            }],
            similarity_evaluations: 1,
        }
    }

    #[test]
    fn grid_pixel_centers() {
        assert_eq!(grid_to_pixel(0.0, 32, 128), 1.5);
        assert_eq!(grid_to_pixel(1.0, 32, 128), 5.5);
        assert_eq!(grid_to_pixel(3.0, 4, 4), 3.0);
    }

    #[test]
    fn nocs_midpoint_is_origin() {
        let mesh = cube(10.0);
        let mut nocs = NocsImage::zeros(4, 4);
        nocs.data[5] = [0.5, 0.5, 0.5];
        let k = CameraIntrinsics::new(100.0, 100.0, 2.0, 2.0, 4, 4).unwrap();
        let t = template(Some(nocs), None, MaskImage::filled(4, 4, true), Pose::identity(), k);
        let gc = lift(&one((0.0, 0.0), (1.0, 1.0)), &t, &mesh, &query(8, 8), (4, 4), MapLookup::Nearest).unwrap();
        assert!(gc[0].model_point.norm() < 1e-12);
        // query grid (0,0) on a 4×4 grid over 8×8 pixels → crop pixel (0.5, 0.5) → source (101, 51)
        assert_eq!(gc[0].image_point, Vec2::new(101.0, 51.0));
    }

    #[test]
    fn depth_on_optical_axis() {
        let mesh = cube(500.0);
        let mut depth = DepthImage::zeros(5, 5);
        depth.data[2 * 5 + 2] = 300.0;
        let k = CameraIntrinsics::new(100.0, 100.0, 2.0, 2.0, 5, 5).unwrap();
        let t = template(None, Some(depth), MaskImage::filled(5, 5, true), Pose::identity(), k);
        let gc = lift(&one((0.0, 0.0), (2.0, 2.0)), &t, &mesh, &query(5, 5), (5, 5), MapLookup::Nearest).unwrap();
        assert_eq!(gc[0].model_point, Vec3::new(0.0, 0.0, 300.0));
    }

    #[test]
    fn bilinear_blends_foreground_only() {
        let mesh = cube(10.0);
        let mut nocs = NocsImage::zeros(2, 2);
        nocs.data = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [9.0, 9.0, 9.0]];
        let mut mask = MaskImage::filled(2, 2, true);
        mask.data[3] = false;
        let k = CameraIntrinsics::new(100.0, 100.0, 1.0, 1.0, 2, 2).unwrap();
        let t = template(Some(nocs), None, mask, Pose::identity(), k);
        // 1×1 grid over 2×2 pixels: the single cell maps to pixel (0.5, 0.5); background (1,1) is ignored
        let gc = lift(&one((0.0, 0.0), (0.0, 0.0)), &t, &mesh, &query(2, 2), (1, 1), MapLookup::Bilinear);
        // nearest pixel of (0.5, 0.5) rounds to (1, 1), which is background
        assert!(matches!(gc, Err(Error::NoValidCorrespondences)));
        let gc = lift(&one((0.0, 0.0), (-0.1, -0.1)), &t, &mesh, &query(2, 2), (1, 1), MapLookup::Bilinear).unwrap();
        // grid −0.1 → pixel (0.3, 0.3): foreground weights 0.49, 0.21, 0.21, renormalized by 0.91
        let n = mesh.to_nocs(&gc[0].model_point);
        assert!((n[0] - 0.21 / 0.91).abs() < 1e-12 && (n[1] - 0.21 / 0.91).abs() < 1e-12);
    }

    #[test]
    fn background_is_discarded() {
        let mesh = cube(10.0);
        let k = CameraIntrinsics::new(100.0, 100.0, 2.0, 2.0, 4, 4).unwrap();
        let t = template(Some(NocsImage::zeros(4, 4)), None, MaskImage::filled(4, 4, false), Pose::identity(), k);
        assert!(matches!(
            lift(&one((0.0, 0.0), (1.0, 1.0)), &t, &mesh, &query(4, 4), (4, 4), MapLookup::Bilinear),
            Err(Error::NoValidCorrespondences)
        ));
    }

    #[test]
    fn rendered_round_trip_within_quantization() {
        let mesh = cube(20.0);
        let pose = Pose::new(crate::geometry::axis_angle(&Vec3::new(1.0, 1.0, 0.2), 0.6), Vec3::new(0.0, 0.0, 200.0)).unwrap();
        let k = CameraIntrinsics::new(300.0, 300.0, 31.5, 31.5, 64, 64).unwrap();
        let r = rasterize(&mesh, &pose, &k).unwrap();
        let q8 = |n: [f64; 3]| n.map(|c| (c * 255.0).round() / 255.0);
        let nocs = NocsImage {
            width: 64,
            height: 64,
            data: r.nocs.data.iter().map(|&n| q8(n)).collect(),
        };
        let t = template(Some(nocs), None, r.mask.clone(), pose, k);
        let from_depth = template(None, Some(r.depth.clone()), r.mask.clone(), pose, k);
        for p in [Vec3::new(20.0, 3.0, -4.0), Vec3::new(5.0, 20.0, 7.0), Vec3::new(-2.0, -8.0, 20.0)] {
            let c = pose.transform_point(&p);
            let uv = k.project_camera_point(&c).unwrap();
            let (u, v) = (uv.x.round(), uv.y.round());
            if !r.mask.get(u as usize, v as usize) {
                continue;
            }
            let cs = one((v, u), (v, u));
            let want = pose.inverse().transform_point(&k.backproject(u, v, r.depth.get(u as usize, v as usize)));
            let a = lift(&cs, &t, &mesh, &query(64, 64), (64, 64), MapLookup::Nearest).unwrap()[0].model_point;
            let b = lift(&cs, &from_depth, &mesh, &query(64, 64), (64, 64), MapLookup::Bilinear).unwrap()[0].model_point;
            let quant = 40.0 / 255.0;
            assert!((a - want).abs().max() <= quant / 2.0 + 1e-6, "{a} vs {want}");
            assert!((b - want).norm() < 1e-9);
        }
    }
}
