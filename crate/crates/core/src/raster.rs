//! Deterministic pinhole z-buffer rasterizer.
//!
//! Pixels are sampled at their integer centers. Shared edges follow the
//! top-left fill rule, depth and object coordinates are interpolated
//! perspective-correctly, and there is no culling or anti-aliasing. Triangles
//! with any vertex at or behind the image plane are dropped (no clipping).

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, Vec2, Vec3, MIN_DEPTH};
use crate::mesh::TriangleMesh;
use crate::tensor_store::{DepthImage, MaskImage, NocsImage};

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// Camera-frame z of the nearest surface (mm), 0 where uncovered.
    pub depth: DepthImage,
    /// Euclidean distance from the camera center (mm), 0 where uncovered.
    pub distance: DepthImage,
    pub nocs: NocsImage,
    pub mask: MaskImage,
}

#[inline]
fn edge(a: &Vec2, b: &Vec2, p: &Vec2) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// For a triangle with positive [`edge`] area in y-down image coordinates.
#[inline]
fn is_top_left(a: &Vec2, b: &Vec2) -> bool {
    let d = b - a;
    (d.y == 0.0 && d.x > 0.0) || d.y < 0.0
}

#[inline]
fn covers(w: f64, top_left: bool) -> bool {
    w > 0.0 || (w == 0.0 && top_left)
}

pub fn rasterize(mesh: &TriangleMesh, pose: &Pose, k: &CameraIntrinsics) -> Result<RenderOutput> {
    let (width, height) = (k.width as usize, k.height as usize);
    let cam: Vec<Vec3> = mesh.vertices.iter().map(|v| pose.transform_point(v)).collect();
    if cam.iter().all(|p| p.z <= MIN_DEPTH) {
        return Err(Error::BehindCamera);
    }

    let mut zbuf = vec![f64::INFINITY; width * height];
    let mut model_at = vec![Vec3::zeros(); width * height];

    for tri in &mesh.triangles {
        let mut idx = *tri;
        if idx.iter().any(|&i| cam[i].z <= MIN_DEPTH) {
            continue;
        }
        let mut scr: [Vec2; 3] = idx.map(|i| k.project_camera_point(&cam[i]).unwrap());
        let mut area = edge(&scr[0], &scr[1], &scr[2]);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        if area < 0.0 {
            idx.swap(1, 2);
            scr.swap(1, 2);
            area = -area;
        }
        let inv_z = idx.map(|i| 1.0 / cam[i].z);
        let model = idx.map(|i| mesh.vertices[i]);
        let tl = [
            is_top_left(&scr[1], &scr[2]),
            is_top_left(&scr[2], &scr[0]),
            is_top_left(&scr[0], &scr[1]),
        ];

        let min = scr[0].inf(&scr[1]).inf(&scr[2]);
        let max = scr[0].sup(&scr[1]).sup(&scr[2]);
        if max.x < 0.0 || max.y < 0.0 || min.x > (width - 1) as f64 || min.y > (height - 1) as f64
        {
            continue;
        }
        let x0 = min.x.ceil().max(0.0) as usize;
        let y0 = min.y.ceil().max(0.0) as usize;
        let x1 = (max.x.floor() as usize).min(width - 1);
        let y1 = (max.y.floor() as usize).min(height - 1);

        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = Vec2::new(x as f64, y as f64);
                let w0 = edge(&scr[1], &scr[2], &p);
                let w1 = edge(&scr[2], &scr[0], &p);
                let w2 = edge(&scr[0], &scr[1], &p);
                if !(covers(w0, tl[0]) && covers(w1, tl[1]) && covers(w2, tl[2])) {
                    continue;
                }
                let b = [w0 / area, w1 / area, w2 / area];
                let recip = b[0] * inv_z[0] + b[1] * inv_z[1] + b[2] * inv_z[2];
                let z = 1.0 / recip;
                let i = y * width + x;
                if z < zbuf[i] {
                    zbuf[i] = z;
                    model_at[i] = (model[0] * (b[0] * inv_z[0])
                        + model[1] * (b[1] * inv_z[1])
                        + model[2] * (b[2] * inv_z[2]))
                        * z;
                }
            }
        }
    }

    let mut depth = DepthImage::zeros(width, height);
    let mut distance = DepthImage::zeros(width, height);
    let mut nocs = NocsImage::zeros(width, height);
    let mut mask = MaskImage::filled(width, height, false);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let z = zbuf[i];
            if z.is_finite() {
                depth.data[i] = z;
                distance.data[i] = z * k.ray(x as f64, y as f64).norm();
                nocs.data[i] = mesh.to_nocs(&model_at[i]);
                mask.data[i] = true;
            }
        }
    }
    Ok(RenderOutput {
        depth,
        distance,
        nocs,
        mask,
    })
}

/// Converts a depth map to a distance map: `depth(u,v) · ‖((u−cx)/fx, (v−cy)/fy, 1)‖`.
pub fn depth_to_distance(depth: &DepthImage, k: &CameraIntrinsics) -> DepthImage {
    let mut out = DepthImage::zeros(depth.width, depth.height);
    for y in 0..depth.height {
        for x in 0..depth.width {
            let d = depth.get(x, y);
            if d > 0.0 {
                out.data[y * depth.width + x] = d * k.ray(x as f64, y as f64).norm();
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::axis_angle;

    fn cam(w: u32, h: u32) -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap()
    }

    pub(crate) fn cube(half: f64) -> TriangleMesh {
        let mut v = Vec::new();
        for i in 0..8 {
            v.push(Vec3::new(
                if i & 1 == 0 { -half } else { half },
                if i & 2 == 0 { -half } else { half },
                if i & 4 == 0 { -half } else { half },
            ));
        }
        let quads = [
            [0, 1, 3, 2],
            [4, 6, 7, 5],
            [0, 4, 5, 1],
            [2, 3, 7, 6],
            [0, 2, 6, 4],
            [1, 5, 7, 3],
        ];
        let mut t = Vec::new();
        for q in quads {
            t.push([q[0], q[1], q[2]]);
            t.push([q[0], q[2], q[3]]);
        }
        TriangleMesh::new(v, t).unwrap()
    }

    fn plane(z: f64, half: f64) -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vec3::new(-half, -half, z),
                Vec3::new(half, -half, z),
                Vec3::new(half, half, z),
                Vec3::new(-half, half, z),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn fronto_parallel_triangle() {
        let mesh = TriangleMesh::new(
            vec![
                Vec3::new(-5000.0, -5000.0, 1000.0),
                Vec3::new(5000.0, -5000.0, 1000.0),
                Vec3::new(0.0, 5000.0, 1000.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let out = rasterize(&mesh, &Pose::identity(), &cam(64, 48)).unwrap();
        assert!(out.mask.count() > 0);
        for (d, m) in out.depth.data.iter().zip(&out.mask.data) {
            if *m {
                assert!((d - 1000.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn z_buffer_keeps_nearest() {
        let near = plane(500.0, 100.0);
        let far = plane(800.0, 100.0);
        let mut v = far.vertices.clone();
        v.extend(near.vertices.iter().copied());
        let t = vec![[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]];
        let mesh = TriangleMesh::new(v, t).unwrap();
        let out = rasterize(&mesh, &Pose::identity(), &cam(64, 48)).unwrap();
        let k = cam(64, 48);
        // the near plane spans ±100 mm at 500 mm: ±100 px, i.e. the whole image
        assert_eq!(out.mask.count(), 64 * 48);
        assert!(out.depth.data.iter().all(|&d| (d - 500.0).abs() < 1e-9));
        let c = out.distance.get(0, 0);
        assert!((c - 500.0 * k.ray(0.0, 0.0).norm()).abs() < 1e-9);
    }

    #[test]
    fn shared_edge_covered_exactly_once() {
        let quad = plane(400.0, 20.0);
        let k = cam(128, 96);
        let mut hits = vec![0u32; 128 * 96];
        for t in &quad.triangles {
            let single = TriangleMesh::new(quad.vertices.clone(), vec![*t]).unwrap();
            let out = rasterize(&single, &Pose::identity(), &k).unwrap();
            for (h, m) in hits.iter_mut().zip(&out.mask.data) {
                *h += *m as u32;
            }
        }
        let full = rasterize(&quad, &Pose::identity(), &k).unwrap();
        for (h, m) in hits.iter().zip(&full.mask.data) {
            assert!(*h <= 1);
            assert_eq!(*h == 1, *m);
        }
        // corners land on pixel centers; left/top edges are owned, right/bottom are not
        assert_eq!(full.mask.count(), 50 * 50);
    }

    fn cube_pose() -> Pose {
        let r = axis_angle(&Vec3::new(0.3, 1.0, 0.2), 0.6);
        Pose::new(r, Vec3::new(10.0, -5.0, 400.0)).unwrap()
    }

    /// Nearest ray/face hit of an axis-aligned cube, computed independently of the rasterizer.
    fn ray_cube(pose: &Pose, half: f64, ray: &Vec3) -> Option<f64> {
        let inv = pose.inverse();
        let origin = inv.translation;
        let dir = inv.rotation * ray;
        let mut best: Option<f64> = None;
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                if dir[axis].abs() < 1e-15 {
                    continue;
                }
                let s = (sign * half - origin[axis]) / dir[axis];
                if s <= 0.0 {
                    continue;
                }
                let hit = origin + dir * s;
                if (0..3).all(|a| a == axis || hit[a].abs() <= half + 1e-12) {
                    best = Some(best.map_or(s, |b: f64| b.min(s)));
                }
            }
        }
        // `ray` has unit z, so the ray parameter is the camera depth
        best
    }

    #[test]
    fn cube_depth_matches_analytic_planes() {
        let k = cam(160, 120);
        let half = 30.0;
        let mesh = cube(half);
        let pose = cube_pose();
        let out = rasterize(&mesh, &pose, &k).unwrap();
        let mut checked = 0;
        for y in 0..120 {
            for x in 0..160 {
                let d = out.depth.get(x, y);
                if d == 0.0 {
                    continue;
                }
                if let Some(expected) = ray_cube(&pose, half, &k.ray(x as f64, y as f64)) {
                    assert!((d - expected).abs() < 1e-3, "({x},{y}) {d} vs {expected}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn backprojection_lies_on_surface() {
        let k = cam(160, 120);
        let half = 30.0;
        let mesh = cube(half);
        let pose = cube_pose();
        let out = rasterize(&mesh, &pose, &k).unwrap();
        let inv = pose.inverse();
        for y in 0..120 {
            for x in 0..160 {
                let d = out.depth.get(x, y);
                if d == 0.0 {
                    continue;
                }
                let m = inv.transform_point(&k.backproject(x as f64, y as f64, d));
                let bound = 0.5 * (mesh.diameter / 160.0) * d / k.fx;
                let off = (m.abs().max() - half).abs();
                assert!(off <= bound, "{off} > {bound}");
                assert!(out.distance.get(x, y) >= d);
            }
        }
    }

    #[test]
    fn nocs_decodes_to_surface_points() {
        let k = cam(160, 120);
        let mesh = cube(30.0);
        let pose = cube_pose();
        let out = rasterize(&mesh, &pose, &k).unwrap();
        for i in 0..out.mask.data.len() {
            if !out.mask.data[i] {
                continue;
            }
            let (x, y) = (i % 160, i / 160);
            let n = out.nocs.data[i];
            assert!(n.iter().all(|c| (-1e-9..=1.0 + 1e-9).contains(c)));
            let m = mesh.from_nocs(n);
            let c = pose.transform_point(&m);
            assert!((c.z - out.depth.data[i]).abs() < 1e-6);
            let q = k.project_camera_point(&c).unwrap();
            assert!((q - Vec2::new(x as f64, y as f64)).norm() < 1e-6);
            // 8-bit quantization round trip
            let quant = n.map(|c| (c * 255.0).round() / 255.0);
            let re = mesh.to_nocs(&mesh.from_nocs(quant));
            for a in 0..3 {
                assert!((re[a] - n[a]).abs() <= 1.0 / 255.0);
            }
        }
        assert_eq!(out.mask, out.depth.mask());
    }

    #[test]
    fn behind_camera() {
        let mesh = cube(10.0);
        let pose = Pose::from_translation(Vec3::new(0.0, 0.0, -100.0));
        assert!(matches!(rasterize(&mesh, &pose, &cam(32, 32)), Err(Error::BehindCamera)));
    }

    #[test]
    fn distance_conversion() {
        let k = CameraIntrinsics::new(100.0, 100.0, 2.0, 2.0, 5, 5).unwrap();
        let mut d = DepthImage::zeros(5, 5);
        d.data[2 * 5 + 2] = 100.0;
        let out = depth_to_distance(&d, &k);
        assert_eq!(out.get(2, 2), 100.0);
        assert_eq!(out.get(0, 0), 0.0);
        let k2 = CameraIntrinsics::new(2.0, 2.0, 2.0, 2.0, 5, 5).unwrap();
        let mut d2 = DepthImage::zeros(5, 5);
        d2.data[2 * 5 + 4] = 100.0;
        let out2 = depth_to_distance(&d2, &k2);
        assert!((out2.get(4, 2) - 141.42135623730951).abs() < 1e-9);
    }
}
