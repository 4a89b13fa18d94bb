//! Fully synthetic scene: a distorted tetrahedron rendered from viewsphere
//! templates and random query poses, with NOCS maps standing in for learned
//! features at every layer.
//!
//! Feature grids are 64×64 on a 128 px crop, sampled at cell centers.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{axis_angle, CameraIntrinsics, CropTransform, Mat3, Pose, Vec3};
use crate::mesh::TriangleMesh;
use crate::pose::lift::grid_to_pixel;
use crate::raster::{rasterize, RenderOutput};
use crate::template_match::{QueryCrop, TemplateRecord};
use crate::tensor_store::{DepthImage, FeatureMap, MaskImage, NocsImage};

/// Feature layers of the fixture and their grid size on a 128 px crop.
pub const FIXTURE_LAYERS: [(u32, usize); 4] = [(2, 64), (5, 64), (8, 64), (11, 64)];

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureParams {
    pub seed: u64,
    pub n_templates: usize,
    pub n_queries: usize,
    pub crop_size: u32,
    pub crop_margin: f64,
    pub template_distance: f64,
    pub query_distance: (f64, f64),
    /// Largest in-plane rotation of a query relative to the upright view, degrees.
    pub max_inplane_deg: f64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self {
            seed: 0,
            n_templates: 60,
            n_queries: 20,
            crop_size: 128,
            crop_margin: 0.1,
            template_distance: 500.0,
            query_distance: (450.0, 650.0),
            max_inplane_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticQuery {
    pub crop: QueryCrop,
    pub gt: Pose,
    /// Tight mask bounding box `(x, y, w, h)` in the scene image.
    pub bbox: [f64; 4],
    pub scene: RenderOutput,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub mesh: TriangleMesh,
    pub intrinsics: CameraIntrinsics,
    pub templates: Vec<TemplateRecord>,
    pub queries: Vec<SyntheticQuery>,
}

/// Corners of the fixture tetrahedron (mm).
pub const FIXTURE_CORNERS: [[f64; 3]; 4] = [
    [-40.0, -30.0, -25.0],
    [55.0, -35.0, -20.0],
    [-5.0, 50.0, -30.0],
    [10.0, 5.0, 60.0],
];
/// Outward bulge at a face center as a fraction of the face's longest edge.
pub const FIXTURE_BULGE: f64 = 0.12;
const FIXTURE_SUBDIV: usize = 8;

/// Asymmetric tetrahedron whose faces are subdivided and pushed outward into
/// shallow domes (edges and corners stay put), so no view sees a flat patch.
pub fn fixture_mesh() -> TriangleMesh {
    let c: Vec<Vec3> = FIXTURE_CORNERS.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect();
    let centroid = c.iter().sum::<Vec3>() / 4.0;
    let n = FIXTURE_SUBDIV;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for f in [[0, 2, 1], [0, 1, 3], [1, 2, 3], [2, 0, 3]] {
        let (a, b, d) = (c[f[0]], c[f[1]], c[f[2]]);
        let mut normal = (b - a).cross(&(d - a)).normalize();
        if normal.dot(&(a - centroid)) < 0.0 {
            normal = -normal;
        }
        let edge = (b - a).norm().max((d - b).norm()).max((a - d).norm());
        let mut idx = vec![vec![0usize; n + 1]; n + 1];
        for i in 0..=n {
            for j in 0..=n - i {
                let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
                let w = 1.0 - u - v;
                let bump = 27.0 * u * v * w;
                idx[i][j] = vertices.len();
                vertices.push(a * w + b * u + d * v + normal * (FIXTURE_BULGE * edge * bump));
            }
        }
        for i in 0..n {
            for j in 0..n - i {
                faces.push([idx[i][j], idx[i + 1][j], idx[i][j + 1]]);
                if j + 1 < n - i {
                    faces.push([idx[i + 1][j], idx[i + 1][j + 1], idx[i][j + 1]]);
                }
            }
        }
    }
    TriangleMesh::new(vertices, faces).expect("valid fixture mesh")
}

pub fn scene_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(600.0, 600.0, 319.5, 239.5, 640, 480).expect("valid intrinsics")
}

/// Model-to-camera pose of a camera at `center + distance * dir` looking at
/// `center`, image-up aligned with `up` where possible.
pub fn look_at(dir: &Vec3, distance: f64, center: &Vec3, up: &Vec3) -> Pose {
    let z = -dir.normalize();
    let up = if z.cross(up).norm() < 1e-6 {
        Vec3::new(up.y, up.z, up.x)
    } else {
        *up
    };
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    let r = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let eye = center + dir.normalize() * distance;
    Pose {
        rotation: r,
        translation: -(r * eye),
    }
}

/// `n` near-uniform directions on the unit sphere (Fibonacci lattice).
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

fn mesh_center(mesh: &TriangleMesh) -> Vec3 {
    (mesh.extents_min + mesh.extents_max) / 2.0
}

/// Viewsphere template poses at `distance` from the mesh center.
pub fn viewsphere_poses(mesh: &TriangleMesh, n: usize, distance: f64) -> Vec<Pose> {
    let c = mesh_center(mesh);
    fibonacci_sphere(n)
        .iter()
        .map(|d| look_at(d, distance, &c, &Vec3::z()))
        .collect()
}

/// Tight `(x, y, w, h)` box of a mask.
pub fn mask_bbox(mask: &MaskImage) -> Option<[f64; 4]> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    (x0 != usize::MAX).then(|| {
        [
            x0 as f64,
            y0 as f64,
            (x1 - x0 + 1) as f64,
            (y1 - y0 + 1) as f64,
        ]
    })
}

/// Average of the foreground NOCS values in each `size × size` cell; zero
/// where a cell has no foreground.
pub fn pooled_nocs(nocs: &NocsImage, mask: &MaskImage, layer: u32, size: usize) -> FeatureMap {
    let mut fm = FeatureMap::zeros(layer, 3, size, size);
    for gy in 0..size {
        let ys = gy * nocs.height / size..(gy + 1) * nocs.height / size;
        for gx in 0..size {
            let xs = gx * nocs.width / size..(gx + 1) * nocs.width / size;
            let mut acc = [0.0; 3];
            let mut n = 0usize;
            for y in ys.clone() {
                for x in xs.clone() {
                    if mask.get(x, y) {
                        let v = nocs.get(x, y);
                        for c in 0..3 {
                            acc[c] += v[c];
                        }
                        n += 1;
                    }
                }
            }
            if n > 0 {
                for (c, a) in acc.iter().enumerate() {
                    fm.set(c, gy, gx, (a / n as f64) as f32);
                }
            }
        }
    }
    fm
}

/// NOCS sampled at each cell center from the surrounding foreground pixels,
/// falling back to the cell's foreground mean when none of them is foreground.
pub fn sampled_nocs(nocs: &NocsImage, mask: &MaskImage, layer: u32, size: usize) -> FeatureMap {
    let mut fm = pooled_nocs(nocs, mask, layer, size);
    for gy in 0..size {
        let y = grid_to_pixel(gy as f64, size, nocs.height);
        for gx in 0..size {
            let x = grid_to_pixel(gx as f64, size, nocs.width);
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            let mut acc = [0.0; 3];
            let mut total = 0.0;
            for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                    let (px, py) = (x0 as usize + dx, y0 as usize + dy);
                    if wx * wy <= 0.0 || px >= nocs.width || py >= nocs.height || !mask.get(px, py) {
                        continue;
                    }
                    let v = nocs.get(px, py);
                    for c in 0..3 {
                        acc[c] += wx * wy * v[c];
                    }
                    total += wx * wy;
                }
            }
            if total > 0.0 {
                for (c, a) in acc.iter().enumerate() {
                    fm.set(c, gy, gx, (a / total) as f32);
                }
            }
        }
    }
    fm
}

/// Per-layer features of a crop render.
pub fn nocs_features(render: &RenderOutput) -> BTreeMap<u32, FeatureMap> {
    FIXTURE_LAYERS
        .iter()
        .map(|&(l, s)| (l, sampled_nocs(&render.nocs, &render.mask, l, s)))
        .collect()
}

/// Renders `pose` in the scene camera, crops around the object and renders
/// the crop. Returns the crop transform, crop intrinsics, full render and crop render.
pub fn render_crop(
    mesh: &TriangleMesh,
    pose: &Pose,
    k: &CameraIntrinsics,
    crop_size: u32,
    margin: f64,
) -> Result<(CropTransform, CameraIntrinsics, RenderOutput, RenderOutput, [f64; 4])> {
    let full = rasterize(mesh, pose, k)?;
    let bbox = mask_bbox(&full.mask).ok_or(Error::EmptyMask)?;
    let ct = CropTransform::from_bbox(bbox, margin, crop_size)?;
    let kc = k.cropped(&ct, crop_size, crop_size);
    let crop = rasterize(mesh, pose, &kc)?;
    Ok((ct, kc, full, crop, bbox))
}

/// Template record of one view.
pub fn make_template(
    id: u32,
    mesh: &TriangleMesh,
    pose: &Pose,
    k: &CameraIntrinsics,
    crop_size: u32,
    margin: f64,
) -> Result<TemplateRecord> {
    let (_, kc, _, crop, _) = render_crop(mesh, pose, k, crop_size, margin)?;
    Ok(TemplateRecord {
        template_id: id,
        features: nocs_features(&crop),
        pose: *pose,
        intrinsics: kc,
        depth: Some(crop.depth.clone()),
        nocs: Some(crop.nocs.clone()),
        mask: crop.mask,
    })
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Random query pose: viewpoint anywhere on the sphere, bounded in-plane
/// rotation and a lateral offset that keeps the object inside the image.
pub fn random_query_pose(rng: &mut impl Rng, mesh: &TriangleMesh, p: &FixtureParams, k: &CameraIntrinsics) -> Pose {
    let dir = random_unit(rng);
    let dist = rng.random_range(p.query_distance.0..p.query_distance.1);
    let base = look_at(&dir, dist, &mesh_center(mesh), &Vec3::z());
    let gamma = if p.max_inplane_deg > 0.0 {
        rng.random_range(-p.max_inplane_deg..p.max_inplane_deg).to_radians()
    } else {
        0.0
    };
    let rz = axis_angle(&Vec3::z(), gamma);
    let max_x = 0.5 * dist * k.cx / k.fx;
    let max_y = 0.5 * dist * k.cy / k.fy;
    let shift = Vec3::new(rng.random_range(-max_x..max_x), rng.random_range(-max_y..max_y), 0.0);
    Pose {
        rotation: rz * base.rotation,
        translation: rz * base.translation + shift,
    }
}

pub fn query_crop(
    id: String,
    mesh: &TriangleMesh,
    pose: &Pose,
    k: &CameraIntrinsics,
    crop_size: u32,
    margin: f64,
) -> Result<SyntheticQuery> {
    let (ct, _, full, crop, bbox) = render_crop(mesh, pose, k, crop_size, margin)?;
    Ok(SyntheticQuery {
        crop: QueryCrop {
            crop_id: id,
            features: nocs_features(&crop),
            mask: crop.mask,
            crop_transform: ct,
            scene_intrinsics: *k,
        },
        gt: *pose,
        bbox,
        scene: full,
    })
}

/// Builds the whole synthetic scene for `params`.
pub fn build_scene(params: &FixtureParams) -> Result<SyntheticScene> {
    let mesh = fixture_mesh();
    let k = scene_intrinsics();
    let templates = viewsphere_poses(&mesh, params.n_templates, params.template_distance)
        .iter()
        .enumerate()
        .map(|(i, pose)| make_template(i as u32, &mesh, pose, &k, params.crop_size, params.crop_margin))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut queries = Vec::with_capacity(params.n_queries);
    while queries.len() < params.n_queries {
        let pose = random_query_pose(&mut rng, &mesh, params, &k);
        let q = query_crop(format!("query_{:03}", queries.len()), &mesh, &pose, &k, params.crop_size, params.crop_margin)?;
        // the object must be fully inside the image so the crop sees all of it
        let [x, y, w, h] = q.bbox;
        if x <= 0.0 || y <= 0.0 || x + w >= k.width as f64 || y + h >= k.height as f64 {
            continue;
        }
        queries.push(q);
    }
    Ok(SyntheticScene {
        mesh,
        intrinsics: k,
        templates,
        queries,
    })
}

/// Distance map of a render, used as the scene measurement for VSD.
pub fn scene_distance(q: &SyntheticQuery) -> &DepthImage {
    &q.scene.distance
}
