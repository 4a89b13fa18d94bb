//! BOP pose-error functions (VSD, MSSD, MSPD), average recall and Acc15.

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Mat3, Pose, SymmetrySet, Vec2, Vec3};
use crate::mesh::TriangleMesh;
use crate::raster::rasterize;
use crate::tensor_store::DepthImage;

/// Misalignment tolerances τ for VSD, as fractions of the object diameter.
pub const VSD_TAU_FRACTIONS: [f64; 10] = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5];
/// Recall thresholds θ for VSD values, and for MSSD as diameter fractions.
pub const THETA_FRACTIONS: [f64; 10] = VSD_TAU_FRACTIONS;
/// MSPD recall thresholds, pixels at 640 px image width (scaled by `width / 640`).
pub const MSPD_STEPS_PX: [f64; 10] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0];
/// Visibility tolerance δ, mm.
pub const VSD_DELTA: f64 = 15.0;
pub const ACC_THRESHOLD_DEG: f64 = 15.0;

/// Geodesic angle between two rotations, degrees.
pub fn rotation_error(rq: &Mat3, rm: &Mat3) -> f64 {
    let c = (((rq.transpose() * rm).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

/// Fraction of rotation pairs closer than 15°; 0 for an empty list.
pub fn acc15(pairs: &[(Mat3, Mat3)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let hits = pairs
        .iter()
        .filter(|(q, m)| rotation_error(q, m) < ACC_THRESHOLD_DEG)
        .count();
    hits as f64 / pairs.len() as f64
}

/// Maximum Symmetry-Aware Surface Distance: `min_s max_m ‖est·m − gt·s·m‖`.
pub fn e_mssd(est: &Pose, gt: &Pose, vertices: &[Vec3], sym: &SymmetrySet) -> f64 {
    let moved: Vec<Vec3> = vertices.iter().map(|v| est.transform_point(v)).collect();
    sym.transforms()
        .iter()
        .map(|s| {
            let gs = gt.compose(s);
            vertices
                .iter()
                .zip(&moved)
                .map(|(v, e)| (e - gs.transform_point(v)).norm())
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

fn pinhole(p: &Vec3, k: &CameraIntrinsics) -> Vec2 {
    Vec2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy)
}

/// Maximum Symmetry-Aware Projection Distance, pixels.
pub fn e_mspd(est: &Pose, gt: &Pose, vertices: &[Vec3], sym: &SymmetrySet, k: &CameraIntrinsics) -> f64 {
    let proj: Vec<Vec2> = vertices
        .iter()
        .map(|v| pinhole(&est.transform_point(v), k))
        .collect();
    sym.transforms()
        .iter()
        .map(|s| {
            let gs = gt.compose(s);
            vertices
                .iter()
                .zip(&proj)
                .map(|(v, e)| (e - pinhole(&gs.transform_point(v), k)).norm())
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

/// VSD errors for several tolerances from one pair of renders.
#[derive(Debug, Clone, PartialEq)]
pub struct VsdSweep {
    pub errors: Vec<f64>,
    /// Neither object is visible; every error is 1.
    pub empty_union: bool,
    /// Visible fraction of the ground-truth render.
    pub visibility_fraction: f64,
}

/// Visible Surface Discrepancy for each `tau` (mm).
///
/// `scene_distance` is the test image's distance map (0 = unknown). A rendered
/// pixel is visible where it is at most `delta` behind the scene surface or
/// the scene has no measurement; pixels visible under the ground truth and
/// covered by the estimate also count as visible for the estimate.
pub fn e_vsd_sweep(
    est: &Pose,
    gt: &Pose,
    mesh: &TriangleMesh,
    k: &CameraIntrinsics,
    scene_distance: &DepthImage,
    taus: &[f64],
    delta: f64,
) -> Result<VsdSweep> {
    let (w, h) = (k.width as usize, k.height as usize);
    if scene_distance.width != w || scene_distance.height != h {
        return Err(Error::DimMismatch(format!(
            "scene distance map is {}×{}, camera is {w}×{h}",
            scene_distance.width, scene_distance.height
        )));
    }
    let d_est = rasterize(mesh, est, k).map(|r| r.distance).unwrap_or_else(|_| DepthImage::zeros(w, h));
    let d_gt = rasterize(mesh, gt, k)?.distance;
    let visible = |model: f64, test: f64| model > 0.0 && (model - test <= delta || test == 0.0);

    let mut union = 0usize;
    let mut gt_rendered = 0usize;
    let mut gt_visible = 0usize;
    let mut diffs = Vec::new();
    for i in 0..w * h {
        let t = scene_distance.data[i];
        let (e, g) = (d_est.data[i], d_gt.data[i]);
        let vg = visible(g, t);
        let ve = visible(e, t) || (vg && e > 0.0);
        gt_rendered += usize::from(g > 0.0);
        gt_visible += usize::from(vg);
        if vg || ve {
            union += 1;
        }
        if vg && ve {
            diffs.push((g - e).abs());
        }
    }
    let visibility_fraction = if gt_rendered == 0 {
        0.0
    } else {
        gt_visible as f64 / gt_rendered as f64
    };
    if union == 0 {
        return Ok(VsdSweep {
            errors: vec![1.0; taus.len()],
            empty_union: true,
            visibility_fraction,
        });
    }
    let complement = union - diffs.len();
    let errors = taus
        .iter()
        .map(|&tau| {
            let costs = diffs.iter().filter(|&&d| d >= tau).count();
            (costs + complement) as f64 / union as f64
        })
        .collect();
    Ok(VsdSweep {
        errors,
        empty_union: false,
        visibility_fraction,
    })
}

/// Single-tolerance VSD; 1.0 when neither render is visible.
pub fn e_vsd(
    est: &Pose,
    gt: &Pose,
    mesh: &TriangleMesh,
    k: &CameraIntrinsics,
    scene_distance: &DepthImage,
    tau: f64,
    delta: f64,
) -> Result<f64> {
    Ok(e_vsd_sweep(est, gt, mesh, k, scene_distance, &[tau], delta)?.errors[0])
}

/// Deterministic farthest-point subsample starting from the first vertex.
pub fn subsample_vertices(vertices: &[Vec3], cap: usize) -> Vec<Vec3> {
    if vertices.len() <= cap || cap == 0 {
        return vertices.to_vec();
    }
    let mut chosen = vec![vertices[0]];
    let mut d: Vec<f64> = vertices.iter().map(|v| (v - vertices[0]).norm_squared()).collect();
    while chosen.len() < cap {
        let (far, _) = d
            .iter()
            .enumerate()
            .fold((0, -1.0), |b, (i, &x)| if x > b.1 { (i, x) } else { b });
        let p = vertices[far];
        chosen.push(p);
        for (di, v) in d.iter_mut().zip(vertices) {
            *di = di.min((v - p).norm_squared());
        }
    }
    chosen
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub scene_id: u32,
    pub image_id: u32,
    pub object_id: u32,
    /// One value per entry of [`VSD_TAU_FRACTIONS`].
    pub e_vsd: Vec<f64>,
    pub e_mssd: f64,
    pub e_mspd: f64,
    pub visibility_fraction: f64,
}

impl ErrorRecord {
    /// A ground-truth instance without an estimate: fails every threshold.
    pub fn missing(scene_id: u32, image_id: u32, object_id: u32) -> Self {
        Self {
            scene_id,
            image_id,
            object_id,
            e_vsd: vec![1.0; VSD_TAU_FRACTIONS.len()],
            e_mssd: f64::INFINITY,
            e_mspd: f64::INFINITY,
            visibility_fraction: 0.0,
        }
    }
}

/// Errors of one estimate against its ground truth, all three metrics.
#[allow(clippy::too_many_arguments)]
pub fn error_record(
    ids: (u32, u32, u32),
    est: &Pose,
    gt: &Pose,
    mesh: &TriangleMesh,
    metric_vertices: &[Vec3],
    sym: &SymmetrySet,
    k: &CameraIntrinsics,
    scene_distance: &DepthImage,
) -> Result<ErrorRecord> {
    let taus: Vec<f64> = VSD_TAU_FRACTIONS.iter().map(|f| f * mesh.diameter).collect();
    let vsd = e_vsd_sweep(est, gt, mesh, k, scene_distance, &taus, VSD_DELTA)?;
    Ok(ErrorRecord {
        scene_id: ids.0,
        image_id: ids.1,
        object_id: ids.2,
        e_vsd: vsd.errors,
        e_mssd: e_mssd(est, gt, metric_vertices, sym),
        e_mspd: e_mspd(est, gt, metric_vertices, sym, k),
        visibility_fraction: vsd.visibility_fraction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    pub ar_vsd: f64,
    pub ar_mssd: f64,
    pub ar_mspd: f64,
    pub ar: f64,
    /// `[τ][θ]` recall.
    pub vsd_recalls: Vec<Vec<f64>>,
    pub mssd_recalls: Vec<f64>,
    pub mspd_recalls: Vec<f64>,
    /// `(θ upper bound as a fraction, AR over thresholds up to it)`; non-decreasing.
    pub ar_curve: Vec<(f64, f64)>,
}

fn hits(errors: impl Iterator<Item = f64>, threshold: f64) -> usize {
    errors.filter(|&e| e < threshold).count()
}

/// BOP average recall. `diameter` maps an object id to its diameter (mm).
pub fn ar_score(
    records: &[ErrorRecord],
    diameter: impl Fn(u32) -> Option<f64>,
    image_width: u32,
) -> Result<RecallReport> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let n = records.len();
    let diam: Vec<f64> = records
        .iter()
        .map(|r| {
            diameter(r.object_id)
                .ok_or_else(|| Error::Config(format!("no diameter for object {}", r.object_id)))
        })
        .collect::<Result<_>>()?;
    for r in records {
        if r.e_vsd.len() != VSD_TAU_FRACTIONS.len() {
            return Err(Error::DimMismatch(format!(
                "record has {} VSD values, expected {}",
                r.e_vsd.len(),
                VSD_TAU_FRACTIONS.len()
            )));
        }
    }
    // hit counts; ratios are formed once so rounding cannot break monotonicity
    let vsd_hits: Vec<Vec<usize>> = (0..VSD_TAU_FRACTIONS.len())
        .map(|t| {
            THETA_FRACTIONS
                .iter()
                .map(|&th| hits(records.iter().map(|r| r.e_vsd[t]), th))
                .collect()
        })
        .collect();
    let mssd_hits: Vec<usize> = THETA_FRACTIONS
        .iter()
        .map(|&f| records.iter().zip(&diam).filter(|(r, d)| r.e_mssd < f * *d).count())
        .collect();
    let r = image_width as f64 / 640.0;
    let mspd_hits: Vec<usize> = MSPD_STEPS_PX
        .iter()
        .map(|&s| hits(records.iter().map(|x| x.e_mspd), s * r))
        .collect();

    let nt = THETA_FRACTIONS.len();
    let ratio = |h: usize, cases: usize| h as f64 / (cases * n) as f64;
    let vsd_upto = |k: usize| {
        let h: usize = vsd_hits.iter().map(|row| row[..k].iter().sum::<usize>()).sum();
        ratio(h, k * vsd_hits.len())
    };
    let ar_vsd = vsd_upto(nt);
    let ar_mssd = ratio(mssd_hits.iter().sum(), nt);
    let ar_mspd = ratio(mspd_hits.iter().sum(), nt);
    let ar_curve = (1..=nt)
        .map(|k| {
            let a = vsd_upto(k)
                + ratio(mssd_hits[..k].iter().sum(), k)
                + ratio(mspd_hits[..k].iter().sum(), k);
            (THETA_FRACTIONS[k - 1], a / 3.0)
        })
        .collect();
    let to_recall = |v: &[usize]| v.iter().map(|&h| ratio(h, 1)).collect::<Vec<f64>>();
    let vsd_recalls = vsd_hits.iter().map(|row| to_recall(row)).collect();
    let mssd_recalls = to_recall(&mssd_hits);
    let mspd_recalls = to_recall(&mspd_hits);
    Ok(RecallReport {
        ar_vsd,
        ar_mssd,
        ar_mspd,
        ar: (ar_vsd + ar_mssd + ar_mspd) / 3.0,
        vsd_recalls,
        mssd_recalls,
        mspd_recalls,
        ar_curve,
    })
}
