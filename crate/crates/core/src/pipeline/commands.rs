//! The batch commands behind the `zspose` binary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use super::bop::{self, GtInstance, ModelInfo, PoseResult, SceneCamera};
use super::config::PipelineConfig;
use super::dataset::{load_mesh, load_query, load_templates, read_detections, Detection, FeatureManifest};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, SymmetrySet, Vec3};
use crate::mesh::{parse_ply, TriangleMesh};
use crate::metrics::{
    ar_score, error_record, rotation_error, subsample_vertices, ErrorRecord, RecallReport, ACC_THRESHOLD_DEG,
};
use crate::pose::estimate_pose;
use crate::raster::{depth_to_distance, rasterize};
use crate::template_match::{match_template, TemplateRecord};
use crate::tensor_store::{read_depth, write_depth, write_mask, write_nocs, DepthImage};

/// Depth units of images written by [`cmd_render`], mm.
pub const RENDER_DEPTH_SCALE: f64 = 0.1;

/// A detection that produced no pose.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryFailure {
    pub crop_id: String,
    pub kind: &'static str,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSummary {
    pub detections: usize,
    pub results: Vec<PoseResult>,
    pub failures: Vec<QueryFailure>,
}

fn failure(crop_id: String, e: &Error) -> QueryFailure {
    QueryFailure {
        crop_id,
        kind: e.kind(),
        reason: e.to_string(),
    }
}

struct ObjectAssets {
    templates: Vec<TemplateRecord>,
    mesh: TriangleMesh,
}

/// Pose estimation over a detections file; writes the results CSV.
///
/// Unreadable detections, manifest, templates or meshes abort the batch.
/// A detection whose own inputs are missing or whose estimate fails is
/// logged and left out of the CSV.
pub fn cmd_pose(
    cfg: &PipelineConfig,
    detections: &Path,
    template_dir: &Path,
    feature_dir: &Path,
    mesh_dir: &Path,
    out_csv: &Path,
) -> Result<PoseSummary> {
    cfg.validate()?;
    let dets = read_detections(detections)?;
    let mut assets = BTreeMap::new();
    let manifest = if dets.is_empty() {
        None
    } else {
        let m = FeatureManifest::read(feature_dir)?;
        m.validate(cfg)?;
        Some(m)
    };
    if let Some(m) = &manifest {
        for obj in dets.iter().map(|d| d.record.object_id) {
            if let std::collections::btree_map::Entry::Vacant(slot) = assets.entry(obj) {
                slot.insert(ObjectAssets {
                    templates: load_templates(template_dir, feature_dir, obj, cfg, m)?,
                    mesh: load_mesh(mesh_dir, obj)?,
                });
            }
        }
    }

    let outcomes: Vec<std::result::Result<PoseResult, QueryFailure>> = dets
        .par_iter()
        .map(|det| {
            let m = manifest.as_ref().expect("manifest read for non-empty detections");
            let a = &assets[&det.record.object_id];
            let q = load_query(det, feature_dir, cfg, m).map_err(|e| failure(det.crop_id(), &e))?;
            let est = estimate_pose(&q, &a.templates, &a.mesh, cfg).map_err(|e| failure(det.crop_id(), &e))?;
            Ok(PoseResult {
                scene_id: det.record.scene_id,
                image_id: det.record.image_id,
                object_id: det.record.object_id,
                score: det.record.score,
                pose: est.pose,
                time: if cfg.record_time { est.elapsed } else { -1.0 },
            })
        })
        .collect();

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(f) => {
                log::warn!("{}: skipped ({}: {})", f.crop_id, f.kind, f.reason);
                failures.push(f);
            }
        }
    }
    bop::write_results_file(&results, out_csv)?;
    Ok(PoseSummary {
        detections: dets.len(),
        results,
        failures,
    })
}

/// Ground truth of one split directory (`<gt>/<scene>/scene_gt.json`, ...).
struct Scene {
    id: u32,
    dir: PathBuf,
    gt: BTreeMap<u32, Vec<GtInstance>>,
    cameras: BTreeMap<u32, SceneCamera>,
}

fn read_scenes(gt_dir: &Path) -> Result<Vec<Scene>> {
    let rd = std::fs::read_dir(gt_dir).map_err(|e| Error::io(gt_dir, e))?;
    let mut scenes = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(gt_dir, e))?;
        let dir = entry.path();
        let Some(id) = dir.file_name().and_then(|n| n.to_str()).and_then(|n| n.parse::<u32>().ok()) else {
            continue;
        };
        if !dir.join("scene_gt.json").is_file() {
            continue;
        }
        scenes.push(Scene {
            id,
            gt: bop::read_scene_gt(dir.join("scene_gt.json"))?,
            cameras: bop::read_scene_camera(dir.join("scene_camera.json"))?,
            dir,
        });
    }
    scenes.sort_by_key(|s| s.id);
    Ok(scenes)
}

impl Scene {
    fn depth_path(&self, im: u32) -> PathBuf {
        self.dir.join("depth").join(format!("{im:06}.png"))
    }

    fn camera(&self, im: u32) -> Result<&SceneCamera> {
        self.cameras
            .get(&im)
            .ok_or_else(|| Error::Parse(format!("scene {}: no camera for image {im}", self.id)))
    }

    /// Intrinsics and, when a depth image exists, the measured distance map.
    fn view(&self, im: u32) -> Result<(CameraIntrinsics, Option<DepthImage>)> {
        let cam = self.camera(im)?;
        let path = self.depth_path(im);
        let depth = path.is_file().then(|| read_depth(&path, cam.depth_scale)).transpose()?;
        let (w, h) = match (&depth, cam.width, cam.height) {
            (_, Some(w), Some(h)) => (w, h),
            (Some(d), _, _) => (d.width as u32, d.height as u32),
            _ => {
                return Err(Error::Parse(format!(
                    "scene {} image {im}: no image size (add width/height or a depth image)",
                    self.id
                )))
            }
        };
        let k = cam.intrinsics(w, h)?;
        Ok((k, depth.map(|d| depth_to_distance(&d, &k))))
    }
}

/// Mesh, metric vertices and symmetries of one object.
struct EvalObject {
    info: ModelInfo,
    mesh: TriangleMesh,
    vertices: Vec<Vec3>,
    sym: SymmetrySet,
}

fn eval_object(models_dir: &Path, obj: u32, info: &ModelInfo, cfg: &PipelineConfig) -> Result<EvalObject> {
    let mesh = load_mesh(models_dir, obj)?;
    Ok(EvalObject {
        vertices: subsample_vertices(&mesh.vertices, cfg.max_metric_vertices),
        sym: info.symmetries()?,
        info: info.clone(),
        mesh,
    })
}

/// A prediction without a ground-truth instance to score against.
#[derive(Debug, Clone, PartialEq)]
pub struct UnmatchedPrediction {
    pub scene_id: u32,
    pub image_id: u32,
    pub object_id: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecall {
    pub object_id: u32,
    pub instances: usize,
    pub recall: RecallReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub predictions: usize,
    pub ground_truth: usize,
    pub matched: usize,
    pub recall: RecallReport,
    pub acc15: f64,
    /// Geodesic rotation errors of the matched predictions, degrees.
    pub rotation_errors: Vec<f64>,
    pub per_object: Vec<ObjectRecall>,
    pub unmatched: Vec<UnmatchedPrediction>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn median(v: &[f64]) -> Option<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(s[n / 2]),
        _ => Some((s[n / 2 - 1] + s[n / 2]) / 2.0),
    }
}

/// Share of rotation errors below the Acc15 threshold; 0 for none.
fn fraction_within(errors_deg: &[f64]) -> f64 {
    if errors_deg.is_empty() {
        return 0.0;
    }
    errors_deg.iter().filter(|&&e| e < ACC_THRESHOLD_DEG).count() as f64 / errors_deg.len() as f64
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6}"))
}

impl EvalReport {
    pub fn rotation_error_mean(&self) -> Option<f64> {
        mean(&self.rotation_errors)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let r = &self.recall;
        let _ = writeln!(s, "predictions {}", self.predictions);
        let _ = writeln!(s, "ground_truth {}", self.ground_truth);
        let _ = writeln!(s, "matched {}", self.matched);
        let _ = writeln!(s, "ar_vsd {:.6}", r.ar_vsd);
        let _ = writeln!(s, "ar_mssd {:.6}", r.ar_mssd);
        let _ = writeln!(s, "ar_mspd {:.6}", r.ar_mspd);
        let _ = writeln!(s, "ar {:.6}", r.ar);
        let _ = writeln!(s, "acc15 {:.6}", self.acc15);
        let _ = writeln!(s, "rotation_error_mean_deg {}", opt(self.rotation_error_mean()));
        let _ = writeln!(s, "rotation_error_median_deg {}", opt(median(&self.rotation_errors)));
        let _ = writeln!(s, "\n[per_object]\nobj_id instances ar_vsd ar_mssd ar_mspd ar");
        for o in &self.per_object {
            let r = &o.recall;
            let _ = writeln!(
                s,
                "{} {} {:.6} {:.6} {:.6} {:.6}",
                o.object_id, o.instances, r.ar_vsd, r.ar_mssd, r.ar_mspd, r.ar
            );
        }
        let _ = writeln!(s, "\n[ar_curve]\ntheta_max ar");
        for (theta, ar) in &r.ar_curve {
            let _ = writeln!(s, "{theta:.2} {ar:.6}");
        }
        let _ = writeln!(s, "\n[unmatched_predictions] {}", self.unmatched.len());
        for u in &self.unmatched {
            let _ = writeln!(s, "{} {} {} {}", u.scene_id, u.image_id, u.object_id, u.score);
        }
        s
    }
}

/// One ground-truth instance with the prediction assigned to it.
struct EvalTask<'a> {
    scene: &'a Scene,
    image: u32,
    gt: &'a GtInstance,
    est: Option<Pose>,
}

/// Scores a results CSV against BOP ground truth and writes a text report.
///
/// Within one image, predictions of an object are assigned to its
/// ground-truth instances in descending score order. Meshes are read from
/// `obj_XXXXXX.ply` next to `models_info`. Where a scene has no depth image,
/// the ground-truth render stands in for the measured distance map.
pub fn cmd_eval(
    cfg: &PipelineConfig,
    result_csv: &Path,
    gt_dir: &Path,
    models_info: &Path,
    report_path: &Path,
) -> Result<EvalReport> {
    let preds = bop::read_results_file(result_csv)?;
    let info = bop::read_models_info(models_info)?;
    let models_dir = models_info.parent().unwrap_or(Path::new(""));
    let scenes = read_scenes(gt_dir)?;

    let mut by_key: BTreeMap<(u32, u32, u32), Vec<&PoseResult>> = BTreeMap::new();
    for p in &preds {
        by_key.entry((p.scene_id, p.image_id, p.object_id)).or_default().push(p);
    }
    for list in by_key.values_mut() {
        list.sort_by(|a, b| b.score.total_cmp(&a.score));
    }

    let mut tasks = Vec::new();
    let mut objects = BTreeMap::new();
    for scene in &scenes {
        for (&im, instances) in &scene.gt {
            let mut used: BTreeMap<u32, usize> = BTreeMap::new();
            for g in instances {
                if !objects.contains_key(&g.object_id) {
                    let mi = info
                        .get(&g.object_id)
                        .ok_or_else(|| Error::Config(format!("object {} missing from models_info", g.object_id)))?;
                    objects.insert(g.object_id, eval_object(models_dir, g.object_id, mi, cfg)?);
                }
                let n = used.entry(g.object_id).or_default();
                let est = by_key
                    .get(&(scene.id, im, g.object_id))
                    .and_then(|l| l.get(*n))
                    .map(|p| p.pose);
                *n += 1;
                tasks.push(EvalTask {
                    scene,
                    image: im,
                    gt: g,
                    est,
                });
            }
        }
    }

    let mut unmatched = Vec::new();
    for (&(scene_id, image_id, object_id), list) in &by_key {
        let gt_count = scenes
            .iter()
            .find(|s| s.id == scene_id)
            .and_then(|s| s.gt.get(&image_id))
            .map_or(0, |l| l.iter().filter(|g| g.object_id == object_id).count());
        for p in list.iter().skip(gt_count) {
            unmatched.push(UnmatchedPrediction {
                scene_id,
                image_id,
                object_id,
                score: p.score,
            });
        }
    }
    for u in &unmatched {
        log::warn!(
            "unmatched prediction: scene {} image {} object {}",
            u.scene_id,
            u.image_id,
            u.object_id
        );
    }

    let scored: Vec<(ErrorRecord, Option<f64>, u32)> = tasks
        .par_iter()
        .map(|t| {
            let ids = (t.scene.id, t.image, t.gt.object_id);
            let obj = &objects[&t.gt.object_id];
            let (k, measured) = t.scene.view(t.image)?;
            let Some(est) = t.est else {
                return Ok((ErrorRecord::missing(ids.0, ids.1, ids.2), None, k.width));
            };
            let distance = match measured {
                Some(d) => d,
                None => rasterize(&obj.mesh, &t.gt.pose, &k)?.distance,
            };
            let rec = error_record(ids, &est, &t.gt.pose, &obj.mesh, &obj.vertices, &obj.sym, &k, &distance)?;
            Ok((rec, Some(rotation_error(&est.rotation, &t.gt.pose.rotation)), k.width))
        })
        .collect::<Result<_>>()?;

    let width = scored.first().map_or(640, |s| s.2);
    if scored.iter().any(|s| s.2 != width) {
        log::warn!("images differ in width; MSPD thresholds use {width} px");
    }
    let records: Vec<ErrorRecord> = scored.iter().map(|s| s.0.clone()).collect();
    let diameter = |o: u32| objects.get(&o).map(|e| e.info.diameter);
    let recall = ar_score(&records, diameter, width)?;
    let per_object = objects
        .keys()
        .map(|&o| {
            let recs: Vec<ErrorRecord> = records.iter().filter(|r| r.object_id == o).cloned().collect();
            Ok(ObjectRecall {
                object_id: o,
                instances: recs.len(),
                recall: ar_score(&recs, diameter, width)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rotation_errors: Vec<f64> = scored.iter().filter_map(|s| s.1).collect();
    let acc15 = fraction_within(&rotation_errors);
    let report = EvalReport {
        predictions: preds.len(),
        ground_truth: records.len(),
        matched: rotation_errors.len(),
        recall,
        acc15,
        rotation_errors,
        per_object,
        unmatched,
    };
    std::fs::write(report_path, report.to_text()).map_err(|e| Error::io(report_path, e))?;
    Ok(report)
}

#[allow(non_snake_case)]
#[derive(Deserialize)]
struct RawPose {
    cam_R_m2c: [f64; 9],
    cam_t_m2c: [f64; 3],
}

/// Renders a mesh at each pose of a JSON list (`[{cam_R_m2c, cam_t_m2c}]`)
/// with the camera of a JSON object (`{cam_K, width, height}`). Writes
/// `NNNNNN_depth.png` (0.1 mm units), `NNNNNN_nocs.png` and `NNNNNN_mask.png`
/// and returns the written paths. Nothing is written unless every pose renders.
pub fn cmd_render(mesh_path: &Path, pose_list: &Path, intrinsics: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mesh = parse_ply(mesh_path)?;
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let raw: Vec<RawPose> =
        serde_json::from_str(&read(pose_list)?).map_err(|e| Error::Parse(format!("{}: {e}", pose_list.display())))?;
    let cam: SceneCamera =
        serde_json::from_str(&read(intrinsics)?).map_err(|e| Error::Parse(format!("{}: {e}", intrinsics.display())))?;
    let (Some(w), Some(h)) = (cam.width, cam.height) else {
        return Err(Error::Parse(format!("{}: width and height are required", intrinsics.display())));
    };
    let k = cam.intrinsics(w, h)?;
    let renders = raw
        .iter()
        .map(|p| rasterize(&mesh, &Pose::from_row_major(&p.cam_R_m2c, &p.cam_t_m2c)?, &k))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::with_capacity(3 * renders.len());
    for (i, r) in renders.iter().enumerate() {
        let path = |kind: &str| out_dir.join(format!("{i:06}_{kind}.png"));
        write_depth(&r.depth, RENDER_DEPTH_SCALE, path("depth"))?;
        write_nocs(&r.nocs, path("nocs"))?;
        write_mask(&r.mask, path("mask"))?;
        written.extend(["depth", "nocs", "mask"].map(path));
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchRow {
    pub crop_id: String,
    pub template_id: u32,
    pub score: f64,
    /// Against the ground-truth rotation; `None` without ground truth.
    pub rotation_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    pub rows: Vec<MatchRow>,
    pub failures: Vec<QueryFailure>,
    pub acc15: f64,
}

impl MatchReport {
    pub fn to_text(&self) -> String {
        let mut s = String::from("crop_id template_id score rotation_error_deg\n");
        for r in &self.rows {
            let _ = writeln!(s, "{} {} {:.6} {}", r.crop_id, r.template_id, r.score, opt(r.rotation_error));
        }
        let errs: Vec<f64> = self.rows.iter().filter_map(|r| r.rotation_error).collect();
        let _ = writeln!(s, "scored {}", errs.len());
        let _ = writeln!(s, "acc15 {:.6}", self.acc15);
        let _ = writeln!(s, "rotation_error_mean_deg {}", opt(mean(&errs)));
        let _ = writeln!(s, "failures {}", self.failures.len());
        for f in &self.failures {
            let _ = writeln!(s, "{} {}: {}", f.crop_id, f.kind, f.reason);
        }
        s
    }
}

/// Template retrieval only. Each detection's retrieved template rotation is
/// compared with the ground-truth rotation of the same-index instance of its
/// object in `gt_dir`.
pub fn cmd_match(
    cfg: &PipelineConfig,
    detections: &Path,
    template_dir: &Path,
    feature_dir: &Path,
    gt_dir: &Path,
    report_path: &Path,
) -> Result<MatchReport> {
    cfg.validate()?;
    let dets = read_detections(detections)?;
    let scenes = read_scenes(gt_dir)?;
    let mut templates = BTreeMap::new();
    let manifest = if dets.is_empty() {
        None
    } else {
        let m = FeatureManifest::read(feature_dir)?;
        m.validate(cfg)?;
        Some(m)
    };
    if let Some(m) = &manifest {
        for obj in dets.iter().map(|d| d.record.object_id) {
            if !templates.contains_key(&obj) {
                templates.insert(obj, load_templates(template_dir, feature_dir, obj, cfg, m)?);
            }
        }
    }
    let gt_rotation = |d: &Detection| {
        let r = &d.record;
        scenes
            .iter()
            .find(|s| s.id == r.scene_id)?
            .gt
            .get(&r.image_id)?
            .iter()
            .filter(|g| g.object_id == r.object_id)
            .nth(d.index as usize)
            .map(|g| g.pose.rotation)
    };
    let outcomes: Vec<std::result::Result<MatchRow, QueryFailure>> = dets
        .par_iter()
        .map(|det| {
            let m = manifest.as_ref().expect("manifest read for non-empty detections");
            let ts = &templates[&det.record.object_id];
            let fail = |e: Error| failure(det.crop_id(), &e);
            let q = load_query(det, feature_dir, cfg, m).map_err(fail)?;
            let res = match_template(&q, ts, cfg.match_layer).map_err(fail)?;
            let t = ts.iter().find(|t| t.template_id == res.template_id).expect("retrieved template");
            Ok(MatchRow {
                crop_id: det.crop_id(),
                template_id: res.template_id,
                score: res.score,
                rotation_error: gt_rotation(det).map(|r| rotation_error(&r, &t.pose.rotation)),
            })
        })
        .collect();
    let (mut rows, mut failures) = (Vec::new(), Vec::new());
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(f) => {
                log::warn!("{}: skipped ({}: {})", f.crop_id, f.kind, f.reason);
                failures.push(f);
            }
        }
    }
    let errs: Vec<f64> = rows.iter().filter_map(|r| r.rotation_error).collect();
    let acc15 = fraction_within(&errs);
    let report = MatchReport { rows, failures, acc15 };
    std::fs::write(report_path, report.to_text()).map_err(|e| Error::io(report_path, e))?;
    Ok(report)
}
