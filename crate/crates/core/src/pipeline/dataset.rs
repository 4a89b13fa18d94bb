//! On-disk inputs of the estimator: detections, template sets, extracted
//! features and the feature manifest.
//!
//! Layout, relative to the directories handed to the commands:
//!
//! ```text
//! detections.json                      [{scene_id, image_id, object_id, mask, bbox, score, cam_K}]
//! <templates>/obj_000001/templates.json [{id, cam_R_m2c, cam_t_m2c, cam_K, width, height}]
//! <templates>/obj_000001/000000_{mask,nocs,depth}.png
//! <features>/manifest.json             {"timestep": 50, "layers": {"2": [C, H, W], ...}}
//! <features>/<crop_id>_L<layer>.dfm     query crops, crop_id = SSSSSS_IIIIII_OOOOOO_NNN
//! <features>/obj000001_tpl000000_L<layer>.dfm
//! <models>/obj_000001.ply
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bop::{self, GtInstance, ModelInfo, SceneCamera};
use super::config::PipelineConfig;
use super::fixture::SyntheticScene;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CropTransform, Pose, Vec2};
use crate::mesh::{parse_ply, TriangleMesh};
use crate::template_match::{QueryCrop, TemplateRecord};
use crate::tensor_store::{
    feature_path, read_depth, read_feature_map, read_mask, read_nocs, write_depth, write_feature_map,
    write_mask, write_nocs, FeatureMap, MaskImage,
};

/// Environment variable naming the directory relative paths are resolved against.
pub const DATA_ROOT_ENV: &str = "ZSPOSE_DATA_ROOT";

/// `path` itself when absolute or when the data root is unset.
pub fn resolve(path: impl AsRef<Path>) -> PathBuf {
    let path = path.as_ref();
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if path.is_relative() && !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// One object hypothesis from an external detector.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub scene_id: u32,
    pub image_id: u32,
    pub object_id: u32,
    /// Full-image mask, relative to the detections file.
    pub mask: PathBuf,
    /// `(x, y, w, h)` in source pixels.
    pub bbox: [f64; 4],
    pub score: f64,
    pub cam_K: [f64; 9],
}

/// A detection with its position among detections of the same object in the same image.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub record: DetectionRecord,
    pub index: u32,
    pub mask_path: PathBuf,
}

impl Detection {
    pub fn crop_id(&self) -> String {
        crop_id(self.record.scene_id, self.record.image_id, self.record.object_id, self.index)
    }

    pub fn key(&self) -> (u32, u32, u32, u32) {
        let r = &self.record;
        (r.scene_id, r.image_id, r.object_id, self.index)
    }
}

pub fn crop_id(scene: u32, image: u32, object: u32, index: u32) -> String {
    format!("{scene:06}_{image:06}_{object:06}_{index:03}")
}

/// Reads a detections file, sorted by `(scene, image, object, index)`.
pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let records: Vec<DetectionRecord> = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut seen: BTreeMap<(u32, u32, u32), u32> = BTreeMap::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let [_, _, w, h] = r.bbox;
        if !(r.bbox.iter().all(|v| v.is_finite()) && w > 0.0 && h > 0.0) {
            return Err(Error::Parse(format!("detection with invalid box {:?}", r.bbox)));
        }
        let n = seen.entry((r.scene_id, r.image_id, r.object_id)).or_default();
        let index = *n;
        *n += 1;
        out.push(Detection {
            mask_path: base.join(&r.mask),
            record: r,
            index,
        });
    }
    out.sort_by_key(Detection::key);
    Ok(out)
}

pub fn write_detections(records: &[DetectionRecord], path: impl AsRef<Path>) -> Result<()> {
    write_json(&records, path.as_ref())
}

/// Layer shapes produced by the feature extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestep: Option<u32>,
    /// layer → `[channels, height, width]`
    pub layers: BTreeMap<u32, [usize; 3]>,
}

impl FeatureManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn read(feature_dir: impl AsRef<Path>) -> Result<Self> {
        read_json(&feature_dir.as_ref().join(Self::FILE))
    }

    pub fn write(&self, feature_dir: impl AsRef<Path>) -> Result<()> {
        write_json(self, &feature_dir.as_ref().join(Self::FILE))
    }

    /// Every configured layer is listed and the timestep agrees.
    pub fn validate(&self, cfg: &PipelineConfig) -> Result<()> {
        if let Some(t) = self.timestep {
            if t != cfg.timestep {
                return Err(Error::Config(format!(
                    "features were extracted at timestep {t}, config expects {}",
                    cfg.timestep
                )));
            }
        }
        match cfg.layers.iter().find(|l| !self.layers.contains_key(l)) {
            Some(&l) => Err(Error::MissingLayer(l)),
            None => Ok(()),
        }
    }

    pub fn check(&self, fm: &FeatureMap) -> Result<()> {
        let want = self.layers.get(&fm.layer_id).ok_or(Error::MissingLayer(fm.layer_id))?;
        let got = [fm.channels, fm.height, fm.width];
        if *want != got {
            return Err(Error::DimMismatch(format!(
                "layer {} is {got:?}, manifest says {want:?}",
                fm.layer_id
            )));
        }
        Ok(())
    }
}

fn load_layer(path: &Path, layer: u32, manifest: &FeatureManifest) -> Result<FeatureMap> {
    let fm = read_feature_map(path)?;
    if fm.layer_id != layer {
        return Err(Error::DimMismatch(format!(
            "{} holds layer {}, expected {layer}",
            path.display(),
            fm.layer_id
        )));
    }
    manifest.check(&fm)?;
    Ok(fm)
}

/// Per-layer features stored under `<dir>/<stem>_L<layer>.dfm`.
pub fn load_features(
    dir: &Path,
    stem: &str,
    cfg: &PipelineConfig,
    manifest: &FeatureManifest,
) -> Result<BTreeMap<u32, FeatureMap>> {
    cfg.layers
        .iter()
        .map(|&l| Ok((l, load_layer(&feature_path(dir, stem, l), l, manifest)?)))
        .collect()
}

pub fn template_stem(object: u32, template: u32) -> String {
    format!("obj{object:06}_tpl{template:06}")
}

pub fn object_dir(template_dir: &Path, object: u32) -> PathBuf {
    template_dir.join(format!("obj_{object:06}"))
}

pub fn mesh_path(mesh_dir: &Path, object: u32) -> PathBuf {
    mesh_dir.join(format!("obj_{object:06}.ply"))
}

pub fn load_mesh(mesh_dir: &Path, object: u32) -> Result<TriangleMesh> {
    parse_ply(mesh_path(mesh_dir, object))
}

/// One entry of `templates.json`: pose and crop camera of a rendered view.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateEntry {
    pub id: u32,
    pub cam_R_m2c: [f64; 9],
    pub cam_t_m2c: [f64; 3],
    pub cam_K: [f64; 9],
    pub width: u32,
    pub height: u32,
}

/// Template set of one object. Each view needs a mask and a NOCS or depth map.
pub fn load_templates(
    template_dir: &Path,
    feature_dir: &Path,
    object: u32,
    cfg: &PipelineConfig,
    manifest: &FeatureManifest,
) -> Result<Vec<TemplateRecord>> {
    let dir = object_dir(template_dir, object);
    let entries: Vec<TemplateEntry> = read_json(&dir.join("templates.json"))?;
    if entries.len() != cfg.n_templates {
        log::warn!(
            "object {object}: {} templates on disk, config n_templates = {}",
            entries.len(),
            cfg.n_templates
        );
    }
    entries
        .iter()
        .map(|e| {
            let img = |kind: &str| dir.join(format!("{:06}_{kind}.png", e.id));
            let mask = read_mask(img("mask"))?;
            let nocs = img("nocs").exists().then(|| read_nocs(img("nocs"))).transpose()?;
            let depth = img("depth")
                .exists()
                .then(|| read_depth(img("depth"), cfg.depth_scale))
                .transpose()?;
            if nocs.is_none() && depth.is_none() {
                return Err(Error::Parse(format!("template {} of object {object} has neither NOCS nor depth", e.id)));
            }
            if (mask.width, mask.height) != (e.width as usize, e.height as usize) {
                return Err(Error::DimMismatch(format!("template {} mask size differs from its camera", e.id)));
            }
            Ok(TemplateRecord {
                template_id: e.id,
                features: load_features(feature_dir, &template_stem(object, e.id), cfg, manifest)?,
                pose: Pose::from_row_major(&e.cam_R_m2c, &e.cam_t_m2c)?,
                intrinsics: CameraIntrinsics::from_k(&e.cam_K, e.width, e.height)?,
                depth,
                nocs,
                mask,
            })
        })
        .collect()
}

/// Nearest-pixel resampling of a source-image mask into a `size × size` crop.
pub fn crop_mask(mask: &MaskImage, ct: &CropTransform, size: u32) -> MaskImage {
    let n = size as usize;
    let mut data = vec![false; n * n];
    for y in 0..n {
        for x in 0..n {
            let s = ct.crop_to_source(&Vec2::new(x as f64, y as f64));
            let (sx, sy) = (s.x.round(), s.y.round());
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < mask.width && (sy as usize) < mask.height {
                data[y * n + x] = mask.get(sx as usize, sy as usize);
            }
        }
    }
    MaskImage {
        width: n,
        height: n,
        data,
    }
}

/// Query crop of a detection: mask cropped around the padded box, features from disk.
pub fn load_query(
    det: &Detection,
    feature_dir: &Path,
    cfg: &PipelineConfig,
    manifest: &FeatureManifest,
) -> Result<QueryCrop> {
    let mask = read_mask(&det.mask_path)?;
    let [x, y, w, h] = det.record.bbox;
    if x < 0.0 || y < 0.0 || x + w > mask.width as f64 || y + h > mask.height as f64 {
        return Err(Error::Parse(format!(
            "box {:?} outside the {}x{} image",
            det.record.bbox, mask.width, mask.height
        )));
    }
    let k = CameraIntrinsics::from_k(&det.record.cam_K, mask.width as u32, mask.height as u32)?;
    let ct = CropTransform::from_bbox(det.record.bbox, cfg.crop_margin, cfg.crop_size)?;
    let crop_id = det.crop_id();
    Ok(QueryCrop {
        features: load_features(feature_dir, &crop_id, cfg, manifest)?,
        mask: crop_mask(&mask, &ct, cfg.crop_size),
        crop_transform: ct,
        scene_intrinsics: k,
        crop_id,
    })
}

/// Object id of the synthetic fixture in exported datasets.
pub const FIXTURE_OBJECT: u32 = 1;
pub const FIXTURE_SCENE: u32 = 0;
/// Depth units of exported scene images, mm.
pub const FIXTURE_DEPTH_SCALE: f64 = 0.1;

/// Paths of an exported fixture dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPaths {
    pub detections: PathBuf,
    pub templates: PathBuf,
    pub features: PathBuf,
    pub models: PathBuf,
    pub models_info: PathBuf,
    pub gt: PathBuf,
}

impl DatasetPaths {
    pub fn under(root: &Path) -> Self {
        Self {
            detections: root.join("detections.json"),
            templates: root.join("templates"),
            features: root.join("features"),
            models: root.join("models"),
            models_info: root.join("models").join("models_info.json"),
            gt: root.join("test"),
        }
    }
}

/// Writes the synthetic scene as a dataset the `pose`, `eval` and `match`
/// commands can read. Each query becomes its own image of scene 0.
pub fn export_fixture(scene: &SyntheticScene, cfg: &PipelineConfig, root: &Path) -> Result<DatasetPaths> {
    let paths = DatasetPaths::under(root);
    let obj = FIXTURE_OBJECT;
    let scene_dir = paths.gt.join(format!("{FIXTURE_SCENE:06}"));
    let tdir = object_dir(&paths.templates, obj);
    for d in [&paths.features, &paths.models, &tdir, &scene_dir.join("mask"), &scene_dir.join("depth")] {
        create_dir(d)?;
    }

    std::fs::write(mesh_path(&paths.models, obj), scene.mesh.to_ply_binary())
        .map_err(|e| Error::io(mesh_path(&paths.models, obj), e))?;
    let info = BTreeMap::from([(
        obj,
        ModelInfo {
            diameter: scene.mesh.diameter,
            symmetries_discrete: vec![],
            symmetries_continuous: vec![],
        },
    )]);
    bop::write_models_info(&info, &paths.models_info)?;

    let mut layers = BTreeMap::new();
    let mut entries = Vec::with_capacity(scene.templates.len());
    for t in &scene.templates {
        let img = |kind: &str| tdir.join(format!("{:06}_{kind}.png", t.template_id));
        write_mask(&t.mask, img("mask"))?;
        if let Some(n) = &t.nocs {
            write_nocs(n, img("nocs"))?;
        }
        if let Some(d) = &t.depth {
            write_depth(d, cfg.depth_scale, img("depth"))?;
        }
        for (l, fm) in &t.features {
            layers.insert(*l, [fm.channels, fm.height, fm.width]);
            write_feature_map(fm, feature_path(&paths.features, &template_stem(obj, t.template_id), *l))?;
        }
        entries.push(TemplateEntry {
            id: t.template_id,
            cam_R_m2c: t.pose.rotation_row_major(),
            cam_t_m2c: t.pose.translation.into(),
            cam_K: t.intrinsics.k_row_major(),
            width: t.intrinsics.width,
            height: t.intrinsics.height,
        });
    }
    write_json(&entries, &tdir.join("templates.json"))?;
    FeatureManifest {
        timestep: Some(cfg.timestep),
        layers,
    }
    .write(&paths.features)?;

    let k = scene.intrinsics;
    let mut gt = BTreeMap::new();
    let mut cams = BTreeMap::new();
    let mut dets = Vec::with_capacity(scene.queries.len());
    for (im, q) in scene.queries.iter().enumerate() {
        let im = im as u32;
        let mask_rel = PathBuf::from(format!("test/{FIXTURE_SCENE:06}/mask/{im:06}_000000.png"));
        write_mask(&q.scene.mask, root.join(&mask_rel))?;
        write_depth(&q.scene.depth, FIXTURE_DEPTH_SCALE, scene_dir.join(format!("depth/{im:06}.png")))?;
        gt.insert(im, vec![GtInstance { object_id: obj, pose: q.gt }]);
        cams.insert(
            im,
            SceneCamera {
                cam_K: k.k_row_major(),
                depth_scale: FIXTURE_DEPTH_SCALE,
                width: Some(k.width),
                height: Some(k.height),
            },
        );
        let id = crop_id(FIXTURE_SCENE, im, obj, 0);
        for (l, fm) in &q.crop.features {
            write_feature_map(fm, feature_path(&paths.features, &id, *l))?;
        }
        dets.push(DetectionRecord {
            scene_id: FIXTURE_SCENE,
            image_id: im,
            object_id: obj,
            mask: mask_rel,
            bbox: q.bbox,
            score: 1.0,
            cam_K: k.k_row_major(),
        });
    }
    bop::write_scene_gt(&gt, scene_dir.join("scene_gt.json"))?;
    bop::write_scene_camera(&cams, scene_dir.join("scene_camera.json"))?;
    write_detections(&dets, &paths.detections)?;
    Ok(paths)
}
