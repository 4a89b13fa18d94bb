//! BOP dataset files: the results CSV, per-scene ground truth and cameras,
//! and per-object model metadata.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, SymmetrySet, Vec3};

pub const RESULTS_HEADER: [&str; 7] = ["scene_id", "im_id", "obj_id", "score", "R", "t", "time"];
/// Angular samples per continuous symmetry axis.
pub const CONTINUOUS_SYMMETRY_STEPS: usize = 64;

/// One row of a results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseResult {
    pub scene_id: u32,
    pub image_id: u32,
    pub object_id: u32,
    pub score: f64,
    pub pose: Pose,
    /// Seconds; `-1` when not recorded.
    pub time: f64,
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_floats<const N: usize>(field: &str, what: &str) -> Result<[f64; N]> {
    let values: Vec<f64> = field
        .split_whitespace()
        .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number {s:?} in {what}"))))
        .collect::<Result<_>>()?;
    values
        .try_into()
        .map_err(|v: Vec<f64>| Error::Parse(format!("{what} needs {N} values, got {}", v.len())))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("results CSV: {e}"))
}

/// Writes the header and one line per result. Floats use the shortest
/// representation that reads back exactly.
pub fn write_results(rows: &[PoseResult], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.scene_id.to_string(),
            r.image_id.to_string(),
            r.object_id.to_string(),
            r.score.to_string(),
            join(&r.pose.rotation_row_major()),
            join(r.pose.translation.as_slice()),
            r.time.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Parse(format!("results CSV: {e}")))
}

pub fn results_to_string(rows: &[PoseResult]) -> String {
    let mut buf = Vec::new();
    write_results(rows, &mut buf).expect("in-memory write");
    String::from_utf8(buf).expect("CSV is UTF-8")
}

pub fn write_results_file(rows: &[PoseResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, results_to_string(rows)).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct RawRow {
    scene_id: u32,
    im_id: u32,
    obj_id: u32,
    score: f64,
    #[serde(rename = "R")]
    r: String,
    t: String,
    time: f64,
}

pub fn read_results(input: impl Read) -> Result<Vec<PoseResult>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut rows = Vec::new();
    for raw in rdr.deserialize::<RawRow>() {
        let raw = raw.map_err(csv_err)?;
        let r: [f64; 9] = parse_floats(&raw.r, "R")?;
        let t: [f64; 3] = parse_floats(&raw.t, "t")?;
        rows.push(PoseResult {
            scene_id: raw.scene_id,
            image_id: raw.im_id,
            object_id: raw.obj_id,
            score: raw.score,
            pose: Pose::from_row_major(&r, &t)?,
            time: raw.time,
        });
    }
    Ok(rows)
}

pub fn read_results_file(path: impl AsRef<Path>) -> Result<Vec<PoseResult>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_results(std::io::BufReader::new(f))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[allow(non_snake_case)]
#[derive(Serialize, Deserialize)]
struct RawGt {
    cam_R_m2c: [f64; 9],
    cam_t_m2c: [f64; 3],
    obj_id: u32,
}

/// One annotated object instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub object_id: u32,
    pub pose: Pose,
}

/// `scene_gt.json`: image id → annotated instances, in file order.
pub fn read_scene_gt(path: impl AsRef<Path>) -> Result<BTreeMap<u32, Vec<GtInstance>>> {
    let raw: BTreeMap<u32, Vec<RawGt>> = read_json(path.as_ref())?;
    raw.into_iter()
        .map(|(im, list)| {
            let inst = list
                .into_iter()
                .map(|g| {
                    Ok(GtInstance {
                        object_id: g.obj_id,
                        pose: Pose::from_row_major(&g.cam_R_m2c, &g.cam_t_m2c)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((im, inst))
        })
        .collect()
}

pub fn write_scene_gt(gt: &BTreeMap<u32, Vec<GtInstance>>, path: impl AsRef<Path>) -> Result<()> {
    let raw: BTreeMap<u32, Vec<RawGt>> = gt
        .iter()
        .map(|(&im, list)| {
            let v = list
                .iter()
                .map(|g| RawGt {
                    cam_R_m2c: g.pose.rotation_row_major(),
                    cam_t_m2c: g.pose.translation.into(),
                    obj_id: g.object_id,
                })
                .collect();
            (im, v)
        })
        .collect();
    write_json(&raw, path.as_ref())
}

/// One entry of `scene_camera.json`. BOP files carry no image size; `width`
/// and `height` are optional extensions, otherwise taken from the depth image.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneCamera {
    pub cam_K: [f64; 9],
    #[serde(default = "unit_scale")]
    pub depth_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
}

fn unit_scale() -> f64 {
    1.0
}

impl SceneCamera {
    pub fn intrinsics(&self, width: u32, height: u32) -> Result<CameraIntrinsics> {
        CameraIntrinsics::from_k(&self.cam_K, width, height)
    }
}

pub fn read_scene_camera(path: impl AsRef<Path>) -> Result<BTreeMap<u32, SceneCamera>> {
    read_json(path.as_ref())
}

pub fn write_scene_camera(cams: &BTreeMap<u32, SceneCamera>, path: impl AsRef<Path>) -> Result<()> {
    write_json(cams, path.as_ref())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSymmetry {
    pub axis: [f64; 3],
    pub offset: [f64; 3],
}

/// One entry of `models_info.json`; extent keys are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub diameter: f64,
    /// Row-major 4×4 transforms, translation in mm.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub symmetries_discrete: Vec<[f64; 16]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub symmetries_continuous: Vec<ContinuousSymmetry>,
}

impl ModelInfo {
    pub fn symmetries(&self) -> Result<SymmetrySet> {
        let discrete = self
            .symmetries_discrete
            .iter()
            .map(|m| {
                let r = [m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]];
                Pose::from_row_major(&r, &[m[3], m[7], m[11]])
            })
            .collect::<Result<Vec<_>>>()?;
        let continuous: Vec<(Vec3, Vec3)> = self
            .symmetries_continuous
            .iter()
            .map(|c| (Vec3::from(c.axis).normalize(), Vec3::from(c.offset)))
            .collect();
        if continuous.iter().any(|(a, _)| !a.iter().all(|x| x.is_finite())) {
            return Err(Error::Parse("continuous symmetry with zero axis".into()));
        }
        Ok(SymmetrySet::from_discrete_and_continuous(
            &discrete,
            &continuous,
            CONTINUOUS_SYMMETRY_STEPS,
        ))
    }
}

pub fn read_models_info(path: impl AsRef<Path>) -> Result<BTreeMap<u32, ModelInfo>> {
    read_json(path.as_ref())
}

pub fn write_models_info(info: &BTreeMap<u32, ModelInfo>, path: impl AsRef<Path>) -> Result<()> {
    write_json(info, path.as_ref())
}
