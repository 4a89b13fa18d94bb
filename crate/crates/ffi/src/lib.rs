//! C ABI for the zspose library.
//!
//! Every function returns a status code: `ZSPOSE_OK` (0) on success, a
//! positive library error code, or one of the negative codes below. After a
//! failure, `zspose_last_error_message` describes it; the message is kept per
//! thread until the next failing call on that thread.
//!
//! Handles (`ZsposeConfig`, `ZsposeMesh`) are opaque, created by a `_new` or
//! `_load` function and released with the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use zspose::geometry::{CameraIntrinsics, Pose, SymmetrySet, Vec2, Vec3};
use zspose::mesh::{parse_ply, TriangleMesh};
use zspose::metrics::{e_mspd, e_mssd};
use zspose::pipeline::commands::cmd_pose;
use zspose::pipeline::selftest::{run_selftest, SelftestOptions};
use zspose::pipeline::PipelineConfig;
use zspose::pose::{epnp, ransac_pnp, GeometricCorrespondence, RansacParams};

pub const ZSPOSE_OK: i32 = 0;
pub const ZSPOSE_ERR_NULL_POINTER: i32 = -1;
pub const ZSPOSE_ERR_INVALID_UTF8: i32 = -2;
pub const ZSPOSE_ERR_PANIC: i32 = -3;
pub const ZSPOSE_ERR_INVALID_ARGUMENT: i32 = -4;

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(i32, String);

impl From<zspose::Error> for Failure {
    fn from(e: zspose::Error) -> Self {
        Failure(e.code(), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ZSPOSE_OK,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            ZSPOSE_ERR_PANIC
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: caller promises a valid pointer or null
    unsafe { p.as_ref() }.ok_or_else(|| Failure(ZSPOSE_ERR_NULL_POINTER, format!("{what} is null")))
}

fn non_null_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: caller promises a valid, exclusive pointer or null
    unsafe { p.as_mut() }.ok_or_else(|| Failure(ZSPOSE_ERR_NULL_POINTER, format!("{what} is null")))
}

fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(ZSPOSE_ERR_NULL_POINTER, format!("{what} is null")));
    }
    // SAFETY: non-null, caller promises NUL termination
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(ZSPOSE_ERR_INVALID_UTF8, format!("{what} is not UTF-8")))
}

fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(ZSPOSE_ERR_NULL_POINTER, format!("{what} is null")));
    }
    // SAFETY: non-null, caller promises `n` readable elements
    Ok(unsafe { std::slice::from_raw_parts(p, n) })
}

/// Length in bytes of the last error message, excluding the terminator; 0 when none.
#[no_mangle]
pub extern "C" fn zspose_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, String::len))
}

/// Copies the last error message into `buf` (NUL-terminated, truncated to
/// `len - 1` bytes). Returns the number of bytes written without the terminator.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn zspose_last_error_message(buf: *mut c_char, len: usize) -> usize {
    if buf.is_null() || len == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_deref().unwrap_or("").as_bytes();
        let n = bytes.len().min(len - 1);
        // SAFETY: `buf` holds `len > n` bytes
        unsafe {
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        n
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn zspose_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Rigid transform, model to camera. `rotation` is row-major; `translation` in mm.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZsposePose {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZsposeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

/// Image point (pixels) and the model point (mm) seen there.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZsposeCorrespondence {
    pub u: f64,
    pub v: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl ZsposePose {
    fn to_pose(self) -> Result<Pose, Failure> {
        Ok(Pose::from_row_major(&self.rotation, &self.translation)?)
    }

    fn from_pose(p: &Pose) -> Self {
        Self {
            rotation: p.rotation_row_major(),
            translation: p.translation.into(),
        }
    }
}

impl ZsposeIntrinsics {
    fn to_intrinsics(self) -> Result<CameraIntrinsics, Failure> {
        Ok(CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?)
    }
}

fn correspondences(p: *const ZsposeCorrespondence, n: usize) -> Result<Vec<GeometricCorrespondence>, Failure> {
    Ok(slice(p, n, "correspondences")?
        .iter()
        .map(|c| GeometricCorrespondence {
            image_point: Vec2::new(c.u, c.v),
            model_point: Vec3::new(c.x, c.y, c.z),
            weight: 1.0,
        })
        .collect())
}

/// Opaque pipeline configuration.
pub struct ZsposeConfig(PipelineConfig);

/// Opaque triangle mesh.
pub struct ZsposeMesh(TriangleMesh);

/// Default configuration. Never null.
#[no_mangle]
pub extern "C" fn zspose_config_new() -> *mut ZsposeConfig {
    Box::into_raw(Box::new(ZsposeConfig(PipelineConfig::default())))
}

/// Reads a `key = value` configuration file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zspose_config_load(path: *const c_char, out: *mut *mut ZsposeConfig) -> i32 {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        let cfg = PipelineConfig::load(string(path, "path")?)?;
        *out = Box::into_raw(Box::new(ZsposeConfig(cfg)));
        Ok(())
    })
}

/// Sets one configuration key. The configuration is left unchanged when the
/// assignment or the resulting configuration is invalid.
///
/// # Safety
/// `cfg` must come from this library; `key` and `value` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn zspose_config_set(cfg: *mut ZsposeConfig, key: *const c_char, value: *const c_char) -> i32 {
    guard(|| {
        let cfg = non_null_mut(cfg, "cfg")?;
        let mut next = cfg.0.clone();
        next.set(string(key, "key")?, string(value, "value")?)?;
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn zspose_config_free(cfg: *mut ZsposeConfig) {
    if !cfg.is_null() {
        // SAFETY: allocated by Box::into_raw in this library
        drop(unsafe { Box::from_raw(cfg) });
    }
}

/// Parses an ascii or binary little-endian PLY file into `*out`.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zspose_mesh_load(path: *const c_char, out: *mut *mut ZsposeMesh) -> i32 {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        let mesh = parse_ply(string(path, "path")?)?;
        *out = Box::into_raw(Box::new(ZsposeMesh(mesh)));
        Ok(())
    })
}

/// # Safety
/// `mesh` must come from this library; `diameter` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zspose_mesh_diameter(mesh: *const ZsposeMesh, diameter: *mut f64) -> i32 {
    guard(|| {
        *non_null_mut(diameter, "diameter")? = non_null(mesh, "mesh")?.0.diameter;
        Ok(())
    })
}

/// # Safety
/// `mesh` must come from this library (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn zspose_mesh_free(mesh: *mut ZsposeMesh) {
    if !mesh.is_null() {
        // SAFETY: allocated by Box::into_raw in this library
        drop(unsafe { Box::from_raw(mesh) });
    }
}

/// Closed-form EPnP on at least 6 correspondences.
///
/// # Safety
/// `corr` must point to `n` elements; `k` readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn zspose_epnp(
    corr: *const ZsposeCorrespondence,
    n: usize,
    k: *const ZsposeIntrinsics,
    out: *mut ZsposePose,
) -> i32 {
    guard(|| {
        let k = non_null(k, "k")?.to_intrinsics()?;
        let out = non_null_mut(out, "out")?;
        *out = ZsposePose::from_pose(&epnp(&correspondences(corr, n)?, &k)?);
        Ok(())
    })
}

/// RANSAC around EPnP. `inliers` (optional) receives the consensus size.
///
/// # Safety
/// `corr` must point to `n` elements; `k` readable; `out` writable; `inliers` writable or null.
#[no_mangle]
pub unsafe extern "C" fn zspose_ransac_pnp(
    corr: *const ZsposeCorrespondence,
    n: usize,
    k: *const ZsposeIntrinsics,
    threshold_px: f64,
    max_iters: usize,
    seed: u64,
    out: *mut ZsposePose,
    inliers: *mut usize,
) -> i32 {
    guard(|| {
        let k = non_null(k, "k")?.to_intrinsics()?;
        let out = non_null_mut(out, "out")?;
        if !(threshold_px > 0.0) || max_iters == 0 {
            return Err(Failure(ZSPOSE_ERR_INVALID_ARGUMENT, "threshold and iterations must be positive".into()));
        }
        let params = RansacParams {
            threshold_px,
            max_iters,
            seed,
            ..RansacParams::default()
        };
        let est = ransac_pnp(&correspondences(corr, n)?, &k, &params)?;
        *out = ZsposePose::from_pose(&est.pose);
        if let Some(i) = unsafe { inliers.as_mut() } {
            *i = est.inliers;
        }
        Ok(())
    })
}

/// MSSD (mm) over all mesh vertices, no symmetries.
///
/// # Safety
/// Pointers must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn zspose_e_mssd(
    mesh: *const ZsposeMesh,
    est: *const ZsposePose,
    gt: *const ZsposePose,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let mesh = &non_null(mesh, "mesh")?.0;
        let (est, gt) = (non_null(est, "est")?.to_pose()?, non_null(gt, "gt")?.to_pose()?);
        *non_null_mut(out, "out")? = e_mssd(&est, &gt, &mesh.vertices, &SymmetrySet::identity_only());
        Ok(())
    })
}

/// MSPD (pixels) over all mesh vertices, no symmetries.
///
/// # Safety
/// Pointers must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn zspose_e_mspd(
    mesh: *const ZsposeMesh,
    est: *const ZsposePose,
    gt: *const ZsposePose,
    k: *const ZsposeIntrinsics,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let mesh = &non_null(mesh, "mesh")?.0;
        let (est, gt) = (non_null(est, "est")?.to_pose()?, non_null(gt, "gt")?.to_pose()?);
        let k = non_null(k, "k")?.to_intrinsics()?;
        *non_null_mut(out, "out")? = e_mspd(&est, &gt, &mesh.vertices, &SymmetrySet::identity_only(), &k);
        Ok(())
    })
}

/// Runs the synthetic end-to-end check. `passed` receives 1 or 0 and
/// `successes` (optional) the number of recovered query poses.
///
/// # Safety
/// `passed` writable; `successes` writable or null.
#[no_mangle]
pub unsafe extern "C" fn zspose_selftest(seed: u64, passed: *mut i32, successes: *mut usize) -> i32 {
    guard(|| {
        let passed = non_null_mut(passed, "passed")?;
        let rep = run_selftest(&SelftestOptions::new(seed))?;
        *passed = i32::from(rep.passed());
        if let Some(s) = unsafe { successes.as_mut() } {
            *s = rep.successes();
        }
        Ok(())
    })
}

/// Pose estimation over a detections file, writing a BOP results CSV.
/// `posed` (optional) receives the number of rows written.
///
/// # Safety
/// `cfg` must come from this library; paths must be NUL-terminated; `posed` writable or null.
#[no_mangle]
pub unsafe extern "C" fn zspose_pose_batch(
    cfg: *const ZsposeConfig,
    detections: *const c_char,
    templates: *const c_char,
    features: *const c_char,
    models: *const c_char,
    out_csv: *const c_char,
    posed: *mut usize,
) -> i32 {
    guard(|| {
        let cfg = &non_null(cfg, "cfg")?.0;
        let p = |s, what| string(s, what).map(PathBuf::from);
        let summary = cmd_pose(
            cfg,
            &p(detections, "detections")?,
            &p(templates, "templates")?,
            &p(features, "features")?,
            &p(models, "models")?,
            &p(out_csv, "out_csv")?,
        )?;
        if let Some(n) = unsafe { posed.as_mut() } {
            *n = summary.results.len();
        }
        Ok(())
    })
}
