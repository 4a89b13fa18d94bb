//! Rigid-body poses, the pinhole camera, crop bookkeeping and symmetry sets.
//!
//! Conventions: millimeters everywhere; poses map model coordinates into the
//! camera frame (`x_cam = R * x_model + t`); pixel centers sit on integer
//! coordinates with the origin at the top-left, `u` to the right and `v` down.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Camera-frame depth below which a point counts as being on or behind the image plane.
pub const MIN_DEPTH: f64 = 1e-9;

/// A rigid transform: rotation followed by translation (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose from a rotation that must already be orthonormal within 1e-9.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let dev = rotation_deviation(&rotation);
        if dev > 1e-9 {
            return Err(Error::InvalidRotation(dev));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds a pose from file values (row-major rotation, translation in mm).
    ///
    /// Dataset files carry rounded numbers, so the rotation is accepted within
    /// 1e-6 and then snapped to the nearest rotation.
    pub fn from_row_major(r: &[f64; 9], t: &[f64; 3]) -> Result<Self> {
        let m = Mat3::from_row_slice(r);
        let dev = rotation_deviation(&m);
        if dev > 1e-6 {
            return Err(Error::InvalidRotation(dev));
        }
        Ok(Self {
            rotation: nearest_rotation(&m),
            translation: Vec3::new(t[0], t[1], t[2]),
        })
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: t,
        }
    }

    /// Row-major rotation entries.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        compose(self, other)
    }

    pub fn inverse(&self) -> Pose {
        invert(self)
    }
}

/// Pose that applies `b` first and then `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

pub fn invert(p: &Pose) -> Pose {
    let rt = p.rotation.transpose();
    Pose {
        rotation: rt,
        translation: -(rt * p.translation),
    }
}

/// Largest of `|RᵀR − I|` (max-abs entry) and `|det R − 1|`.
pub fn rotation_deviation(r: &Mat3) -> f64 {
    let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
    ortho.max((r.determinant() - 1.0).abs())
}

/// Closest rotation in the Frobenius sense (polar factor with det fixed to +1).
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Rotation about a (not necessarily unit) axis by `angle` radians.
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    let a = axis.normalize();
    let (s, c) = angle.sin_cos();
    let k = Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0);
    Mat3::identity() + k * s + k * k * (1.0 - c)
}

/// Geodesic angle between two rotations, in radians.
pub fn rotation_angle_between(a: &Mat3, b: &Mat3) -> f64 {
    let cos = (((a.transpose() * b).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    cos.acos()
}

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// From a row-major 3×3 `K` as stored in BOP camera files.
    pub fn from_k(k: &[f64; 9], width: u32, height: u32) -> Result<Self> {
        Self::new(k[0], k[4], k[2], k[5], width, height)
    }

    pub fn k_row_major(&self) -> [f64; 9] {
        [
            self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0,
        ]
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    pub fn project_camera_point(&self, p: &Vec3) -> Option<Vec2> {
        (p.z > MIN_DEPTH).then(|| {
            Vec2::new(
                self.fx * p.x / p.z + self.cx,
                self.fy * p.y / p.z + self.cy,
            )
        })
    }

    /// Camera-frame point at pixel `(u, v)` with depth `depth`.
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        let ray = self.ray(u, v);
        ray * depth
    }

    /// Ray through pixel `(u, v)` normalized to unit depth.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Intrinsics of the image seen through an affine crop of this camera.
    ///
    /// The principal point of the result may fall outside the crop.
    pub fn cropped(&self, crop: &CropTransform, width: u32, height: u32) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.fx * crop.scale,
            fy: self.fy * crop.scale,
            cx: (self.cx - crop.offset_x) * crop.scale,
            cy: (self.cy - crop.offset_y) * crop.scale,
            width,
            height,
        }
    }

    /// Intrinsics of a grid whose cells each cover `stride × stride` pixels,
    /// with cell `g` centered on pixel `g * stride + (stride − 1) / 2`.
    pub fn downsampled(&self, stride: f64, width: u32, height: u32) -> CameraIntrinsics {
        let half = (stride - 1.0) / 2.0;
        CameraIntrinsics {
            fx: self.fx / stride,
            fy: self.fy / stride,
            cx: (self.cx - half) / stride,
            cy: (self.cy - half) / stride,
            width,
            height,
        }
    }
}

/// Projects model-frame points through `pose` and `k`.
pub fn project(points: &[Vec3], pose: &Pose, k: &CameraIntrinsics) -> Result<Vec<Vec2>> {
    points
        .iter()
        .map(|p| {
            let c = pose.transform_point(p);
            k.project_camera_point(&c).ok_or(Error::NonPositiveDepth(c.z))
        })
        .collect()
}

/// Affine map between a square crop and the source image:
/// `source = offset + crop / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropTransform {
    /// Crop pixels per source pixel.
    pub scale: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

impl CropTransform {
    pub fn new(scale: f64, offset_x: f64, offset_y: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("crop scale must be positive, got {scale}")));
        }
        Ok(Self {
            scale,
            offset_x,
            offset_y,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            offset_x: 0.0,
            offset_y: 0.0,
        }
    }

    /// Square crop of `crop_size` pixels around a bounding box `(x, y, w, h)`,
    /// padded by `margin` (fractional) on the longer side. The crop's center
    /// pixel maps onto the box center.
    pub fn from_bbox(bbox: [f64; 4], margin: f64, crop_size: u32) -> Result<Self> {
        let [x, y, w, h] = bbox;
        let side = w.max(h).max(1.0) * (1.0 + margin);
        let scale = crop_size as f64 / side;
        let (cx, cy) = (x + (w - 1.0) / 2.0, y + (h - 1.0) / 2.0);
        let half = (crop_size as f64 - 1.0) / 2.0 / scale;
        Self::new(scale, cx - half, cy - half)
    }

    pub fn crop_to_source(&self, q: &Vec2) -> Vec2 {
        Vec2::new(
            self.offset_x + q.x / self.scale,
            self.offset_y + q.y / self.scale,
        )
    }

    pub fn source_to_crop(&self, p: &Vec2) -> Vec2 {
        Vec2::new(
            (p.x - self.offset_x) * self.scale,
            (p.y - self.offset_y) * self.scale,
        )
    }
}

/// Model-frame symmetry transforms; the first entry is always the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetrySet {
    transforms: Vec<Pose>,
}

impl Default for SymmetrySet {
    fn default() -> Self {
        Self::identity_only()
    }
}

impl SymmetrySet {
    pub fn identity_only() -> Self {
        Self {
            transforms: vec![Pose::identity()],
        }
    }

    /// Prepends the identity unless `transforms` already starts with it.
    pub fn new(mut transforms: Vec<Pose>) -> Self {
        let starts_with_identity = transforms.first().is_some_and(|p| {
            (p.rotation - Mat3::identity()).abs().max() < 1e-12 && p.translation.norm() < 1e-12
        });
        if !starts_with_identity {
            transforms.insert(0, Pose::identity());
        }
        Self { transforms }
    }

    /// Expands discrete and continuous symmetries the way the BOP toolkit does:
    /// every continuous symmetry is sampled at `steps` angles about its axis
    /// (through `offset`) and combined with every discrete one.
    pub fn from_discrete_and_continuous(
        discrete: &[Pose],
        continuous: &[(Vec3, Vec3)],
        steps: usize,
    ) -> Self {
        let mut disc = vec![Pose::identity()];
        disc.extend_from_slice(discrete);
        if continuous.is_empty() {
            return Self::new(disc);
        }
        let mut out = Vec::new();
        for (axis, offset) in continuous {
            for i in 0..steps.max(1) {
                let angle = std::f64::consts::TAU * i as f64 / steps.max(1) as f64;
                let r = axis_angle(axis, angle);
                let cont = Pose {
                    rotation: r,
                    translation: offset - r * offset,
                };
                for d in &disc {
                    out.push(compose(d, &cont));
                }
            }
        }
        Self::new(out)
    }

    pub fn transforms(&self) -> &[Pose] {
        &self.transforms
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }
}
