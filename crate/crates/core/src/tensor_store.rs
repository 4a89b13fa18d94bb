//! Feature tensor interchange and image assets.
//!
//! Feature files (`.dfm`) are laid out as:
//!
//! | bytes | content |
//! |-------|---------|
//! | 0..4  | magic `DFM1` |
//! | 4     | version, `1` |
//! | 5     | dtype, `0` = f32 |
//! | 6..8  | reserved, zero |
//! | 8..24 | `layer_id, channels, height, width` as little-endian u32 |
//! | 24..  | `channels·height·width` little-endian f32, channel-major then row then column |
//!
//! One file per layer per crop, named `<crop_id>_L<layer>.dfm`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DFM1";
pub const VERSION: u8 = 1;
const DTYPE_F32: u8 = 0;
const HEADER_LEN: usize = 24;

/// Dense `C×H×W` activations of one backbone layer for one crop.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub layer_id: u32,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(
        layer_id: u32,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::DimMismatch(format!(
                "feature map dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::DimMismatch(format!(
                "{} values for a {channels}x{height}x{width} map",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        Ok(Self {
            layer_id,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(layer_id: u32, channels: usize, height: usize, width: usize) -> Self {
        Self {
            layer_id,
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Channel vector at one spatial position (a strided gather).
    pub fn vector_at(&self, y: usize, x: usize) -> Vec<f32> {
        let plane = self.height * self.width;
        let base = y * self.width + x;
        (0..self.channels).map(|c| self.data[c * plane + base]).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[VERSION, DTYPE_F32, 0, 0]);
        for v in [self.layer_id, self.channels as u32, self.height as u32, self.width as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::TruncatedFile {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        if bytes[4] != VERSION {
            return Err(Error::VersionMismatch(bytes[4]));
        }
        if bytes[5] != DTYPE_F32 {
            return Err(Error::UnsupportedBitDepth(format!("feature dtype {}", bytes[5])));
        }
        let word = |i: usize| {
            u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize
        };
        let (layer_id, channels, height, width) = (word(0) as u32, word(1), word(2), word(3));
        let count = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::DimMismatch("feature dims overflow".into()))?;
        let expected = HEADER_LEN + 4 * count;
        if bytes.len() < expected {
            return Err(Error::TruncatedFile {
                expected,
                found: bytes.len(),
            });
        }
        let data = bytes[HEADER_LEN..expected]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(layer_id, channels, height, width, data)
    }
}

pub fn write_feature_map(fm: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, fm.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureMap::from_bytes(&bytes)
}

/// `<dir>/<crop_id>_L<layer>.dfm`
pub fn feature_path(dir: &Path, crop_id: &str, layer: u32) -> PathBuf {
    dir.join(format!("{crop_id}_L{layer}.dfm"))
}

/// Binary per-pixel occupancy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimMismatch(format!(
                "{} mask values for {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Resamples to `height × width`. A target cell is foreground if any source
    /// pixel it covers is foreground; when upsampling this is nearest-neighbor.
    pub fn resample(&self, height: usize, width: usize) -> MaskImage {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let span = |g: usize, src: usize, dst: usize| {
            let lo = g * src / dst;
            let hi = ((g + 1) * src).div_ceil(dst).max(lo + 1).min(src);
            lo..hi
        };
        let mut data = vec![false; height * width];
        for gy in 0..height {
            let ys = span(gy, self.height, height);
            for gx in 0..width {
                let xs = span(gx, self.width, width);
                data[gy * width + gx] =
                    ys.clone().any(|y| xs.clone().any(|x| self.data[y * self.width + x]));
            }
        }
        MaskImage {
            width,
            height,
            data,
        }
    }
}

/// Per-pixel scalar in millimeters; zero means no surface. Also used for distance maps.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mask(&self) -> MaskImage {
        MaskImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&d| d > 0.0).collect(),
        }
    }
}

/// Per-pixel normalized object coordinates in `[0, 1]³`.
#[derive(Debug, Clone, PartialEq)]
pub struct NocsImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl NocsImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    /// Packs the map into a 3-channel feature map.
    pub fn to_feature_map(&self, layer_id: u32) -> FeatureMap {
        let mut fm = FeatureMap::zeros(layer_id, 3, self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(x, y);
                for (c, &vc) in v.iter().enumerate() {
                    fm.set(c, y, x, vc as f32);
                }
            }
        }
        fm
    }
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader
        .decode()
        .map_err(|e| Error::DecodeError(format!("{}: {e}", path.display())))
}

/// 8-bit single-channel mask; any nonzero value is foreground.
pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskImage> {
    match open_image(path.as_ref())? {
        image::DynamicImage::ImageLuma8(img) => {
            let (w, h) = img.dimensions();
            MaskImage::new(
                w as usize,
                h as usize,
                img.into_raw().into_iter().map(|v| v > 0).collect(),
            )
        }
        other => Err(Error::UnsupportedBitDepth(format!(
            "mask must be 8-bit single channel, got {:?}",
            other.color()
        ))),
    }
}

/// 16-bit single-channel depth; `depth_scale` converts stored units to millimeters.
pub fn read_depth(path: impl AsRef<Path>, depth_scale: f64) -> Result<DepthImage> {
    match open_image(path.as_ref())? {
        image::DynamicImage::ImageLuma16(img) => {
            let (w, h) = img.dimensions();
            Ok(DepthImage {
                width: w as usize,
                height: h as usize,
                data: img
                    .into_raw()
                    .into_iter()
                    .map(|v| v as f64 * depth_scale)
                    .collect(),
            })
        }
        other => Err(Error::UnsupportedBitDepth(format!(
            "depth must be 16-bit single channel, got {:?}",
            other.color()
        ))),
    }
}

/// 8-bit RGB NOCS map; each byte is divided by 255.
pub fn read_nocs(path: impl AsRef<Path>) -> Result<NocsImage> {
    match open_image(path.as_ref())? {
        image::DynamicImage::ImageRgb8(img) => {
            let (w, h) = img.dimensions();
            Ok(NocsImage {
                width: w as usize,
                height: h as usize,
                data: img
                    .pixels()
                    .map(|p| p.0.map(|c| c as f64 / 255.0))
                    .collect(),
            })
        }
        other => Err(Error::UnsupportedBitDepth(format!(
            "NOCS map must be 8-bit RGB, got {:?}",
            other.color()
        ))),
    }
}

fn save(path: &Path, result: image::ImageResult<()>) -> Result<()> {
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::DecodeError(format!("{}: {other}", path.display())),
    })
}

pub fn write_mask(mask: &MaskImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw = mask.data.iter().map(|&b| if b { 255u8 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(mask.width as u32, mask.height as u32, raw)
        .expect("mask buffer size");
    save(path, img.save_with_format(path, image::ImageFormat::Png))
}

/// Stores `round(mm / depth_scale)` as 16-bit values, saturating at `u16::MAX`.
pub fn write_depth(depth: &DepthImage, depth_scale: f64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw = depth
        .data
        .iter()
        .map(|&d| (d / depth_scale).round().clamp(0.0, u16::MAX as f64) as u16)
        .collect();
    let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
        depth.width as u32,
        depth.height as u32,
        raw,
    )
    .expect("depth buffer size");
    save(path, img.save_with_format(path, image::ImageFormat::Png))
}

pub fn write_nocs(nocs: &NocsImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw = nocs
        .data
        .iter()
        .flat_map(|v| v.map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8))
        .collect();
    let img = image::RgbImage::from_raw(nocs.width as u32, nocs.height as u32, raw)
        .expect("nocs buffer size");
    save(path, img.save_with_format(path, image::ImageFormat::Png))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp() -> FeatureMap {
        FeatureMap::new(2, 2, 2, 2, (0..8).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn roundtrip_small_map() {
        let dir = tempfile::tempdir().unwrap();
        let path = feature_path(dir.path(), "crop", 2);
        write_feature_map(&ramp(), &path).unwrap();
        assert_eq!(read_feature_map(&path).unwrap(), ramp());
        assert!(path.ends_with("crop_L2.dfm"));
    }

    #[test]
    fn exact_header_bytes() {
        let b = ramp().to_bytes();
        assert_eq!(&b[..8], b"DFM1\x01\x00\x00\x00");
        assert_eq!(&b[8..24], &[2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(b.len(), 24 + 32);
        assert_eq!(&b[28..32], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_bad_files() {
        let mut b = ramp().to_bytes();
        b[0] = b'X';
        assert!(matches!(FeatureMap::from_bytes(&b), Err(Error::BadMagic)));

        let mut b = ramp().to_bytes();
        b[4] = 2;
        assert!(matches!(FeatureMap::from_bytes(&b), Err(Error::VersionMismatch(2))));

        let b = ramp().to_bytes();
        assert!(matches!(
            FeatureMap::from_bytes(&b[..b.len() - 4]),
            Err(Error::TruncatedFile { .. })
        ));

        let mut b = ramp().to_bytes();
        b[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(FeatureMap::from_bytes(&b), Err(Error::NonFiniteValue(0))));
        let mut b = ramp().to_bytes();
        b[28..32].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(FeatureMap::from_bytes(&b), Err(Error::NonFiniteValue(1))));
    }

    #[test]
    fn strided_gather() {
        assert_eq!(ramp().vector_at(1, 0), vec![2.0, 6.0]);
    }

    #[test]
    fn mask_io() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        write_mask(&MaskImage::filled(4, 4, false), &p).unwrap();
        let m = read_mask(&p).unwrap();
        assert_eq!((m.width, m.height, m.count()), (4, 4, 0));
    }

    #[test]
    fn depth_scale_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let img =
            image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(1, 1, vec![1500]).unwrap();
        img.save(&p).unwrap();
        let d = read_depth(&p, 0.1).unwrap();
        assert!((d.data[0] - 150.0).abs() < 1e-12);
        assert!(matches!(read_mask(&p), Err(Error::UnsupportedBitDepth(_))));
    }

    #[test]
    fn nocs_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.png");
        image::RgbImage::from_raw(1, 1, vec![255, 0, 128]).unwrap().save(&p).unwrap();
        let n = read_nocs(&p).unwrap();
        assert_eq!(n.data[0], [1.0, 0.0, 128.0 / 255.0]);
    }

    #[test]
    fn garbage_image_is_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        std::fs::write(&p, b"\x89PNG\r\n\x1a\nnot really").unwrap();
        assert!(matches!(read_mask(&p), Err(Error::DecodeError(_))));
    }

    #[test]
    fn resample_keeps_thin_structures() {
        let mut m = MaskImage::filled(8, 8, false);
        m.data[3 * 8 + 5] = true;
        let r = m.resample(2, 2);
        // pixel (x=5, y=3) lies in the top-right block
        assert_eq!(r.data, vec![false, true, false, false]);
        let up = r.resample(4, 4);
        assert_eq!(up.count(), 4);
        assert!(up.get(2, 0) && up.get(3, 1));
    }

    proptest! {
        #[test]
        fn serialization_is_deterministic_and_lossless(
            dims in (1usize..4, 1usize..5, 1usize..5),
            seed in any::<u64>(),
        ) {
            let (c, h, w) = dims;
            let data: Vec<f32> = (0..c * h * w)
                .map(|i| f32::from_bits((seed.wrapping_mul(i as u64 + 1) >> 7) as u32 & 0x3fff_ffff))
                .collect();
            let fm = FeatureMap::new(11, c, h, w, data).unwrap();
            let a = fm.to_bytes();
            prop_assert_eq!(&a, &fm.to_bytes());
            let back = FeatureMap::from_bytes(&a).unwrap();
            prop_assert_eq!(back.to_bytes(), a);
        }
    }
}
