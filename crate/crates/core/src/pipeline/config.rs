//! Plain-text `key = value` configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hyperfeatures::ProjectionMode;
use crate::pose::lift::MapLookup;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Denoising timestep the features were extracted at (checked against the manifest).
    pub timestep: u32,
    pub layers: Vec<u32>,
    /// Layer used for template retrieval.
    pub match_layer: u32,
    pub pca_dim: usize,
    pub clusters: usize,
    pub top_k: usize,
    pub kernel: usize,
    pub crop_size: u32,
    pub n_templates: usize,
    pub ransac_px: f64,
    pub pnp_iters: usize,
    /// Levenberg-Marquardt polish of each RANSAC refit.
    pub pnp_refine: bool,
    pub cluster_sim_floor: f64,
    pub sampson_thresh: f64,
    pub seed: u64,
    /// Fit one PCA basis per layer on both images; `false` projects each image on its own basis.
    pub coprojection: bool,
    /// Match within k-means clusters; `false` runs mutual nearest neighbors over all positions.
    pub clustering: bool,
    pub epipolar_filter: bool,
    pub epipolar_iters: usize,
    pub subpixel: bool,
    /// Square padding added around a detection box, as a fraction of its longer side.
    pub crop_margin: f64,
    /// Millimeters per unit of the 16-bit depth PNGs.
    pub depth_scale: f64,
    /// Write per-query wall time into the results CSV; `false` writes `-1`.
    pub record_time: bool,
    /// Vertex cap for MSSD/MSPD (farthest-point subsample above it).
    pub max_metric_vertices: usize,
    /// Sampling of template NOCS/depth maps at refined positions.
    pub lift_lookup: MapLookup,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            timestep: 50,
            layers: vec![2, 5, 8, 11],
            match_layer: 2,
            pca_dim: 64,
            clusters: 200,
            top_k: 10,
            kernel: 3,
            crop_size: 128,
            n_templates: 300,
            ransac_px: 3.0,
            pnp_iters: 1000,
            pnp_refine: true,
            cluster_sim_floor: 0.5,
            sampson_thresh: 2.0,
            seed: 0,
            coprojection: true,
            clustering: true,
            epipolar_filter: true,
            epipolar_iters: 500,
            subpixel: true,
            crop_margin: 0.1,
            depth_scale: 1.0,
            record_time: true,
            max_metric_vertices: 1000,
            lift_lookup: MapLookup::Bilinear,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {v:?} for {key}"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<u32>> {
    let inner = v.trim().trim_start_matches('[').trim_end_matches(']');
    inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl PipelineConfig {
    pub fn projection_mode(&self) -> ProjectionMode {
        if self.coprojection {
            ProjectionMode::Joint
        } else {
            ProjectionMode::Independent
        }
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "timestep" => self.timestep = parse(key, v)?,
            "layers" => self.layers = parse_list(key, v)?,
            "match_layer" => self.match_layer = parse(key, v)?,
            "pca_dim" => self.pca_dim = parse(key, v)?,
            "clusters" => self.clusters = parse(key, v)?,
            "top_k" => self.top_k = parse(key, v)?,
            "kernel" => self.kernel = parse(key, v)?,
            "crop_size" => self.crop_size = parse(key, v)?,
            "n_templates" => self.n_templates = parse(key, v)?,
            "ransac_px" => self.ransac_px = parse(key, v)?,
            "pnp_iters" => self.pnp_iters = parse(key, v)?,
            "pnp_refine" => self.pnp_refine = parse_bool(key, v)?,
            "cluster_sim_floor" => self.cluster_sim_floor = parse(key, v)?,
            "sampson_thresh" => self.sampson_thresh = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "coprojection" => self.coprojection = parse_bool(key, v)?,
            "clustering" => self.clustering = parse_bool(key, v)?,
            "epipolar_filter" => self.epipolar_filter = parse_bool(key, v)?,
            "epipolar_iters" => self.epipolar_iters = parse(key, v)?,
            "subpixel" => self.subpixel = parse_bool(key, v)?,
            "crop_margin" => self.crop_margin = parse(key, v)?,
            "depth_scale" => self.depth_scale = parse(key, v)?,
            "record_time" => self.record_time = parse_bool(key, v)?,
            "max_metric_vertices" => self.max_metric_vertices = parse(key, v)?,
            "lift_lookup" => self.lift_lookup = v.parse()?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines over the current values, then validates.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        self.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.layers.is_empty() {
            return bad("layers must not be empty");
        }
        if !self.layers.contains(&self.match_layer) {
            return bad("match_layer must be one of layers");
        }
        if self.kernel % 2 == 0 {
            return bad("kernel must be odd");
        }
        let counts = [
            self.timestep as usize,
            self.pca_dim,
            self.clusters,
            self.top_k,
            self.kernel,
            self.crop_size as usize,
            self.n_templates,
            self.pnp_iters,
            self.epipolar_iters,
            self.max_metric_vertices,
        ];
        if counts.contains(&0) {
            return bad("counts must be positive");
        }
        let reals = [self.ransac_px, self.sampson_thresh, self.depth_scale];
        if reals.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("ransac_px, sampson_thresh and depth_scale must be positive");
        }
        if !(self.crop_margin.is_finite() && self.crop_margin >= 0.0) {
            return bad("crop_margin must be non-negative");
        }
        if !(-1.0..=1.0).contains(&self.cluster_sim_floor) {
            return bad("cluster_sim_floor must lie in [-1, 1]");
        }
        Ok(())
    }

    /// Serializes every key; `from_text(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let layers: Vec<String> = self.layers.iter().map(u32::to_string).collect();
        let _ = writeln!(s, "timestep = {}", self.timestep);
        let _ = writeln!(s, "layers = {}", layers.join(","));
        let _ = writeln!(s, "match_layer = {}", self.match_layer);
        let _ = writeln!(s, "pca_dim = {}", self.pca_dim);
        let _ = writeln!(s, "clusters = {}", self.clusters);
        let _ = writeln!(s, "top_k = {}", self.top_k);
        let _ = writeln!(s, "kernel = {}", self.kernel);
        let _ = writeln!(s, "crop_size = {}", self.crop_size);
        let _ = writeln!(s, "n_templates = {}", self.n_templates);
        let _ = writeln!(s, "ransac_px = {:?}", self.ransac_px);
        let _ = writeln!(s, "pnp_iters = {}", self.pnp_iters);
        let _ = writeln!(s, "pnp_refine = {}", self.pnp_refine);
        let _ = writeln!(s, "cluster_sim_floor = {:?}", self.cluster_sim_floor);
        let _ = writeln!(s, "sampson_thresh = {:?}", self.sampson_thresh);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "coprojection = {}", self.coprojection);
        let _ = writeln!(s, "clustering = {}", self.clustering);
        let _ = writeln!(s, "epipolar_filter = {}", self.epipolar_filter);
        let _ = writeln!(s, "epipolar_iters = {}", self.epipolar_iters);
        let _ = writeln!(s, "subpixel = {}", self.subpixel);
        let _ = writeln!(s, "crop_margin = {:?}", self.crop_margin);
        let _ = writeln!(s, "depth_scale = {:?}", self.depth_scale);
        let _ = writeln!(s, "record_time = {}", self.record_time);
        let _ = writeln!(s, "max_metric_vertices = {}", self.max_metric_vertices);
        let _ = writeln!(s, "lift_lookup = {}", self.lift_lookup);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!((c.pca_dim, c.clusters, c.kernel, c.n_templates), (64, 200, 3, 300));
    }

    #[test]
    fn text_round_trip() {
        let mut c = PipelineConfig::default();
        c.layers = vec![2, 8];
        c.ransac_px = 2.5;
        c.coprojection = false;
        c.pnp_refine = false;
        c.lift_lookup = MapLookup::Nearest;
        assert_eq!(PipelineConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn parses_comments_and_lists() {
        let c = PipelineConfig::from_text("# tuned\nlayers = [2, 5]\n\nmatch_layer = 5  # retrieval\n").unwrap();
        assert_eq!(c.layers, vec![2, 5]);
        assert_eq!(c.match_layer, 5);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        for text in [
            "pca_dims = 3",
            "kernel = 4",
            "match_layer = 7",
            "clusters = 0",
            "ransac_px = -1",
            "clustering = maybe",
            "lift_lookup = cubic",
            "no equals sign",
        ] {
            assert!(matches!(PipelineConfig::from_text(text), Err(Error::Config(_))), "{text}");
        }
    }
}
