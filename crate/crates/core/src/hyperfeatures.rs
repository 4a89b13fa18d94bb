//! Joint query/template hyperfeature space.
//!
//! For each configured layer a PCA basis is fitted on the foreground channel
//! vectors of *both* images, both maps are projected with that one basis,
//! upsampled to the finest grid and concatenated in ascending layer order.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor_store::{FeatureMap, MaskImage};
use crate::template_match::{QueryCrop, TemplateRecord};

/// PCA basis shared by the query and template maps of one layer.
#[derive(Debug, Clone)]
pub struct CoProjection {
    pub layer_id: u32,
    pub mean: Vec<f64>,
    /// `channels × pca_dim`, orthonormal columns; each column's largest-magnitude entry is positive.
    pub basis: DMatrix<f64>,
    /// Descending.
    pub explained_variance: Vec<f64>,
}

impl CoProjection {
    pub fn channels(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `(x − mean) · basis`
    pub fn project_vector(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|k| {
                self.basis
                    .column(k)
                    .iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(b, (v, m))| b * (v - m))
                    .sum()
            })
            .collect()
    }

    /// `mean + basis · y`
    pub fn reconstruct_vector(&self, y: &[f64]) -> Vec<f64> {
        (0..self.channels())
            .map(|c| {
                self.mean[c]
                    + self
                        .basis
                        .row(c)
                        .iter()
                        .zip(y)
                        .map(|(b, v)| b * v)
                        .sum::<f64>()
            })
            .collect()
    }
}

/// How each layer's projection basis is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectionMode {
    /// One basis fitted on the union of both images (co-projection).
    #[default]
    Joint,
    /// Each image projected with a basis fitted on itself alone (ablation).
    Independent,
}

/// Concatenated, dimensionality-reduced features on one spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperfeatureMap {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    /// Position-major: the `dim` values of position `(y, x)` start at `(y * width + x) * dim`.
    pub data: Vec<f64>,
    /// Foreground positions at this grid's resolution.
    pub mask: MaskImage,
}

impl HyperfeatureMap {
    #[inline]
    pub fn vector(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.dim;
        &self.data[i..i + self.dim]
    }

    /// Foreground `(y, x)` positions in row-major order.
    pub fn foreground_positions(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (y, x)))
            .filter(|&(y, x)| self.mask.get(x, y))
            .collect()
    }

    /// Builds a map from per-position vectors (test and tooling helper).
    pub fn from_vectors(
        height: usize,
        width: usize,
        vectors: &[Vec<f64>],
        mask: MaskImage,
    ) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        if vectors.len() != height * width || vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::DimMismatch("hyperfeature vectors do not match grid".into()));
        }
        Ok(Self {
            height,
            width,
            dim,
            data: vectors.concat(),
            mask,
        })
    }
}

fn foreground_samples(fm: &FeatureMap, mask: &MaskImage, out: &mut Vec<Vec<f64>>) {
    let m = mask.resample(fm.height, fm.width);
    for y in 0..fm.height {
        for x in 0..fm.width {
            if m.get(x, y) {
                out.push(fm.vector_at(y, x).into_iter().map(f64::from).collect());
            }
        }
    }
}

/// PCA on sample vectors via eigendecomposition of the `d × d` covariance.
pub fn fit_pca(layer_id: u32, samples: &[Vec<f64>], pca_dim: usize) -> Result<CoProjection> {
    let n = samples.len();
    if pca_dim == 0 {
        return Err(Error::DimMismatch("pca_dim must be positive".into()));
    }
    if n < pca_dim.max(2) {
        return Err(Error::InsufficientSamples {
            needed: pca_dim.max(2),
            got: n,
        });
    }
    let d = samples[0].len();
    if pca_dim > d {
        return Err(Error::DimMismatch(format!("pca_dim {pca_dim} exceeds {d} channels")));
    }
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, d, |i, j| samples[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = DMatrix::zeros(d, pca_dim);
    let mut explained_variance = Vec::with_capacity(pca_dim);
    for (k, &src) in order.iter().take(pca_dim).enumerate() {
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..d {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        basis.set_column(k, &(col * sign));
        explained_variance.push(eig.eigenvalues[src].max(0.0));
    }
    Ok(CoProjection {
        layer_id,
        mean,
        basis,
        explained_variance,
    })
}

/// Fits one basis on the union of both maps' foreground channel vectors.
pub fn fit_coprojection(
    query: &FeatureMap,
    query_mask: &MaskImage,
    template: &FeatureMap,
    template_mask: &MaskImage,
    pca_dim: usize,
) -> Result<CoProjection> {
    if query.channels != template.channels {
        return Err(Error::DimMismatch(format!(
            "layer {}: query has {} channels, template {}",
            query.layer_id, query.channels, template.channels
        )));
    }
    let mut samples = Vec::new();
    foreground_samples(query, query_mask, &mut samples);
    foreground_samples(template, template_mask, &mut samples);
    fit_pca(query.layer_id, &samples, pca_dim)
}

/// Projects every position (foreground or not) onto the basis.
pub fn apply_coprojection(cp: &CoProjection, fm: &FeatureMap) -> Result<FeatureMap> {
    if fm.channels != cp.channels() {
        return Err(Error::DimMismatch(format!(
            "map has {} channels, projection expects {}",
            fm.channels,
            cp.channels()
        )));
    }
    let mut out = FeatureMap::zeros(fm.layer_id, cp.dim(), fm.height, fm.width);
    let mut x = vec![0.0; fm.channels];
    for y in 0..fm.height {
        for xx in 0..fm.width {
            for (c, v) in x.iter_mut().enumerate() {
                *v = fm.get(c, y, xx) as f64;
            }
            for (k, p) in cp.project_vector(&x).into_iter().enumerate() {
                out.set(k, y, xx, p as f32);
            }
        }
    }
    Ok(out)
}

/// Bilinear resampling with half-pixel centers:
/// `src = (dst + 0.5) · in / out − 0.5`, clamped to the source grid.
pub fn resize_bilinear(fm: &FeatureMap, height: usize, width: usize) -> FeatureMap {
    if (height, width) == (fm.height, fm.width) {
        return fm.clone();
    }
    let taps = |dst: usize, n_in: usize, n_out: usize| {
        let s = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let ys: Vec<_> = (0..height).map(|y| taps(y, fm.height, height)).collect();
    let xs: Vec<_> = (0..width).map(|x| taps(x, fm.width, width)).collect();
    let mut out = FeatureMap::zeros(fm.layer_id, fm.channels, height, width);
    for c in 0..fm.channels {
        for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = fm.get(c, y0, x0) as f64 * (1.0 - fx) + fm.get(c, y0, x1) as f64 * fx;
                let bot = fm.get(c, y1, x0) as f64 * (1.0 - fx) + fm.get(c, y1, x1) as f64 * fx;
                out.set(c, y, x, (top * (1.0 - fy) + bot * fy) as f32);
            }
        }
    }
    out
}

/// Upsampling entry point; identical to [`resize_bilinear`].
pub fn upsample_bilinear(fm: &FeatureMap, height: usize, width: usize) -> FeatureMap {
    resize_bilinear(fm, height, width)
}

/// Builds the query and template hyperfeature maps on the query's finest grid.
pub fn assemble(
    query: &QueryCrop,
    template: &TemplateRecord,
    layers: &[u32],
    pca_dim: usize,
    mode: ProjectionMode,
) -> Result<(HyperfeatureMap, HyperfeatureMap)> {
    let mut sorted = layers.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut pairs = Vec::with_capacity(sorted.len());
    for &l in &sorted {
        let q = query.features.get(&l).ok_or(Error::MissingLayer(l))?;
        let t = template.features.get(&l).ok_or(Error::MissingLayer(l))?;
        pairs.push((q, t));
    }
    let (height, width) = pairs
        .iter()
        .map(|(q, _)| (q.height, q.width))
        .max_by_key(|&(h, w)| (h * w, h))
        .ok_or_else(|| Error::Config("no feature layers configured".into()))?;

    let mut q_parts = Vec::with_capacity(pairs.len());
    let mut t_parts = Vec::with_capacity(pairs.len());
    for (q, t) in pairs {
        let (qp, tp) = match mode {
            ProjectionMode::Joint => {
                let cp = fit_coprojection(q, &query.mask, t, &template.mask, pca_dim)?;
                (apply_coprojection(&cp, q)?, apply_coprojection(&cp, t)?)
            }
            ProjectionMode::Independent => {
                let mut qs = Vec::new();
                foreground_samples(q, &query.mask, &mut qs);
                let mut ts = Vec::new();
                foreground_samples(t, &template.mask, &mut ts);
                let qcp = fit_pca(q.layer_id, &qs, pca_dim)?;
                let tcp = fit_pca(t.layer_id, &ts, pca_dim)?;
                (apply_coprojection(&qcp, q)?, apply_coprojection(&tcp, t)?)
            }
        };
        q_parts.push(resize_bilinear(&qp, height, width));
        t_parts.push(resize_bilinear(&tp, height, width));
    }
    Ok((
        concat(&q_parts, query.mask.resample(height, width)),
        concat(&t_parts, template.mask.resample(height, width)),
    ))
}

fn concat(parts: &[FeatureMap], mask: MaskImage) -> HyperfeatureMap {
    let (height, width) = (parts[0].height, parts[0].width);
    let dim: usize = parts.iter().map(|p| p.channels).sum();
    let mut data = Vec::with_capacity(height * width * dim);
    for y in 0..height {
        for x in 0..width {
            for p in parts {
                data.extend((0..p.channels).map(|c| p.get(c, y, x) as f64));
            }
        }
    }
    HyperfeatureMap {
        height,
        width,
        dim,
        data,
        mask,
    }
}
