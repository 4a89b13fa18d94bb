//! Viewpoint retrieval: the template whose masked low-resolution feature map
//! has the highest cosine similarity to the query's.
//!
//! Maps are masked and flattened channel-major (no pooling, no per-position
//! normalization), so spatial layout contributes to the score.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CropTransform, Pose};
use crate::hyperfeatures::resize_bilinear;
use crate::tensor_store::{DepthImage, FeatureMap, MaskImage, NocsImage};

/// A rendered view of the object with known pose (model-to-camera).
///
/// `depth`, `nocs` and `mask` are at the template crop resolution; `intrinsics`
/// describe that crop.
#[derive(Debug, Clone)]
pub struct TemplateRecord {
    pub template_id: u32,
    pub features: BTreeMap<u32, FeatureMap>,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub depth: Option<DepthImage>,
    pub nocs: Option<NocsImage>,
    pub mask: MaskImage,
}

/// One detected object instance, cropped from a scene image.
#[derive(Debug, Clone)]
pub struct QueryCrop {
    pub crop_id: String,
    pub features: BTreeMap<u32, FeatureMap>,
    /// Object mask at crop resolution.
    pub mask: MaskImage,
    pub crop_transform: CropTransform,
    pub scene_intrinsics: CameraIntrinsics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub template_id: u32,
    pub score: f64,
    /// `(template_id, score)`, descending by score, ties by ascending id.
    pub ranked_scores: Vec<(u32, f64)>,
}

/// Zeroes background positions and flattens channel-major. `mask` is
/// resampled to the map's grid with the keep-if-any-covered rule.
pub fn masked_embedding(fm: &FeatureMap, mask: &MaskImage) -> Result<Vec<f64>> {
    let m = mask.resample(fm.height, fm.width);
    if m.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let plane = fm.height * fm.width;
    Ok(fm
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if m.data[i % plane] { v as f64 } else { 0.0 })
        .collect())
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch(format!("{} vs {} elements", a.len(), b.len())));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na <= 1e-12 || nb <= 1e-12 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn match_template(
    query: &QueryCrop,
    templates: &[TemplateRecord],
    layer: u32,
) -> Result<MatchResult> {
    if templates.is_empty() {
        return Err(Error::NoTemplates);
    }
    let qf = query.features.get(&layer).ok_or(Error::MissingLayer(layer))?;
    let qe = masked_embedding(qf, &query.mask)?;

    let mut ranked = templates
        .par_iter()
        .map(|t| {
            let tf = t.features.get(&layer).ok_or(Error::MissingLayer(layer))?;
            if tf.channels != qf.channels {
                return Err(Error::DimMismatch(format!(
                    "template {} has {} channels at layer {layer}, query has {}",
                    t.template_id, tf.channels, qf.channels
                )));
            }
            let te = if (tf.height, tf.width) == (qf.height, qf.width) {
                masked_embedding(tf, &t.mask)?
            } else {
                masked_embedding(&resize_bilinear(tf, qf.height, qf.width), &t.mask)?
            };
            Ok((t.template_id, cosine_similarity(&qe, &te)?))
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(MatchResult {
        template_id: ranked[0].0,
        score: ranked[0].1,
        ranked_scores: ranked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn template(id: u32, fm: FeatureMap) -> TemplateRecord {
        let (h, w) = (fm.height, fm.width);
        TemplateRecord {
            template_id: id,
            features: BTreeMap::from([(2, fm)]),
            pose: Pose::identity(),
            intrinsics: CameraIntrinsics::new(100.0, 100.0, 4.0, 4.0, 8, 8).unwrap(),
            depth: None,
            nocs: None,
            mask: MaskImage::filled(w, h, true),
        }
    }

    fn query(fm: FeatureMap) -> QueryCrop {
        let (h, w) = (fm.height, fm.width);
        QueryCrop {
            crop_id: "q".into(),
            features: BTreeMap::from([(2, fm)]),
            mask: MaskImage::filled(w, h, true),
            crop_transform: CropTransform::identity(),
            scene_intrinsics: CameraIntrinsics::new(100.0, 100.0, 4.0, 4.0, 8, 8).unwrap(),
        }
    }

    fn random_map(rng: &mut impl Rng) -> FeatureMap {
        FeatureMap::new(2, 6, 4, 4, (0..96).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn embedding_examples() {
        let fm = FeatureMap::new(2, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let all = MaskImage::filled(2, 2, true);
        assert_eq!(masked_embedding(&fm, &all).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        let none = MaskImage::filled(2, 2, false);
        assert!(matches!(masked_embedding(&fm, &none), Err(Error::EmptyMask)));
        let left = MaskImage::new(2, 2, vec![true, false, true, false]).unwrap();
        assert_eq!(masked_embedding(&fm, &left).unwrap(), vec![1.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
        assert!((s - 8.0 / 9.0).abs() < 1e-15);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm)));
    }

    #[test]
    fn self_match_and_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let templates: Vec<_> = (0..300).map(|i| template(i, random_map(&mut rng))).collect();
        let q = query(templates[17].features[&2].clone());
        let r = match_template(&q, &templates, 2).unwrap();
        assert_eq!((r.template_id, r.score), (17, 1.0));

        let base = &templates[17].features[&2];
        let rms = (base.data().iter().map(|v| v * v).sum::<f32>() / 96.0).sqrt();
        let noisy: Vec<f32> = base
            .data()
            .iter()
            .map(|v| v + rng.random_range(-0.01..0.01) * rms)
            .collect();
        let q = query(FeatureMap::new(2, 6, 4, 4, noisy).unwrap());
        let r = match_template(&q, &templates, 2).unwrap();
        // exhaustive oracle
        let qe: Vec<f64> = q.features[&2].data().iter().map(|&v| v as f64).collect();
        let mut best = (0u32, f64::MIN);
        for t in &templates {
            let te: Vec<f64> = t.features[&2].data().iter().map(|&v| v as f64).collect();
            let dot: f64 = qe.iter().zip(&te).map(|(a, b)| a * b).sum();
            let s = dot
                / (qe.iter().map(|a| a * a).sum::<f64>().sqrt()
                    * te.iter().map(|a| a * a).sum::<f64>().sqrt());
            if s > best.1 {
                best = (t.template_id, s);
            }
        }
        assert_eq!(r.template_id, 17);
        assert_eq!(best.0, 17);
        assert!((r.score - best.1).abs() < 1e-12);
        assert!(r.ranked_scores.windows(2).all(|w| w[0].1 >= w[1].1));
        assert_eq!(r.ranked_scores[0].1, r.score);
    }

    #[test]
    fn scaling_query_keeps_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let templates: Vec<_> = (0..20).map(|i| template(i, random_map(&mut rng))).collect();
        let q = query(random_map(&mut rng));
        let base = match_template(&q, &templates, 2).unwrap();
        for c in [1e-3f32, 0.5, 7.0, 1e3] {
            let scaled: Vec<f32> = q.features[&2].data().iter().map(|v| v * c).collect();
            let qs = query(FeatureMap::new(2, 6, 4, 4, scaled).unwrap());
            assert_eq!(match_template(&qs, &templates, 2).unwrap().template_id, base.template_id);
        }
    }

    #[test]
    fn ties_break_to_lowest_id() {
        let fm = FeatureMap::new(2, 1, 1, 2, vec![1.0, 2.0]).unwrap();
        let templates = vec![template(9, fm.clone()), template(4, fm.clone())];
        assert_eq!(match_template(&query(fm), &templates, 2).unwrap().template_id, 4);
    }

    #[test]
    fn errors() {
        let fm = FeatureMap::new(2, 1, 1, 2, vec![1.0, 2.0]).unwrap();
        assert!(matches!(match_template(&query(fm.clone()), &[], 2), Err(Error::NoTemplates)));
        let mut q = query(fm.clone());
        q.mask = MaskImage::filled(2, 1, false);
        assert!(matches!(
            match_template(&q, &[template(0, fm.clone())], 2),
            Err(Error::EmptyMask)
        ));
        assert!(matches!(
            match_template(&query(fm.clone()), &[template(0, fm)], 5),
            Err(Error::MissingLayer(5))
        ));
    }

    #[test]
    fn mismatched_template_grid_is_resampled() {
        let q = FeatureMap::new(2, 1, 2, 2, vec![1.0; 4]).unwrap();
        let t = FeatureMap::new(2, 1, 4, 4, vec![3.0; 16]).unwrap();
        let r = match_template(&query(q), &[template(1, t)], 2).unwrap();
        assert!((r.score - 1.0).abs() < 1e-12);
    }
}
