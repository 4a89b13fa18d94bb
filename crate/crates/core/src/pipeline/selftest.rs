//! End-to-end check of the estimator on the synthetic fixture.

use std::fmt::Write as _;

use rayon::prelude::*;

use super::bop::PoseResult;
use super::config::PipelineConfig;
use super::dataset::{FIXTURE_OBJECT, FIXTURE_SCENE};
use super::fixture::{build_scene, FixtureParams, SyntheticScene};
use crate::error::Result;
use crate::geometry::{axis_angle, compose, Pose, SymmetrySet, Vec3};
use crate::metrics::{ar_score, e_mssd, error_record, ErrorRecord};
use crate::pose::{estimate_pose, PoseEstimate};
use crate::template_match::QueryCrop;

pub const MAX_ROTATION_DEG: f64 = 5.0;
/// Translation tolerance as a fraction of the object diameter.
pub const MAX_TRANSLATION_FRAC: f64 = 0.05;
pub const MIN_SUCCESSES: usize = 19;
pub const MIN_AR: f64 = 0.95;
/// Self-consistency tolerances: degrees and fraction of the diameter.
pub const SELF_ROTATION_DEG: f64 = 0.1;
pub const SELF_TRANSLATION_FRAC: f64 = 0.001;
/// Templates re-used verbatim as queries in the self-consistency check.
pub const SELF_CHECK_TEMPLATES: [u32; 4] = [0, 15, 30, 45];

/// Estimator settings used on the fixture: NOCS maps have three channels, so
/// the projection keeps all three.
pub fn fixture_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        pca_dim: 3,
        clusters: 50,
        n_templates: 60,
        seed,
        record_time: false,
        ..PipelineConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct SelftestOptions {
    pub fixture: FixtureParams,
    pub config: PipelineConfig,
    /// Rotate the recorded pose of the first self-check template by 10° (negative control).
    pub corrupt_template_pose: bool,
}

impl SelftestOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            fixture: FixtureParams {
                seed,
                ..FixtureParams::default()
            },
            config: fixture_config(seed),
            corrupt_template_pose: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub crop_id: String,
    pub gt: Pose,
    pub estimate: std::result::Result<PoseEstimate, String>,
    pub rotation_error_deg: f64,
    pub translation_error_mm: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub actual: String,
    pub expected: String,
}

#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub diameter: f64,
    pub outcomes: Vec<QueryOutcome>,
    pub records: Vec<ErrorRecord>,
    pub ar: f64,
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn successes(&self) -> usize {
        self.outcomes.iter().filter(|o| o.success).count()
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn similarity_evaluations(&self) -> usize {
        self.outcomes
            .iter()
            .filter_map(|o| o.estimate.as_ref().ok())
            .map(|e| e.stats.similarity_evaluations)
            .sum()
    }

    /// Deterministic plain-text report (no timings).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "query template inliers rot_err_deg trans_err_mm result");
        for o in &self.outcomes {
            match &o.estimate {
                Ok(e) => {
                    let _ = writeln!(
                        s,
                        "{} {} {} {:.4} {:.4} {}",
                        o.crop_id,
                        e.template_id.map_or(-1, i64::from),
                        e.inliers,
                        o.rotation_error_deg,
                        o.translation_error_mm,
                        if o.success { "ok" } else { "miss" }
                    );
                }
                Err(reason) => {
                    let _ = writeln!(s, "{} - 0 - - failed: {reason}", o.crop_id);
                }
            }
        }
        let _ = writeln!(s, "successes {}/{}", self.successes(), self.outcomes.len());
        let _ = writeln!(s, "ar {:.6}", self.ar);
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{status} {}: {} (need {})", c.name, c.actual, c.expected);
        }
        s
    }

    /// Posed queries as results rows, numbered the way `export_fixture` numbers images.
    pub fn results(&self) -> Vec<PoseResult> {
        self.outcomes
            .iter()
            .enumerate()
            .filter_map(|(i, o)| {
                let e = o.estimate.as_ref().ok()?;
                Some(PoseResult {
                    scene_id: FIXTURE_SCENE,
                    image_id: i as u32,
                    object_id: FIXTURE_OBJECT,
                    score: 1.0,
                    pose: e.pose,
                    time: -1.0,
                })
            })
            .collect()
    }

    /// `-` expected / `+` actual line pairs for every failed check.
    pub fn failure_diff(&self) -> String {
        let mut s = String::new();
        for c in self.failed_checks() {
            let _ = writeln!(s, "- {}: {}", c.name, c.expected);
            let _ = writeln!(s, "+ {}: {}", c.name, c.actual);
        }
        s
    }
}

fn errors(est: &Pose, gt: &Pose) -> (f64, f64) {
    (
        crate::metrics::rotation_error(&est.rotation, &gt.rotation),
        (est.translation - gt.translation).norm(),
    )
}

/// Estimates every fixture query and scores the results.
pub fn evaluate_queries(scene: &SyntheticScene, cfg: &PipelineConfig) -> Result<(Vec<QueryOutcome>, Vec<ErrorRecord>)> {
    let diameter = scene.mesh.diameter;
    let sym = SymmetrySet::identity_only();
    let results: Vec<_> = scene
        .queries
        .par_iter()
        .map(|q| {
            let est = estimate_pose(&q.crop, &scene.templates, &scene.mesh, cfg);
            let (outcome, record) = match est {
                Ok(e) => {
                    let (r, t) = errors(&e.pose, &q.gt);
                    let rec = error_record(
                        (0, 0, 1),
                        &e.pose,
                        &q.gt,
                        &scene.mesh,
                        &scene.mesh.vertices,
                        &sym,
                        &scene.intrinsics,
                        &q.scene.distance,
                    )?;
                    let success = r < MAX_ROTATION_DEG && t < MAX_TRANSLATION_FRAC * diameter;
                    (
                        QueryOutcome {
                            crop_id: q.crop.crop_id.clone(),
                            gt: q.gt,
                            estimate: Ok(e),
                            rotation_error_deg: r,
                            translation_error_mm: t,
                            success,
                        },
                        rec,
                    )
                }
                Err(err) => (
                    QueryOutcome {
                        crop_id: q.crop.crop_id.clone(),
                        gt: q.gt,
                        estimate: Err(format!("{}: {err}", err.kind())),
                        rotation_error_deg: f64::INFINITY,
                        translation_error_mm: f64::INFINITY,
                        success: false,
                    },
                    ErrorRecord::missing(0, 0, 1),
                ),
            };
            Ok((outcome, record))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(results.into_iter().unzip())
}

/// Runs the fixture through the estimator and checks the tolerances.
pub fn run_selftest(opts: &SelftestOptions) -> Result<SelftestReport> {
    let mut scene = build_scene(&opts.fixture)?;
    let diameter = scene.mesh.diameter;
    if opts.corrupt_template_pose {
        if let Some(t) = scene.templates.iter_mut().find(|t| t.template_id == SELF_CHECK_TEMPLATES[0]) {
            let twist = Pose {
                rotation: axis_angle(&Vec3::new(1.0, 0.0, 0.0), 10f64.to_radians()),
                translation: Vec3::zeros(),
            };
            t.pose = compose(&t.pose, &twist);
        }
    }

    let (outcomes, records) = evaluate_queries(&scene, &opts.config)?;
    let ar = ar_score(&records, |_| Some(diameter), scene.intrinsics.width)?.ar;
    let successes = outcomes.iter().filter(|o| o.success).count();
    let mut checks = vec![
        Check {
            name: "pose-success",
            passed: successes >= MIN_SUCCESSES,
            actual: format!(
                "{successes}/{} within {MAX_ROTATION_DEG}° and {:.2} mm",
                outcomes.len(),
                MAX_TRANSLATION_FRAC * diameter
            ),
            expected: format!(">= {MIN_SUCCESSES}"),
        },
        Check {
            name: "average-recall",
            passed: ar >= MIN_AR,
            actual: format!("AR {ar:.4}"),
            expected: format!(">= {MIN_AR}"),
        },
    ];

    // a template used as its own query must give back its recorded pose
    let mut worst_rot: f64 = 0.0;
    let mut worst_trans: f64 = 0.0;
    let mut worst_mssd: f64 = 0.0;
    let mut failures = Vec::new();
    for id in SELF_CHECK_TEMPLATES {
        let Some(t) = scene.templates.iter().find(|t| t.template_id == id) else {
            continue;
        };
        let q = QueryCrop {
            crop_id: format!("template_{id:03}"),
            features: t.features.clone(),
            mask: t.mask.clone(),
            crop_transform: crate::geometry::CropTransform::identity(),
            scene_intrinsics: t.intrinsics,
        };
        match estimate_pose(&q, &scene.templates, &scene.mesh, &opts.config) {
            Ok(e) => {
                let (r, tr) = errors(&e.pose, &t.pose);
                worst_rot = worst_rot.max(r);
                worst_trans = worst_trans.max(tr);
                worst_mssd = worst_mssd.max(e_mssd(&e.pose, &t.pose, &scene.mesh.vertices, &SymmetrySet::identity_only()));
            }
            Err(err) => failures.push(format!("template {id}: {err}")),
        }
    }
    let tol_t = SELF_TRANSLATION_FRAC * diameter;
    let fail_note = if failures.is_empty() {
        String::new()
    } else {
        format!("; {}", failures.join("; "))
    };
    checks.push(Check {
        name: "self-consistency-rotation",
        passed: failures.is_empty() && worst_rot < SELF_ROTATION_DEG,
        actual: format!("worst {worst_rot:.5}°{fail_note}"),
        expected: format!("< {SELF_ROTATION_DEG}°"),
    });
    checks.push(Check {
        name: "self-consistency-translation",
        passed: failures.is_empty() && worst_trans < tol_t,
        actual: format!("worst {worst_trans:.5} mm{fail_note}"),
        expected: format!("< {tol_t:.4} mm"),
    });
    // MSSD bound implied by the two tolerances above over a point at most one diameter away
    let tol_mssd = tol_t + SELF_ROTATION_DEG.to_radians() * diameter;
    checks.push(Check {
        name: "self-consistency-mssd",
        passed: failures.is_empty() && worst_mssd < tol_mssd,
        actual: format!("worst {worst_mssd:.5} mm{fail_note}"),
        expected: format!("< {tol_mssd:.4} mm"),
    });

    Ok(SelftestReport {
        diameter,
        outcomes,
        records,
        ar,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_seed_passes_and_is_deterministic() {
        let opts = SelftestOptions::new(0);
        let a = run_selftest(&opts).unwrap();
        assert!(a.passed(), "{}", a.to_text());
        let b = run_selftest(&opts).unwrap();
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn corrupted_template_pose_is_caught() {
        let opts = SelftestOptions {
            corrupt_template_pose: true,
            ..SelftestOptions::new(0)
        };
        let rep = run_selftest(&opts).unwrap();
        let failed: Vec<&str> = rep.failed_checks().iter().map(|c| c.name).collect();
        assert!(failed.contains(&"self-consistency-mssd"), "{failed:?}");
        assert!(failed.contains(&"self-consistency-rotation"), "{failed:?}");
        assert!(rep.failure_diff().contains("- self-consistency-mssd: < "));
        assert!(rep.failure_diff().contains("+ self-consistency-mssd: worst "));
    }
}
