use nalgebra::{Matrix6, Rotation3, Vector6};

use super::GeometricCorrespondence;
use crate::geometry::{nearest_rotation, CameraIntrinsics, Pose};

pub const MAX_LM_ITERS: usize = 30;

fn cost(pose: &Pose, gc: &[GeometricCorrespondence], k: &CameraIntrinsics) -> f64 {
    gc.iter()
        .map(|c| {
            let p = pose.transform_point(&c.model_point);
            if p.z <= 0.0 {
                return f64::INFINITY;
            }
            let u = k.fx * p.x / p.z + k.cx - c.image_point.x;
            let v = k.fy * p.y / p.z + k.cy - c.image_point.y;
            u * u + v * v
        })
        .sum()
}

/// Levenberg-Marquardt on the summed squared reprojection error, starting
/// from `pose`. Rotation updates are applied on the left in axis-angle form.
/// Returns the starting pose unchanged when it cannot be improved.
pub fn refine_pose(pose: &Pose, gc: &[GeometricCorrespondence], k: &CameraIntrinsics) -> Pose {
    let mut cur = *pose;
    let mut cur_cost = cost(&cur, gc, k);
    if !cur_cost.is_finite() || gc.len() < 3 {
        return cur;
    }
    let mut lambda = 1e-3;
    for _ in 0..MAX_LM_ITERS {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for c in gc {
            let rx = cur.rotation * c.model_point;
            let p = rx + cur.translation;
            let (iz, iz2) = (1.0 / p.z, 1.0 / (p.z * p.z));
            let ru = k.fx * p.x * iz + k.cx - c.image_point.x;
            let rv = k.fy * p.y * iz + k.cy - c.image_point.y;
            // d(u,v)/dP
            let du = [k.fx * iz, 0.0, -k.fx * p.x * iz2];
            let dv = [0.0, k.fy * iz, -k.fy * p.y * iz2];
            // dP/dω = -[RX]×, dP/dt = I
            let cross = |d: [f64; 3]| {
                [
                    rx.y * d[2] - rx.z * d[1],
                    rx.z * d[0] - rx.x * d[2],
                    rx.x * d[1] - rx.y * d[0],
                ]
            };
            let (cu, cv) = (cross(du), cross(dv));
            let ju = Vector6::new(cu[0], cu[1], cu[2], du[0], du[1], du[2]);
            let jv = Vector6::new(cv[0], cv[1], cv[2], dv[0], dv[1], dv[2]);
            jtj += ju * ju.transpose() + jv * jv.transpose();
            jtr += ju * ru + jv * rv;
        }
        let mut improved = false;
        while lambda < 1e10 {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let w = step.fixed_rows::<3>(0).into_owned();
            let rot = Rotation3::new(w).into_inner() * cur.rotation;
            let cand = Pose {
                rotation: nearest_rotation(&rot),
                translation: cur.translation + step.fixed_rows::<3>(3).into_owned(),
            };
            let c = cost(&cand, gc, k);
            if c < cur_cost {
                let rel = (cur_cost - c) / cur_cost.max(1e-300);
                cur = cand;
                cur_cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle, rotation_angle_between, Vec2, Vec3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn observe(rng: &mut impl Rng, pose: &Pose, n: usize, sigma: f64) -> Vec<GeometricCorrespondence> {
        let noise = Normal::new(0.0, sigma).unwrap();
        (0..n)
            .map(|_| {
                let m = Vec3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
                let uv = cam().project_camera_point(&pose.transform_point(&m)).unwrap();
                GeometricCorrespondence {
                    image_point: uv + Vec2::new(noise.sample(rng), noise.sample(rng)),
                    model_point: m,
                    weight: 1.0,
                }
            })
            .collect()
    }

    #[test]
    fn converges_from_perturbed_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = Pose {
            rotation: axis_angle(&Vec3::new(0.3, -1.0, 0.2), 0.8),
            translation: Vec3::new(10.0, -20.0, 500.0),
        };
        let gc = observe(&mut rng, &gt, 60, 1e-9);
        let start = Pose {
            rotation: axis_angle(&Vec3::new(1.0, 1.0, 0.0), 0.05) * gt.rotation,
            translation: gt.translation + Vec3::new(3.0, -2.0, 15.0),
        };
        let p = refine_pose(&start, &gc, &cam());
        assert!(rotation_angle_between(&p.rotation, &gt.rotation) < 1e-6);
        assert!((p.translation - gt.translation).norm() < 1e-4);
    }

    #[test]
    fn never_increases_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let gt = Pose {
                rotation: axis_angle(&Vec3::new(rng.random(), rng.random(), rng.random()), rng.random_range(0.0..3.0)),
                translation: Vec3::new(0.0, 0.0, rng.random_range(300.0..900.0)),
            };
            let gc = observe(&mut rng, &gt, 40, 2.0);
            let p = refine_pose(&gt, &gc, &cam());
            assert!(cost(&p, &gc, &cam()) <= cost(&gt, &gc, &cam()));
        }
    }
}
