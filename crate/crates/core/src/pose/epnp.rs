//! EPnP with PCA-aligned control points, Gauss-Newton refinement of the null
//! space coefficients and a planar (three control point) variant.

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector3};

use super::GeometricCorrespondence;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Mat3, Pose, Vec2, Vec3, MIN_DEPTH};

pub const MIN_POINTS: usize = 6;

/// Ratio of smallest to largest spread below which the points count as planar.
const PLANAR_RATIO: f64 = 1e-8;
const GAUSS_NEWTON_STEPS: usize = 10;

struct ControlFrame {
    /// World control points; three of them in the planar case.
    points: Vec<Vec3>,
    /// Barycentric coordinates of every input point, `points.len()` each.
    alphas: Vec<Vec<f64>>,
}

fn control_frame(world: &[Vec3]) -> Result<ControlFrame> {
    let n = world.len() as f64;
    let c0 = world.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut cov = Mat3::zeros();
    for p in world {
        let d = p - c0;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lmax = eig.eigenvalues[order[0]];
    if !(lmax > 0.0) || eig.eigenvalues[order[1]] <= PLANAR_RATIO * lmax {
        return Err(Error::DegenerateConfiguration);
    }
    let axes = if eig.eigenvalues[order[2]] <= PLANAR_RATIO * lmax {
        2
    } else {
        3
    };
    let dirs: Vec<(Vec3, f64)> = order[..axes]
        .iter()
        .map(|&k| {
            let s = eig.eigenvalues[k].sqrt();
            (eig.eigenvectors.column(k).into_owned(), s)
        })
        .collect();
    let mut points = vec![c0];
    points.extend(dirs.iter().map(|(v, s)| c0 + v * *s));
    let alphas = world
        .iter()
        .map(|p| {
            let d = p - c0;
            let mut a = vec![0.0; axes + 1];
            for (k, (v, s)) in dirs.iter().enumerate() {
                a[k + 1] = d.dot(v) / s;
            }
            a[0] = 1.0 - a[1..].iter().sum::<f64>();
            a
        })
        .collect();
    Ok(ControlFrame { points, alphas })
}

/// Least-squares rigid transform mapping `world` onto `camera`.
pub(crate) fn kabsch(world: &[Vec3], camera: &[Vec3]) -> Option<Pose> {
    let n = world.len() as f64;
    let pw = world.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let pc = camera.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut h = Mat3::zeros();
    for (w, c) in world.iter().zip(camera) {
        h += (w - pw) * (c - pc).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Mat3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = pc - r * pw;
    Some(Pose {
        rotation: r,
        translation: t,
    })
}

/// Root mean square reprojection error in pixels; infinite if any point is
/// behind the camera.
pub fn reprojection_rmse(pose: &Pose, gc: &[GeometricCorrespondence], k: &CameraIntrinsics) -> f64 {
    let mut s = 0.0;
    for c in gc {
        match reprojection_error(pose, c, k) {
            Some(e) => s += e * e,
            None => return f64::INFINITY,
        }
    }
    (s / gc.len() as f64).sqrt()
}

pub(crate) fn reprojection_error(
    pose: &Pose,
    c: &GeometricCorrespondence,
    k: &CameraIntrinsics,
) -> Option<f64> {
    let p = pose.transform_point(&c.model_point);
    if p.z <= MIN_DEPTH {
        return None;
    }
    let u = Vec2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
    Some((u - c.image_point).norm())
}

/// Pairs of control point indices.
fn control_pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect()
}

/// Null space coefficients for `n_kernel` kernel vectors: linearized solve on
/// the control point distance constraints, then Gauss-Newton.
fn solve_betas(kernel: &[Vec<Vec3>], world_ctrl: &[Vec3]) -> Option<Vec<f64>> {
    let nk = kernel.len();
    let pairs = control_pairs(world_ctrl.len());
    let diffs: Vec<Vec<Vec3>> = pairs
        .iter()
        .map(|&(a, b)| kernel.iter().map(|v| v[a] - v[b]).collect())
        .collect();
    let rho: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| (world_ctrl[a] - world_ctrl[b]).norm_squared())
        .collect();

    let products: Vec<(usize, usize)> = (0..nk).flat_map(|k| (k..nk).map(move |l| (k, l))).collect();
    let l = DMatrix::from_fn(pairs.len(), products.len(), |r, c| {
        let (k, m) = products[c];
        let d = diffs[r][k].dot(&diffs[r][m]);
        if k == m {
            d
        } else {
            2.0 * d
        }
    });
    let b = l
        .svd(true, true)
        .solve(&DVector::from_vec(rho.clone()), 1e-12)
        .ok()?;
    // products[k] for k < nk are (0, k): b_00, b_01, ...
    let b00 = b[0];
    let mut beta = vec![0.0; nk];
    beta[0] = b00.abs().sqrt();
    if beta[0] > 1e-12 {
        for k in 1..nk {
            beta[k] = b[k] / beta[0];
        }
    }

    for _ in 0..GAUSS_NEWTON_STEPS {
        let mut jac = DMatrix::zeros(pairs.len(), nk);
        let mut res = DVector::zeros(pairs.len());
        for r in 0..pairs.len() {
            let v: Vec3 = (0..nk).fold(Vec3::zeros(), |a, k| a + diffs[r][k] * beta[k]);
            res[r] = rho[r] - v.norm_squared();
            for k in 0..nk {
                jac[(r, k)] = 2.0 * v.dot(&diffs[r][k]);
            }
        }
        let step = jac.svd(true, true).solve(&res, 1e-12).ok()?;
        for k in 0..nk {
            beta[k] += step[k];
        }
        if step.norm() < 1e-14 * (1.0 + beta.iter().map(|b| b * b).sum::<f64>().sqrt()) {
            break;
        }
    }
    beta.iter().all(|b| b.is_finite()).then_some(beta)
}

/// Closed-form pose from at least six 2D-3D correspondences.
pub fn epnp(gc: &[GeometricCorrespondence], k: &CameraIntrinsics) -> Result<Pose> {
    if gc.len() < MIN_POINTS {
        return Err(Error::TooFewPoints {
            needed: MIN_POINTS,
            got: gc.len(),
        });
    }
    let world: Vec<Vec3> = gc.iter().map(|c| c.model_point).collect();
    let frame = control_frame(&world)?;
    let m = frame.points.len();

    let mut mm = DMatrix::zeros(2 * gc.len(), 3 * m);
    for (i, c) in gc.iter().enumerate() {
        let x = (c.image_point.x - k.cx) / k.fx;
        let y = (c.image_point.y - k.cy) / k.fy;
        for (j, &a) in frame.alphas[i].iter().enumerate() {
            mm[(2 * i, 3 * j)] = a;
            mm[(2 * i, 3 * j + 2)] = -a * x;
            mm[(2 * i + 1, 3 * j + 1)] = a;
            mm[(2 * i + 1, 3 * j + 2)] = -a * y;
        }
    }
    let svd = mm.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateConfiguration)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let kernel_vec = |idx: usize| -> Vec<Vec3> {
        let row = v_t.row(order[idx]);
        (0..m)
            .map(|j| Vec3::new(row[3 * j], row[3 * j + 1], row[3 * j + 2]))
            .collect()
    };

    let n_pairs = m * (m - 1) / 2;
    let mut best: Option<(f64, Pose)> = None;
    for nk in 1..=3usize {
        if nk * (nk + 1) / 2 > n_pairs {
            break;
        }
        let kernel: Vec<Vec<Vec3>> = (0..nk).map(kernel_vec).collect();
        let Some(beta) = solve_betas(&kernel, &frame.points) else {
            continue;
        };
        let mut ctrl: Vec<Vec3> = (0..m)
            .map(|j| (0..nk).fold(Vec3::zeros(), |a, q| a + kernel[q][j] * beta[q]))
            .collect();
        let mut cam: Vec<Vec3> = frame
            .alphas
            .iter()
            .map(|a| a.iter().zip(&ctrl).fold(Vec3::zeros(), |s, (w, c)| s + c * *w))
            .collect();
        if cam.iter().map(|p| p.z).sum::<f64>() < 0.0 {
            for p in ctrl.iter_mut().chain(cam.iter_mut()) {
                *p = -*p;
            }
        }
        let Some(pose) = kabsch(&world, &cam) else {
            continue;
        };
        let err = reprojection_rmse(&pose, gc, k);
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, pose));
        }
    }
    best.map(|(_, p)| p).ok_or(Error::DegenerateConfiguration)
}
