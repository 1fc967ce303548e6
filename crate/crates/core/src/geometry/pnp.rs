//! Head pose from 2D-3D landmark correspondences: EPnP initial solution,
//! refined with Levenberg-Marquardt on the reprojection error.

use nalgebra::{DMatrix, Matrix6, SymmetricEigen, Vector6, SVD};

use super::{CameraIntrinsics, FaceModel, GeometryError, HeadPose, Mat3, Point2, Rot3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpOptions {
    /// Refined poses with a larger reprojection RMS are rejected.
    pub max_rms_px: f64,
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub gradient_tol: f64,
}

impl Default for PnpOptions {
    fn default() -> Self {
        Self {
            max_rms_px: 20.0,
            max_iterations: 50,
            initial_lambda: 1e-3,
            gradient_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpSolution {
    pub pose: HeadPose,
    pub rms_px: f64,
    pub initial_rms_px: f64,
    pub iterations: usize,
    /// Sum of squared residuals of every accepted iterate, starting with the
    /// initial solution.
    pub cost_trace: Vec<f64>,
}

/// Estimates the face model's pose from its six projected landmarks.
pub fn estimate_head_pose(
    face: &FaceModel,
    landmarks2d: &[Point2; 6],
    cam: &CameraIntrinsics,
) -> Result<HeadPose, GeometryError> {
    solve_pnp(&face.landmarks, landmarks2d, cam, &PnpOptions::default()).map(|s| s.pose)
}

pub fn solve_pnp(
    model: &[Vec3],
    image: &[Point2],
    cam: &CameraIntrinsics,
    opts: &PnpOptions,
) -> Result<PnpSolution, GeometryError> {
    cam.validate()?;
    let n = model.len();
    if n < 6 || image.len() != n {
        return Err(GeometryError::TooFewCorrespondences {
            needed: 6,
            got: n.min(image.len()),
        });
    }

    let mut best: Option<PnpSolution> = None;
    let mut starts = Vec::with_capacity(2);
    if let Some(init) = epnp(model, image, cam) {
        starts.push(init);
    }
    starts.push(frontal_guess(model, image, cam));

    for (rotation, translation) in starts {
        let sol = refine(model, image, cam, rotation, translation, opts);
        let better = best.as_ref().is_none_or(|b| sol.rms_px < b.rms_px);
        if better {
            best = Some(sol);
        }
        // a converged EPnP start needs no fallback
        if best.as_ref().is_some_and(|b| b.rms_px < 1e-3) {
            break;
        }
    }
    let sol = best.expect("at least one start");
    if sol.pose.translation.z <= 0.0 {
        return Err(GeometryError::BehindCamera {
            z: sol.pose.translation.z,
        });
    }
    if !(sol.rms_px <= opts.max_rms_px) {
        return Err(GeometryError::PoseDivergence {
            rms: sol.rms_px,
            threshold: opts.max_rms_px,
        });
    }
    Ok(sol)
}

fn cost(model: &[Vec3], image: &[Point2], cam: &CameraIntrinsics, r: &Rot3, t: &Vec3) -> f64 {
    let mut sum = 0.0;
    for (x, uv) in model.iter().zip(image) {
        let pc = r * x + t;
        if pc.z <= 0.0 {
            return f64::INFINITY;
        }
        sum += (cam.project(&pc) - uv).norm_squared();
    }
    sum
}

fn refine(
    model: &[Vec3],
    image: &[Point2],
    cam: &CameraIntrinsics,
    mut rotation: Rot3,
    mut translation: Vec3,
    opts: &PnpOptions,
) -> PnpSolution {
    let n = model.len() as f64;
    let mut current = cost(model, image, cam, &rotation, &translation);
    let initial_rms = (current / n).sqrt();
    let mut trace = vec![current];
    let mut lambda = opts.initial_lambda;
    let mut iterations = 0;

    while iterations < opts.max_iterations && current.is_finite() {
        iterations += 1;
        // Normal equations for the left-multiplied rotation increment and
        // the translation increment.
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (x, uv) in model.iter().zip(image) {
            let rx = rotation * x;
            let pc = rx + translation;
            let (px, py, pz) = (pc.x, pc.y, pc.z);
            let proj = cam.project(&pc);
            let res = proj - uv;
            let du = nalgebra::RowVector3::new(cam.fx / pz, 0.0, -cam.fx * px / (pz * pz));
            let dv = nalgebra::RowVector3::new(0.0, cam.fy / pz, -cam.fy * py / (pz * pz));
            // d(pc)/d(omega) = -[R x]_x
            let skew = -rx.cross_matrix();
            let ju_rot = du * skew;
            let jv_rot = dv * skew;
            let ju = [ju_rot[0], ju_rot[1], ju_rot[2], du[0], du[1], du[2]];
            let jv = [jv_rot[0], jv_rot[1], jv_rot[2], dv[0], dv[1], dv[2]];
            for a in 0..6 {
                jtr[a] += ju[a] * res.x + jv[a] * res.y;
                for b in 0..6 {
                    jtj[(a, b)] += ju[a] * ju[b] + jv[a] * jv[b];
                }
            }
        }
        if jtr.norm() < opts.gradient_tol {
            break;
        }

        let mut accepted = false;
        while lambda < 1e12 {
            let mut damped = jtj;
            for d in 0..6 {
                damped[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let omega = Vec3::new(step[0], step[1], step[2]);
            let cand_r = Rot3::new(omega) * rotation;
            let cand_t = translation + Vec3::new(step[3], step[4], step[5]);
            let cand = cost(model, image, cam, &cand_r, &cand_t);
            if cand <= current {
                let negligible = step.norm() < 1e-14 || current - cand <= current * 1e-15;
                rotation = renormalize(&cand_r);
                translation = cand_t;
                current = cand;
                trace.push(current);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = !negligible;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }

    PnpSolution {
        pose: HeadPose {
            rotation,
            translation,
        },
        rms_px: (current / n).sqrt(),
        initial_rms_px: initial_rms,
        iterations,
        cost_trace: trace,
    }
}

fn renormalize(r: &Rot3) -> Rot3 {
    Rot3::from_matrix_eps(r.matrix(), 1e-15, 20, *r)
}

/// Pose looking straight at the camera, at the depth implied by the
/// landmarks' spread.
fn frontal_guess(model: &[Vec3], image: &[Point2], cam: &CameraIntrinsics) -> (Rot3, Vec3) {
    let n = model.len() as f64;
    let centroid: Vec3 = model.iter().sum::<Vec3>() / n;
    let img_centroid: Point2 = image.iter().sum::<Point2>() / n;
    let spread3: f64 = model.iter().map(|p| (p - centroid).xy().norm()).sum::<f64>() / n;
    let spread2: f64 = image.iter().map(|p| (p - img_centroid).norm()).sum::<f64>() / n;
    let f = 0.5 * (cam.fx + cam.fy);
    let z = if spread2 > 0.0 { f * spread3 / spread2 } else { 600.0 };
    let x = (img_centroid.x - cam.cx) / cam.fx * z;
    let y = (img_centroid.y - cam.cy) / cam.fy * z;
    (Rot3::identity(), Vec3::new(x, y, z) - centroid)
}

/// EPnP with a single null-space vector. Uses three control points when
/// the model is planar.
fn epnp(model: &[Vec3], image: &[Point2], cam: &CameraIntrinsics) -> Option<(Rot3, Vec3)> {
    let n = model.len();
    let centroid: Vec3 = model.iter().sum::<Vec3>() / n as f64;
    let mut cov = Mat3::zeros();
    for p in model {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]];
    if largest <= 0.0 {
        return None;
    }
    let planar = eig.eigenvalues[order[2]] <= largest * 1e-10;
    let n_ctrl = if planar { 3 } else { 4 };

    let mut ctrl_w = vec![centroid];
    for &i in order.iter().take(n_ctrl - 1) {
        let axis: Vec3 = eig.eigenvectors.column(i).into_owned();
        ctrl_w.push(centroid + axis * eig.eigenvalues[i].max(0.0).sqrt());
    }

    // barycentric coordinates of each model point w.r.t. the control points
    let axes: Vec<Vec3> = ctrl_w[1..].iter().map(|c| c - centroid).collect();
    let alphas: Vec<Vec<f64>> = model
        .iter()
        .map(|p| {
            let d = p - centroid;
            let coeffs: Vec<f64> = axes.iter().map(|a| a.dot(&d) / a.norm_squared()).collect();
            let mut out = vec![1.0 - coeffs.iter().sum::<f64>()];
            out.extend(coeffs);
            out
        })
        .collect();

    let cols = 3 * n_ctrl;
    let mut m = DMatrix::<f64>::zeros(2 * n, cols);
    for (i, (a, uv)) in alphas.iter().zip(image).enumerate() {
        let u = (uv.x - cam.cx) / cam.fx;
        let v = (uv.y - cam.cy) / cam.fy;
        for (j, &alpha) in a.iter().enumerate() {
            m[(2 * i, 3 * j)] = alpha;
            m[(2 * i, 3 * j + 2)] = -u * alpha;
            m[(2 * i + 1, 3 * j + 1)] = alpha;
            m[(2 * i + 1, 3 * j + 2)] = -v * alpha;
        }
    }
    let mtm = m.transpose() * &m;
    let eig_m = SymmetricEigen::new(mtm);
    let (min_idx, _) = eig_m
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let null = eig_m.eigenvectors.column(min_idx);

    let mut ctrl_c: Vec<Vec3> = (0..n_ctrl)
        .map(|j| Vec3::new(null[3 * j], null[3 * j + 1], null[3 * j + 2]))
        .collect();
    let (mut sum_w, mut sum_c) = (0.0, 0.0);
    for i in 0..n_ctrl {
        for j in (i + 1)..n_ctrl {
            sum_w += (ctrl_w[i] - ctrl_w[j]).norm_squared();
            sum_c += (ctrl_c[i] - ctrl_c[j]).norm_squared();
        }
    }
    if sum_c <= f64::EPSILON {
        return None;
    }
    let mut scale = (sum_w / sum_c).sqrt();
    let camera_pts = |ctrl: &[Vec3], s: f64| -> Vec<Vec3> {
        alphas
            .iter()
            .map(|a| a.iter().zip(ctrl).map(|(&w, c)| c * w).sum::<Vec3>() * s)
            .collect()
    };
    let mean_z: f64 = camera_pts(&ctrl_c, scale).iter().map(|p| p.z).sum();
    if mean_z < 0.0 {
        scale = -scale;
    }
    for c in ctrl_c.iter_mut() {
        *c *= scale;
    }
    let pts = camera_pts(&ctrl_c, 1.0);
    absolute_orientation(model, &pts)
}

/// Least-squares rigid transform mapping `src` onto `dst` (Kabsch).
fn absolute_orientation(src: &[Vec3], dst: &[Vec3]) -> Option<(Rot3, Vec3)> {
    let n = src.len() as f64;
    let cs: Vec3 = src.iter().sum::<Vec3>() / n;
    let cd: Vec3 = dst.iter().sum::<Vec3>() / n;
    let mut h = Mat3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = SVD::new(h, true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let fix = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let r = v * fix * u.transpose();
    let rotation = Rot3::from_matrix_unchecked(r);
    let rotation = renormalize(&rotation);
    Some((rotation, cd - rotation * cs))
}

/// Rotation about a unit axis, used by tests and scene generators.
#[cfg(test)]
pub(crate) fn axis_angle(axis: Vec3, angle: f64) -> Rot3 {
    Rot3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(960.0, 960.0, 320.0, 240.0).unwrap()
    }

    fn project_all(face: &FaceModel, pose: &HeadPose, cam: &CameraIntrinsics) -> [Point2; 6] {
        face.landmarks.map(|p| cam.project(&pose.transform(&p)))
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> HeadPose {
        let axis = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let angle = rng.gen_range(0.0..40f64.to_radians());
        HeadPose {
            rotation: axis_angle(axis, angle),
            translation: Vec3::new(
                rng.gen_range(-60.0..60.0),
                rng.gen_range(-60.0..60.0),
                rng.gen_range(400.0..800.0),
            ),
        }
    }

    #[test]
    fn frontal_pose_recovered_exactly() {
        let face = FaceModel::generic();
        let cam = CameraIntrinsics::new(960.0, 960.0, 30.0, 18.0).unwrap();
        let truth = HeadPose {
            rotation: Rot3::identity(),
            translation: Vec3::new(0.0, 0.0, 600.0),
        };
        let pts = project_all(&face, &truth, &cam);
        let est = estimate_head_pose(&face, &pts, &cam).unwrap();
        assert!(est.rotation_error_deg(&truth).to_radians() < 1e-6);
        assert!(est.translation_error(&truth) < 1e-6);
    }

    #[test]
    fn random_noiseless_poses() {
        let face = FaceModel::generic();
        let cam = cam();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let truth = random_pose(&mut rng);
            let pts = project_all(&face, &truth, &cam);
            let sol = solve_pnp(&face.landmarks, &pts, &cam, &PnpOptions::default()).unwrap();
            assert!(sol.pose.rotation_error_deg(&truth) < 0.1);
            assert!(sol.pose.translation_error(&truth) < 0.5);
            assert!(sol.rms_px < 1e-6);
        }
    }

    #[test]
    fn noisy_landmarks_median_rotation_error() {
        let face = FaceModel::generic();
        let cam = cam();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut errs = Vec::new();
        for _ in 0..100 {
            let truth = random_pose(&mut rng);
            let pts = project_all(&face, &truth, &cam)
                .map(|p| p + Point2::new(noise.sample(&mut rng), noise.sample(&mut rng)));
            let pose = estimate_head_pose(&face, &pts, &cam).unwrap();
            errs.push(pose.rotation_error_deg(&truth));
        }
        errs.sort_by(f64::total_cmp);
        assert!(errs[50] < 2.0, "median rotation error {}", errs[50]);
    }

    #[test]
    fn accepted_iterates_never_increase_cost() {
        let face = FaceModel::generic();
        let cam = cam();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let noise = Normal::new(0.0, 2.0).unwrap();
        for _ in 0..30 {
            let truth = random_pose(&mut rng);
            let pts = project_all(&face, &truth, &cam)
                .map(|p| p + Point2::new(noise.sample(&mut rng), noise.sample(&mut rng)));
            // start far away from the optimum so LM has work to do
            let sol = refine(
                &face.landmarks,
                &pts,
                &cam,
                axis_angle(Vec3::y(), 0.3) * truth.rotation,
                truth.translation + Vec3::new(20.0, -10.0, 80.0),
                &PnpOptions::default(),
            );
            for w in sol.cost_trace.windows(2) {
                assert!(w[1] <= w[0]);
            }
            assert!(sol.rms_px <= sol.initial_rms_px);
        }
    }

    #[test]
    fn planar_model_is_supported() {
        let model: Vec<Vec3> = vec![
            Vec3::new(-40.0, 0.0, 0.0),
            Vec3::new(-20.0, 0.0, 0.0),
            Vec3::new(20.0, 0.0, 0.0),
            Vec3::new(40.0, 0.0, 0.0),
            Vec3::new(-25.0, 60.0, 0.0),
            Vec3::new(25.0, 60.0, 0.0),
        ];
        let truth = HeadPose {
            rotation: axis_angle(Vec3::new(1.0, 0.5, 0.0), 0.3),
            translation: Vec3::new(10.0, -20.0, 550.0),
        };
        let cam = cam();
        let pts: Vec<Point2> = model.iter().map(|p| cam.project(&truth.transform(p))).collect();
        let sol = solve_pnp(&model, &pts, &cam, &PnpOptions::default()).unwrap();
        assert!(sol.rms_px < 1e-6);
        assert!(sol.pose.rotation_error_deg(&truth) < 0.1);
    }

    #[test]
    fn garbage_landmarks_diverge() {
        let face = FaceModel::generic();
        let pts = [
            Point2::new(10.0, 10.0),
            Point2::new(600.0, 20.0),
            Point2::new(15.0, 400.0),
            Point2::new(300.0, 300.0),
            Point2::new(620.0, 470.0),
            Point2::new(5.0, 200.0),
        ];
        let err = estimate_head_pose(&face, &pts, &cam()).unwrap_err();
        assert!(matches!(
            err,
            GeometryError::PoseDivergence { .. } | GeometryError::BehindCamera { .. }
        ));
    }

    #[test]
    fn too_few_points() {
        let model = [Vec3::zeros(); 4];
        let img = [Point2::zeros(); 4];
        assert!(matches!(
            solve_pnp(&model, &img, &cam(), &PnpOptions::default()),
            Err(GeometryError::TooFewCorrespondences { .. })
        ));
    }
}
