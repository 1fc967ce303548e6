//! Eye-space normalization: a virtual camera that looks straight at one eye
//! from a fixed distance with the head's x-axis kept horizontal.

use super::{
    vector_to_angles, CameraIntrinsics, EyeSide, FaceModel, GazeAngles, GeometryError, HeadAngles,
    HeadPose, Mat3, Rot3, Vec3, DEGENERACY_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationSpec {
    /// Distance of the eye from the normalized camera, mm.
    pub distance: f64,
    pub camera: CameraIntrinsics,
    pub out_width: usize,
    pub out_height: usize,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self {
            distance: 600.0,
            camera: CameraIntrinsics {
                fx: 960.0,
                fy: 960.0,
                cx: 30.0,
                cy: 18.0,
            },
            out_width: 60,
            out_height: 36,
        }
    }
}

impl NormalizationSpec {
    pub fn validate(&self) -> Result<(), GeometryError> {
        self.camera.validate()?;
        if !(self.distance > 0.0) {
            return Err(GeometryError::DegenerateGeometry(
                "normalization distance must be positive",
            ));
        }
        if self.out_width == 0 || self.out_height == 0 {
            return Err(GeometryError::DegenerateGeometry(
                "output size must be positive",
            ));
        }
        Ok(())
    }
}

/// Rotation `r`, scaling `s`, their product `m = s * r` and the image warp
/// `w = C_n * m * C_r^-1` for one eye.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationTransform {
    pub r: Rot3,
    pub s: Mat3,
    pub m: Mat3,
    pub w: Mat3,
}

/// Eye centre in camera coordinates: `R_r * e_h + t_r`.
pub fn eye_center_camera(pose: &HeadPose, face: &FaceModel, eye: EyeSide) -> Vec3 {
    pose.transform(&face.eye_center(eye))
}

pub fn compute_normalization(
    eye: &Vec3,
    head_rotation: &Rot3,
    spec: &NormalizationSpec,
    real_camera: &CameraIntrinsics,
) -> Result<NormalizationTransform, GeometryError> {
    let dist = eye.norm();
    if !(dist > 0.0) || eye.z <= 0.0 {
        return Err(GeometryError::DegenerateGeometry(
            "eye centre must lie in front of the camera",
        ));
    }
    let z_axis = eye / dist;
    let head_x: Vec3 = head_rotation.matrix().column(0).into_owned();
    let y_raw = z_axis.cross(&head_x);
    if y_raw.norm() < DEGENERACY_TOL {
        return Err(GeometryError::DegenerateGeometry(
            "head x-axis is parallel to the eye direction",
        ));
    }
    let y_axis = y_raw.normalize();
    let x_axis = y_axis.cross(&z_axis);
    let r = Rot3::from_matrix_unchecked(Mat3::from_rows(&[
        x_axis.transpose(),
        y_axis.transpose(),
        z_axis.transpose(),
    ]));
    let s = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, spec.distance / dist));
    let m = s * r.matrix();
    let w = spec.camera.matrix() * m * real_camera.inverse_matrix();
    Ok(NormalizationTransform { r, s, m, w })
}

/// Gaze direction in normalized space. Only the rotation acts on
/// directions; the scaling would bend them.
pub fn normalize_gaze(gaze: &Vec3, xform: &NormalizationTransform) -> GazeAngles {
    let g = (xform.r * gaze).normalize();
    angles_unchecked(&g)
}

/// Head angles in normalized space: direction of the face (the negated head
/// z-axis) after rotating by `r`.
pub fn normalize_head(
    head_rotation: &Rot3,
    xform: &NormalizationTransform,
) -> Result<HeadAngles, GeometryError> {
    let rn = xform.r * head_rotation;
    let m = rn.matrix();
    let residual = m[(1, 0)].clamp(-1.0, 1.0).asin();
    if residual.abs() > 1e-6 {
        return Err(GeometryError::RollResidual { residual });
    }
    let facing: Vec3 = -m.column(2).into_owned();
    Ok(angles_unchecked(&facing))
}

// Directions that point away from the camera still get angles (yaw beyond
// 90 degrees) rather than an error here.
fn angles_unchecked(v: &Vec3) -> GazeAngles {
    vector_to_angles(v).unwrap_or_else(|_| GazeAngles {
        yaw: (-v.x).atan2(-v.z),
        pitch: (-v.y).clamp(-1.0, 1.0).asin(),
    })
}
