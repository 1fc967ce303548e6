use std::fmt;
use std::str::FromStr;

use super::{GeometryError, Mat3, Rot3, Vec3, DEGENERACY_TOL};

/// Index of each of the six facial landmarks. "Right" and "left" are the
/// subject's, so the right eye appears on the image's left side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Landmark {
    RightEyeOuter = 0,
    RightEyeInner = 1,
    LeftEyeInner = 2,
    LeftEyeOuter = 3,
    MouthRight = 4,
    MouthLeft = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EyeSide {
    Right,
    Left,
}

impl EyeSide {
    pub const BOTH: [EyeSide; 2] = [EyeSide::Right, EyeSide::Left];

    pub fn other(self) -> Self {
        match self {
            EyeSide::Right => EyeSide::Left,
            EyeSide::Left => EyeSide::Right,
        }
    }

    fn corner_indices(self) -> (usize, usize) {
        match self {
            EyeSide::Right => (Landmark::RightEyeOuter as usize, Landmark::RightEyeInner as usize),
            EyeSide::Left => (Landmark::LeftEyeInner as usize, Landmark::LeftEyeOuter as usize),
        }
    }
}

impl fmt::Display for EyeSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EyeSide::Right => "right",
            EyeSide::Left => "left",
        })
    }
}

impl FromStr for EyeSide {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "right" => Ok(EyeSide::Right),
            "left" => Ok(EyeSide::Left),
            other => Err(format!("unknown eye side '{other}'")),
        }
    }
}

/// Six landmark positions in head coordinates (mm).
///
/// The head frame has its origin at the midpoint between the two eye
/// centres, x from the right eye towards the left eye, y towards the mouth
/// inside the eyes-mouth triangle and z pointing backwards from the face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceModel {
    pub landmarks: [Vec3; 6],
}

impl FaceModel {
    /// Generic mean face: eye corners 28 mm wide, eye centres 62 mm apart,
    /// mouth 65 mm below the eye line. Inner eye corners sit 20 mm in front
    /// of the outer ones so the six points are not coplanar.
    pub fn generic() -> Self {
        Self {
            landmarks: [
                Vec3::new(-45.0, 0.0, 10.0),
                Vec3::new(-17.0, 0.0, -10.0),
                Vec3::new(17.0, 0.0, -10.0),
                Vec3::new(45.0, 0.0, 10.0),
                Vec3::new(-25.0, 65.0, 0.0),
                Vec3::new(25.0, 65.0, 0.0),
            ],
        }
    }

    pub fn landmark(&self, which: Landmark) -> Vec3 {
        self.landmarks[which as usize]
    }

    /// Midpoint of the eye's two corners (e_h).
    pub fn eye_center(&self, side: EyeSide) -> Vec3 {
        let (a, b) = side.corner_indices();
        (self.landmarks[a] + self.landmarks[b]) * 0.5
    }

    pub fn mouth_center(&self) -> Vec3 {
        (self.landmark(Landmark::MouthRight) + self.landmark(Landmark::MouthLeft)) * 0.5
    }
}

impl Default for FaceModel {
    fn default() -> Self {
        Self::generic()
    }
}

/// Builds the head coordinate frame from six landmarks given in any frame.
///
/// Returns the rotation whose columns are the head axes expressed in the
/// input frame, and the landmarks re-expressed in the head frame.
pub fn build_head_frame(landmarks: &[Vec3; 6]) -> Result<(Rot3, FaceModel), GeometryError> {
    let raw = FaceModel {
        landmarks: *landmarks,
    };
    let right = raw.eye_center(EyeSide::Right);
    let left = raw.eye_center(EyeSide::Left);
    let mouth = raw.mouth_center();

    let eye_axis = left - right;
    let eye_dist = eye_axis.norm();
    if eye_dist < DEGENERACY_TOL {
        return Err(GeometryError::DegenerateLandmarks("eye midpoints coincide"));
    }
    let x = eye_axis / eye_dist;
    let origin = (right + left) * 0.5;
    let to_mouth = mouth - origin;
    let mouth_dist = to_mouth.norm();
    if mouth_dist < DEGENERACY_TOL || x.cross(&(to_mouth / mouth_dist)).norm() < DEGENERACY_TOL {
        return Err(GeometryError::DegenerateLandmarks(
            "mouth midpoint lies on the eye line",
        ));
    }
    let y = (to_mouth - x * x.dot(&to_mouth)).normalize();
    let z = x.cross(&y);
    let rotation = Rot3::from_matrix_unchecked(Mat3::from_columns(&[x, y, z]));

    let inv = rotation.inverse();
    let mut out = [Vec3::zeros(); 6];
    for (dst, src) in out.iter_mut().zip(landmarks.iter()) {
        *dst = inv * (src - origin);
    }
    Ok((rotation, FaceModel { landmarks: out }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Unit;

    fn assert_orthonormal(r: &Rot3) {
        let m = r.matrix();
        assert!((m.transpose() * m - Mat3::identity()).norm() < 1e-9);
        assert!((m.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn generic_model_is_already_canonical() {
        let face = FaceModel::generic();
        let (rot, rebuilt) = build_head_frame(&face.landmarks).unwrap();
        assert!((rot.matrix() - Mat3::identity()).norm() < 1e-12);
        for (a, b) in face.landmarks.iter().zip(rebuilt.landmarks.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(face.eye_center(EyeSide::Right).y.abs() < 1e-12);
        assert!(face.eye_center(EyeSide::Left).z.abs() < 1e-12);
    }

    #[test]
    fn planar_points_in_rotated_frame_give_proper_rotation() {
        // eye midpoints at (+-30, 0, 0), mouth midpoint at (0, 55, 0)
        let pts = [
            Vec3::new(-40.0, 0.0, 0.0),
            Vec3::new(-20.0, 0.0, 0.0),
            Vec3::new(20.0, 0.0, 0.0),
            Vec3::new(40.0, 0.0, 0.0),
            Vec3::new(-20.0, 55.0, 0.0),
            Vec3::new(20.0, 55.0, 0.0),
        ];
        let pre = Rot3::from_axis_angle(&Unit::new_normalize(Vec3::new(0.3, -1.0, 0.4)), 1.1);
        let moved = pts.map(|p| pre * p);
        let (rot, _) = build_head_frame(&moved).unwrap();
        assert_orthonormal(&rot);
        assert!((rot.matrix() - pre.matrix()).norm() < 1e-9);
    }

    #[test]
    fn collinear_midpoints_are_degenerate() {
        let pts = [
            Vec3::new(-40.0, 0.0, 0.0),
            Vec3::new(-20.0, 0.0, 0.0),
            Vec3::new(20.0, 0.0, 0.0),
            Vec3::new(40.0, 0.0, 0.0),
            Vec3::new(-60.0, 0.0, 0.0),
            Vec3::new(80.0, 0.0, 0.0),
        ];
        assert!(matches!(
            build_head_frame(&pts),
            Err(GeometryError::DegenerateLandmarks(_))
        ));
    }

    #[test]
    fn coincident_eyes_are_degenerate() {
        let pts = [Vec3::zeros(); 6];
        assert!(build_head_frame(&pts).is_err());
    }

    #[test]
    fn eye_side_parses_and_prints() {
        for side in EyeSide::BOTH {
            assert_eq!(side.to_string().parse::<EyeSide>().unwrap(), side);
            assert_eq!(side.other().other(), side);
        }
    }
}
