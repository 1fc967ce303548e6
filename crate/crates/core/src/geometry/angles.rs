use super::{GeometryError, Vec3};
use crate::imaging::GrayImage;

/// Yaw (horizontal) and pitch (vertical) in radians. `(0, 0)` looks along
/// `-z`, back towards the camera.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Angles {
    pub yaw: f64,
    pub pitch: f64,
}

pub type GazeAngles = Angles;
pub type HeadAngles = Angles;

impl Angles {
    pub const ZERO: Angles = Angles {
        yaw: 0.0,
        pitch: 0.0,
    };

    pub fn new(yaw: f64, pitch: f64) -> Self {
        Self { yaw, pitch }
    }

    pub fn from_degrees(yaw: f64, pitch: f64) -> Self {
        Self {
            yaw: yaw.to_radians(),
            pitch: pitch.to_radians(),
        }
    }

    pub fn to_degrees(self) -> (f64, f64) {
        (self.yaw.to_degrees(), self.pitch.to_degrees())
    }

    /// Horizontal mirror.
    pub fn mirrored(self) -> Self {
        Self {
            yaw: -self.yaw,
            pitch: self.pitch,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.yaw.is_finite() && self.pitch.is_finite()
    }
}

/// `theta = asin(-y)`, `phi = atan2(-x, -z)`, inverted.
pub fn angles_to_vector(a: &Angles) -> Vec3 {
    let (sy, cy) = a.yaw.sin_cos();
    let (sp, cp) = a.pitch.sin_cos();
    Vec3::new(-cp * sy, -sp, -cp * cy)
}

pub fn vector_to_angles(v: &Vec3) -> Result<Angles, GeometryError> {
    if v.z >= 0.0 {
        return Err(GeometryError::OutOfHemisphere { z: v.z });
    }
    let u = v.normalize();
    Ok(Angles {
        yaw: (-u.x).atan2(-u.z),
        pitch: (-u.y).clamp(-1.0, 1.0).asin(),
    })
}

/// Anything that denotes a 3D direction.
pub trait Direction {
    fn direction(&self) -> Vec3;
}

impl Direction for Vec3 {
    fn direction(&self) -> Vec3 {
        self.normalize()
    }
}

impl Direction for Angles {
    fn direction(&self) -> Vec3 {
        angles_to_vector(self)
    }
}

/// Angle between two directions in degrees.
pub fn angular_error<A: Direction + ?Sized, B: Direction + ?Sized>(a: &A, b: &B) -> f64 {
    let d = a.direction().dot(&b.direction()).clamp(-1.0, 1.0);
    d.acos().to_degrees()
}

/// Mirrors an eye sample horizontally so one regressor serves both eyes.
pub fn flip_sample(
    image: &GrayImage,
    head: &HeadAngles,
    gaze: &GazeAngles,
) -> (GrayImage, HeadAngles, GazeAngles) {
    (image.flipped_horizontal(), head.mirrored(), gaze.mirrored())
}

/// Late fusion of both eyes: the mean direction, from the midpoint of the
/// two eye centres.
pub fn fuse_both_eyes(
    gaze_left: &Vec3,
    gaze_right: &Vec3,
    eye_left: &Vec3,
    eye_right: &Vec3,
) -> Result<(Vec3, Vec3), GeometryError> {
    let sum = gaze_left + gaze_right;
    let norm = sum.norm();
    if norm < 1e-6 {
        return Err(GeometryError::OpposedDirections { norm });
    }
    Ok(((eye_left + eye_right) * 0.5, sum / norm))
}

pub fn gaze_target_to_vector(target: &Vec3, eye: &Vec3) -> Result<Vec3, GeometryError> {
    let d = target - eye;
    let n = d.norm();
    if !(n > 0.0) {
        return Err(GeometryError::CoincidentPoints);
    }
    Ok(d / n)
}
