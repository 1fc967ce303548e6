use super::{GeometryError, Mat3, Point2, Rot3, Vec3};

/// Pinhole intrinsics in pixels. Pixel coordinates put integer values at
/// pixel centres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        let cam = Self { fx, fy, cx, cy };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive and finite, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics(
                "principal point must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Mat3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn project(&self, p: &Vec3) -> Point2 {
        Point2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// Rigid transform of the face model into camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadPose {
    pub rotation: Rot3,
    pub translation: Vec3,
}

impl HeadPose {
    pub fn new(rotation: Rot3, translation: Vec3) -> Result<Self, GeometryError> {
        if translation.z <= 0.0 {
            return Err(GeometryError::BehindCamera { z: translation.z });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Rotation angle between two poses in degrees.
    pub fn rotation_error_deg(&self, other: &HeadPose) -> f64 {
        let rel = self.rotation.rotation_to(&other.rotation);
        let m = rel.matrix();
        let cos = 0.5 * (m.trace() - 1.0);
        let sin = 0.5
            * Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm();
        sin.atan2(cos).to_degrees()
    }

    pub fn translation_error(&self, other: &HeadPose) -> f64 {
        (self.translation - other.translation).norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_positive_focal_length() {
        assert!(CameraIntrinsics::new(0.0, 960.0, 30.0, 18.0).is_err());
        assert!(CameraIntrinsics::new(960.0, -1.0, 30.0, 18.0).is_err());
    }

    #[test]
    fn inverse_matrix_is_inverse() {
        let cam = CameraIntrinsics::new(900.0, 950.0, 320.0, 240.0).unwrap();
        let prod = cam.matrix() * cam.inverse_matrix();
        assert!((prod - Mat3::identity()).norm() < 1e-12);
    }

    #[test]
    fn pose_behind_camera_rejected() {
        let err = HeadPose::new(Rot3::identity(), Vec3::new(0.0, 0.0, -5.0)).unwrap_err();
        assert!(matches!(err, GeometryError::BehindCamera { .. }));
    }
}
