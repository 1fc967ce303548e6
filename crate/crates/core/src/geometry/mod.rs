//! 3D geometry for the gaze pipeline: head frame, head pose from landmarks,
//! eye-space normalization, angle conventions and gaze-vector utilities.
//!
//! Camera coordinates are right-handed with x to the right, y down and z
//! pointing out of the camera into the scene. Positions are in millimetres.

mod angles;
mod camera;
mod frame;
mod normalize;
mod pnp;

pub use angles::{
    angles_to_vector, angular_error, flip_sample, fuse_both_eyes, gaze_target_to_vector,
    vector_to_angles, Angles, Direction, GazeAngles, HeadAngles,
};
pub use camera::{CameraIntrinsics, HeadPose};
pub use frame::{build_head_frame, EyeSide, FaceModel, Landmark};
pub use normalize::{
    compute_normalization, eye_center_camera, normalize_gaze, normalize_head, NormalizationSpec,
    NormalizationTransform,
};
pub use pnp::{estimate_head_pose, solve_pnp, PnpOptions, PnpSolution};

use thiserror::Error;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Point2 = nalgebra::Vector2<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Rot3 = nalgebra::Rotation3<f64>;

/// Tolerance on normalized cross-product norms for collinearity checks.
pub const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate landmarks: {0}")]
    DegenerateLandmarks(&'static str),
    #[error("pose refinement diverged: reprojection RMS {rms:.3} px exceeds {threshold} px")]
    PoseDivergence { rms: f64, threshold: f64 },
    #[error("estimated face lies behind the camera (t.z = {z:.3} mm)")]
    BehindCamera { z: f64 },
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("normalized head rotation has residual roll {residual:e} rad")]
    RollResidual { residual: f64 },
    #[error("direction is not in the front hemisphere (z = {z})")]
    OutOfHemisphere { z: f64 },
    #[error("gaze directions are opposed; their sum has norm {norm:e}")]
    OpposedDirections { norm: f64 },
    #[error("gaze target coincides with the eye centre")]
    CoincidentPoints,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}
