//! Parametric eye renderer and synthetic scene generator, used as a ground
//! truth oracle for pose estimation, normalization and learning.

mod render;
mod scene;

pub use render::{
    render_eye, render_eye_side, EyeAppearance, EyeModel, KAPPA, MAX_GAZE_DEG, PATCH_HEIGHT,
    PATCH_WIDTH,
};
pub use scene::{
    generate_persons, generate_pnp_scene, head_rotation, mix_seed, person_id, synthetic_camera,
    PnpScene, PoseRanges, RecordTruth, SynthConfig, SyntheticDataset, FRAME_HEIGHT, FRAME_WIDTH,
};

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::geometry::GeometryError;
use crate::imaging::ImageError;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("gaze ({yaw_deg:.2}, {pitch_deg:.2}) degrees is outside the renderable range")]
    OutOfRangeGaze { yaw_deg: f64, pitch_deg: f64 },
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}
