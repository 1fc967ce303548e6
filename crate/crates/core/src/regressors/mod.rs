//! Gaze regressors: the multimodal CNN with its own backpropagation and
//! Adam, kNN with head-angle clustering, ridge regression and the mean
//! predictor, plus a common checkpoint format.

mod adam;
mod cnn;
mod knn;
mod linear;
mod model;
mod real;
mod train;

pub use adam::{AdamState, TrainConfig};
pub use cnn::{
    Batch, Cnn, CnnArchitecture, ParamLayout, CONV1_MAPS, CONV2_MAPS, FC1_UNITS, KERNEL, OUTPUTS,
};
pub use knn::{kmeans, knn_fit, KnnModel};
pub use linear::{linear_fit, LinearModel};
pub use model::{
    fit_estimator, mean_predictor, EstimatorConfig, EstimatorKind, EstimatorModel, MeanModel,
};
pub use real::Real;
pub use train::{train_cnn, CnnModel, TrainedCnn};

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::NormalizedSample;
use crate::imaging::GrayImage;

#[derive(Debug, Error)]
pub enum RegressorError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("normal equations are rank-deficient")]
    SingularSystem,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("sample {0} has no pupil annotation")]
    MissingPupil(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Which geometry features accompany the eye patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub head: bool,
    pub pupil: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            head: true,
            pupil: false,
        }
    }
}

impl FeatureConfig {
    pub fn dim(&self) -> usize {
        2 * self.head as usize + 2 * self.pupil as usize
    }

    /// Head angles in radians, then the pupil centre scaled to `[-1, 1]`
    /// across the patch.
    pub fn extract(&self, sample: &NormalizedSample) -> Result<Vec<f64>, RegressorError> {
        let mut out = Vec::with_capacity(self.dim());
        if self.head {
            out.extend([sample.head.yaw, sample.head.pitch]);
        }
        if self.pupil {
            let p = sample
                .pupil
                .ok_or_else(|| RegressorError::MissingPupil(sample.id.clone()))?;
            let (w, h) = (sample.patch.width() as f64, sample.patch.height() as f64);
            out.push(2.0 * p.x / (w - 1.0).max(1.0) - 1.0);
            out.push(2.0 * p.y / (h - 1.0).max(1.0) - 1.0);
        }
        Ok(out)
    }

    pub fn describe(&self) -> String {
        match (self.head, self.pupil) {
            (true, true) => "head,pupil",
            (true, false) => "head",
            (false, true) => "pupil",
            (false, false) => "none",
        }
        .to_string()
    }

    pub fn parse(s: &str) -> Result<Self, RegressorError> {
        let mut f = Self {
            head: false,
            pupil: false,
        };
        for part in s.split(',') {
            match part {
                "head" => f.head = true,
                "pupil" => f.pupil = true,
                "none" => {}
                other => {
                    return Err(RegressorError::Checkpoint(format!("unknown feature '{other}'")))
                }
            }
        }
        Ok(f)
    }
}

/// Common patch size of a training set.
pub(crate) fn patch_size(samples: &[NormalizedSample]) -> Result<(usize, usize), RegressorError> {
    let first = samples.first().ok_or(RegressorError::EmptyTrainingSet)?;
    let size = (first.patch.width(), first.patch.height());
    if let Some(s) = samples
        .iter()
        .find(|s| (s.patch.width(), s.patch.height()) != size)
    {
        return Err(RegressorError::ShapeMismatch(format!(
            "sample {} is {}x{}, expected {}x{}",
            s.id,
            s.patch.width(),
            s.patch.height(),
            size.0,
            size.1
        )));
    }
    Ok(size)
}

pub(crate) fn check_patch(patch: &GrayImage, size: (usize, usize)) -> Result<(), RegressorError> {
    if (patch.width(), patch.height()) != size {
        return Err(RegressorError::ShapeMismatch(format!(
            "patch is {}x{}, model expects {}x{}",
            patch.width(),
            patch.height(),
            size.0,
            size.1
        )));
    }
    Ok(())
}
