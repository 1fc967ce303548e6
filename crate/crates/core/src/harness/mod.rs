//! Evaluation protocols (leave-one-person-out, cross-dataset, resolution
//! grid, two-eye fusion), error analysis and report output.

mod bins;
mod eval;
mod report;
mod study;
mod svg;

pub use bins::{error_by_bin, quadratic_fit, BinAxis, BinReport};
pub use eval::{
    cross_dataset_eval, leave_one_person_out, predict_samples, prepare_samples, score, CameraGaze,
    EvalConfig, EvalReport, PersonSummary, SampleResult,
};
pub use report::{
    read_samples_csv, write_bins_csv, write_eval_outputs, write_fusion_csv, write_grid_csv,
    write_loss_csv, write_report_csv, write_samples_csv, REFERENCE_NOTE,
};
pub use study::{fusion_eval, resolution_study, FusionReport, GridReport, DEFAULT_RESOLUTIONS};
pub use svg::{bar_chart, heatmap, line_plot, Series};

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::regressors::RegressorError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("leave-one-person-out needs at least 2 persons, found {found}")]
    TooFewPersons { found: usize },
    #[error("archive is empty: {0}")]
    EmptyArchive(String),
    #[error("quadratic fit needs at least 3 non-empty bins, found {found}")]
    InsufficientBins { found: usize },
    #[error("no sample pairs with both eyes and camera geometry")]
    NoPairedSamples,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl HarnessError {
    /// Errors caused by bad input rather than a failing computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Self::TooFewPersons { .. }
            | Self::EmptyArchive(_)
            | Self::InsufficientBins { .. }
            | Self::NoPairedSamples
            | Self::InvalidConfig(_)
            | Self::Parse { .. } => true,
            Self::Regressor(e) => matches!(
                e,
                RegressorError::InvalidConfig(_)
                    | RegressorError::InvalidArchitecture(_)
                    | RegressorError::MissingPupil(_)
                    | RegressorError::ShapeMismatch(_)
                    | RegressorError::EmptyTrainingSet
                    | RegressorError::Checkpoint(_)
            ),
            Self::Dataset(e) => e.is_validation(),
            Self::Io { .. } => false,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
