//! Calibration and annotation ingestion, the normalization pipeline that
//! turns annotated frames into eye samples, the sample archive on disk and
//! dataset statistics.

mod annotations;
mod archive;
mod calibration;
mod pipeline;
mod stats;

pub use annotations::{
    format_annotations, parse_annotations, parse_annotations_str, validate_bounds,
    AnnotationRecord,
};
pub use archive::{read_archive, write_archive, NormalizedSample, SampleGeometry};
pub use calibration::{parse_calibration, parse_calibration_str, CalibrationFile, ScreenPose};
pub use pipeline::{
    build_normalized_dataset, normalize_record, BuildOptions, BuildOutput, DirectorySource,
    ImageSource, RecordFailure,
};
pub use stats::{dataset_statistics, image_statistics, DatasetStats, Histogram, Histogram2d};

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::imaging::ImageError;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}:{line}: {message}")]
    Validation {
        file: String,
        line: usize,
        message: String,
    },
    #[error("no record survived normalization ({failures} failures)")]
    EmptyOutput { failures: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        DatasetError::Io {
            path: path.into(),
            source,
        }
    }

    /// Malformed or inconsistent input, as opposed to a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            DatasetError::Parse { .. }
                | DatasetError::Validation { .. }
                | DatasetError::EmptyInput
                | DatasetError::Image(ImageError::InvalidPgm(_))
        )
    }
}

/// Shortest text form of a float that parses back to the same value.
pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn parse_reals(s: &str, expected: usize) -> Result<Vec<f64>, String> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("'{}' is not a number", t.trim()))
        })
        .collect::<Result<_, _>>()?;
    if vals.len() != expected {
        return Err(format!("expected {expected} values, got {}", vals.len()));
    }
    if let Some(bad) = vals.iter().find(|v| !v.is_finite()) {
        return Err(format!("non-finite value {bad}"));
    }
    Ok(vals)
}
