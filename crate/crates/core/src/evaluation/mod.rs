//! Reproducible experiments: arrangement sweep, localization and depth
//! classification benchmarks, noise calibration and surface validation.

mod config;
mod format;
mod knn;
mod pipelines;
mod surface;

pub use config::{apply_override, CalibrationConfig, ExperimentConfig, NoiseSettings, SurfaceConfig, TaskConfig};
pub use format::{fmt_g9, round9, to_json_rounded};
pub use knn::{knn_oracle, knn_predict, nearest_neighbors};
pub use pipelines::{
    calibrate_noise, prepare_split, run_depth_classification, run_localization, run_sweep, seeds_for, Calibration,
    CalibrationStep, ClassificationReport, ErrorRecord, LocalizationReport, ModelResult, ReportMeta, Seeds, SweepResult,
    SweepRow,
};
pub use surface::{align_track, parse_touch_track, synthetic_mocap, unit_frame, validate_surface_model, SurfaceReport};

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::geometry::GeometryError;
use crate::models::ModelError;
use crate::sensing::SensingError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no indenter position for mocap frame {frame}")]
    MissingTouchTrack { frame: usize },
    #[error("{0}")]
    Io(String),
}

impl EvalError {
    /// Process exit status: 2 for bad input data or configuration, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            EvalError::Model(ModelError::NonFiniteLoss { .. } | ModelError::InvalidParams(_)) => 3,
            EvalError::Geometry(GeometryError::AllMasked) => 3,
            EvalError::Dataset(DatasetError::DegenerateRestFrame(_)) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
