//! Measurement suite: speed tracking, heading deviation, end-effector
//! overlap and PCA projections, plus report emission.

mod metrics;
mod pca;
mod report;

pub use metrics::{
    end_effector_iou, heading_deviation, mean_std, recording_speed_mse, reference_arc, speed_mse, Deviation, IouReport, MeanStd,
    Recording, RecordingMeta, TrackPoint,
};
pub use pca::{occupancy_overlap, pca_project, Pca};
pub use report::{emit_report, MetricReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    Input(String),
    #[error("cannot write report: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
