//! Experiment plumbing: configuration, the navigation environment adapter,
//! file formats, dataset export and factorization of exported frames,
//! training runs, sweeps and reports.

mod config;
mod dataset;
pub mod formats;
mod navigation;
mod runs;

use thiserror::Error;

use crate::approximator::NnError;
use crate::geometry::GeometryError;
use crate::midlevel::MidlevelError;
use crate::sac::SacError;
use crate::scene::SceneError;

pub use config::{parse_representation, speed, ExperimentConfig, ExperimentSection, SweepSection, REFERENCE_CONFIG};
pub use dataset::{
    factorize_files, freeze_dynamic_objects, render_dataset, DatasetOptions, FactorizeOutput, FramePaths,
};
pub use navigation::NavigationEnv;
pub use runs::{
    build_report, eval_checkpoint, read_episodes, run_sweep, train_run, write_report, Cell, EpisodeRecord,
    EvalCondition, RunManifest, RunOutput, SweepKind, SweepReport, OUTPUT_ENV, THREADS_ENV,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{file}: byte {offset}: {message}")]
    Format {
        file: String,
        offset: usize,
        message: String,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Sac(#[from] SacError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Midlevel(#[from] MidlevelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl HarnessError {
    /// Process exit code: 2 for bad configuration or input files, 3 for
    /// numeric failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Format { .. } => 2,
            HarnessError::Scene(
                SceneError::UnknownEnvironment(_)
                | SceneError::UnknownSpeedMode(_)
                | SceneError::InvalidSpeedMode(..)
                | SceneError::InvalidFps(_),
            ) => 2,
            HarnessError::Midlevel(MidlevelError::UnknownToken(_) | MidlevelError::Duplicate(_) | MidlevelError::Empty) => 2,
            HarnessError::Numeric(_)
            | HarnessError::Sac(SacError::Diverged { .. } | SacError::NonFinite(_))
            | HarnessError::Nn(NnError::NonFiniteGradient) => 3,
            HarnessError::Sac(SacError::Nn(NnError::NonFiniteGradient)) => 3,
            _ => 1,
        }
    }
}
