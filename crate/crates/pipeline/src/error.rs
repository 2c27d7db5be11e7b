use std::io;
use std::path::{Path, PathBuf};

use gaitrt_core::features::FeatureError;
use gaitrt_core::gait::GaitError;
use gaitrt_core::metrics::MetricsError;
use gaitrt_core::signal::SignalError;
use gaitrt_core::synth::SynthError;
use thiserror::Error;

use crate::packet::SensorId;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("network: {0}")]
    Network(io::Error),
    #[error("dump format at byte {offset}: {msg}")]
    DumpFormat { offset: u64, msg: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("log file: {0}")]
    Log(String),
    #[error("sensor {sensor} silent for {silent_ms} ms")]
    SensorTimeout { sensor: SensorId, silent_ms: u64 },
    #[error("no packets from {0}")]
    MissingSensor(SensorId),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Gait(#[from] GaitError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Io { .. } => "E_IO",
            PipelineError::Network(_) => "E_NETWORK",
            PipelineError::DumpFormat { .. } => "E_DUMP_FORMAT",
            PipelineError::Config(_) => "E_CONFIG",
            PipelineError::Log(_) => "E_LOG",
            PipelineError::SensorTimeout { .. } => "E_SENSOR_TIMEOUT",
            PipelineError::MissingSensor(_) => "E_MISSING_SENSOR",
            PipelineError::InsufficientData(_) => "E_INSUFFICIENT_DATA",
            PipelineError::Feature(e) => e.code(),
            PipelineError::Synth(e) => e.code(),
            PipelineError::Signal(e) => e.code(),
            PipelineError::Gait(e) => e.code(),
            PipelineError::Metrics(e) => e.code(),
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
