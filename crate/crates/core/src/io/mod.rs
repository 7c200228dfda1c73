//! File formats: WAV, feature payloads, run configuration and CSV tables.

mod features;
mod tables;
mod wav;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::DspError;
use crate::model::{ModelConfig, TrainConfig};
use crate::sinc::FilterError;

pub use features::{read_features, sidecar_path, write_features, FeatureHeader};
pub use tables::{mvf_rows, response_rows, write_loss_curve, write_rows, MvfRow, ResponseRow};
pub use wav::{quantize, wav_read, wav_write};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("unsupported WAV: {0}")]
    UnsupportedWav(String),
    #[error("WAV codec: {0}")]
    Wav(#[from] hound::Error),
    #[error("feature file: {0}")]
    Features(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<IoError> for crate::model::ModelError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io(e) => Self::Io(e),
            other => Self::Output(other.to_string()),
        }
    }
}

/// Everything needed to reproduce a run. Missing JSON fields take their
/// defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Seed for parameter initialisation.
    pub init_seed: u64,
    pub paths: BTreeMap<String, PathBuf>,
}


impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Single-line JSON with every default materialized.
    pub fn to_log_line(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }
}
