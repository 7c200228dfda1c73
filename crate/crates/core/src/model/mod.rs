//! Harmonic-plus-noise waveform model: filter blocks, branch assembly,
//! merge, spectral loss, training and synthesis.

mod config;
mod filter;
pub mod loss;
mod network;
mod train;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::dsp::DspError;
use crate::sinc::FilterError;

pub use config::{BaseCutoffs, ModelConfig, Variant};
pub use filter::FilterBlock;
pub use loss::{spectral_loss, spectral_loss_node, LossReport, SpectralLossOp};
pub use network::{CutoffPredictor, CutoffTrajectory, ForwardOutput, HnsfModel, MergeCutoff};
pub use train::{checkpoint_path, train, LossRow, StepRecord, TrainConfig, TrainOutcome, Trainer, Utterance};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),
    #[error("checkpoint holds a {found} model but {expected} was requested")]
    VariantMismatch { expected: Variant, found: Variant },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("training data is empty")]
    EmptyDataset,
    #[error("writing training outputs: {0}")]
    Output(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
