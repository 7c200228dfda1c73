use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Checkpoint, Graph, StepOutcome};
use crate::dsp::{extract_features, AcousticFeatures, Waveform, FRAME_SHIFT};

use super::loss::{spectral_loss_node, LossReport};
use super::{HnsfModel, ModelError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Training segment length in frames (200 frames = 1 s).
    pub segment_frames: usize,
    /// Write a checkpoint every this many steps; 0 disables periodic saves.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            segment_frames: 200,
            checkpoint_every: 500,
            seed: 0,
            adam: AdamConfig::default(),
            clip_norm: 5.0,
        }
    }
}

/// Features and the natural waveform they describe.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub features: AcousticFeatures,
    pub samples: Vec<f64>,
}

impl Utterance {
    pub fn new(features: AcousticFeatures, samples: Vec<f64>) -> Self {
        Self { features, samples }
    }

    pub fn from_waveform(w: &Waveform) -> Self {
        Self {
            features: extract_features(w),
            samples: w.samples.clone(),
        }
    }

    /// Frames `start..start + len` and the matching samples, zero-padded
    /// to `80` samples per frame.
    pub fn segment(&self, start: usize, len: usize) -> Utterance {
        let features = self.features.segment(start, len);
        let from = (start * FRAME_SHIFT).min(self.samples.len());
        let to = ((start + features.frames()) * FRAME_SHIFT).min(self.samples.len());
        let mut samples = self.samples[from..to].to_vec();
        samples.resize(features.num_samples(), 0.0);
        Utterance { features, samples }
    }
}

/// One row of the loss curve: the loss measured at `step`, before that
/// step's update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub report: LossReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub row: LossRow,
    pub grad_norm: f64,
    pub outcome: StepOutcome,
}

/// Single-threaded Adam training on random fixed-length segments.
pub struct Trainer {
    model: HnsfModel,
    adam: Adam,
    data: Vec<Utterance>,
    cfg: TrainConfig,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(model: HnsfModel, data: Vec<Utterance>, cfg: TrainConfig) -> Result<Self, ModelError> {
        if data.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        if cfg.segment_frames == 0 {
            return Err(ModelError::InvalidConfig("segment_frames must be positive".into()));
        }
        for (i, u) in data.iter().enumerate() {
            if u.features.frames() == 0 {
                return Err(ModelError::FeatureMismatch(format!("utterance {i} has no frames")));
            }
        }
        let adam = Adam::new(cfg.adam, model.store());
        // Separate stream from the one used to initialise the parameters.
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        Ok(Self {
            model,
            adam,
            data,
            cfg,
            rng,
            step: 0,
        })
    }

    pub fn model(&self) -> &HnsfModel {
        &self.model
    }

    pub fn into_model(self) -> HnsfModel {
        self.model
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Number of updates attempted so far.
    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.model.checkpoint(Some(&self.adam), self.step)
    }

    fn next_segment(&mut self) -> Utterance {
        let i = self.rng.random_range(0..self.data.len());
        let u = &self.data[i];
        let frames = u.features.frames();
        let len = self.cfg.segment_frames.min(frames);
        let start = self.rng.random_range(0..=frames - len);
        u.segment(start, len)
    }

    /// Draws a segment, runs forward and backward and leaves the gradients
    /// in the parameter store. Returns the loss before any update.
    pub fn compute_gradients(&mut self) -> Result<LossReport, ModelError> {
        let seg = self.next_segment();
        let exc = self.model.excitation(&seg.features, &mut self.rng);
        let mut g = Graph::new();
        let out = self.model.forward(&mut g, &seg.features, &exc)?;
        let (parts, total) = spectral_loss_node(&mut g, out.output, seg.samples, &self.model.config().losses)?;
        let report = LossReport::from_components(g.value(parts).data().to_vec());
        if !report.total.is_finite() {
            return Err(ModelError::NonFiniteLoss { step: self.step });
        }
        g.backward(total)?;
        let store = self.model.store_mut();
        store.zero_grad();
        g.accumulate_param_grads(store);
        Ok(report)
    }

    /// One update: gradients, clipping, Adam.
    pub fn step(&mut self) -> Result<StepRecord, ModelError> {
        let report = self.compute_gradients()?;
        let store = self.model.store_mut();
        let grad_norm = store.clip_grad_norm(self.cfg.clip_norm);
        let outcome = self.adam.step(store);
        let row = LossRow {
            step: self.step,
            report,
        };
        self.step += 1;
        Ok(StepRecord {
            row,
            grad_norm,
            outcome,
        })
    }

    /// Loss on a fresh segment without updating.
    pub fn probe(&mut self) -> Result<LossRow, ModelError> {
        let report = self.compute_gradients()?;
        Ok(LossRow {
            step: self.step,
            report,
        })
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: HnsfModel,
    pub curve: Vec<LossRow>,
    pub final_checkpoint: PathBuf,
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("step_{step:06}.ckpt"))
}

/// Runs `cfg.steps` updates, writing `loss_curve.csv`, periodic checkpoints
/// and `final.ckpt` into `out_dir`. The curve has `steps + 1` rows; the last
/// one measures the trained model.
///
/// A non-finite loss aborts the run; checkpoints already written stay on disk.
pub fn train(
    model: HnsfModel,
    data: Vec<Utterance>,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome, ModelError> {
    std::fs::create_dir_all(out_dir)?;
    let mut trainer = Trainer::new(model, data, cfg.clone())?;
    trainer.checkpoint().save(&checkpoint_path(out_dir, 0))?;
    let mut last_good = checkpoint_path(out_dir, 0);
    let mut curve = Vec::with_capacity(cfg.steps + 1);
    let curve_path = out_dir.join("loss_curve.csv");
    let result = (|| {
        for _ in 0..cfg.steps {
            let rec = trainer.step()?;
            log::info!(
                "step {} loss {:.5} grad-norm {:.4}",
                rec.row.step,
                rec.row.report.total,
                rec.grad_norm
            );
            if rec.outcome == StepOutcome::SkippedNonFinite {
                log::warn!("step {}: non-finite gradient, update skipped", rec.row.step);
            }
            curve.push(rec.row);
            let done = trainer.steps_done();
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                let path = checkpoint_path(out_dir, done);
                trainer.checkpoint().save(&path)?;
                last_good = path;
            }
        }
        curve.push(trainer.probe()?);
        Ok::<(), ModelError>(())
    })();
    crate::io::write_loss_curve(&curve_path, &curve)?;
    if let Err(e) = result {
        log::error!("training aborted: {e}; last good checkpoint {}", last_good.display());
        return Err(e);
    }
    let final_checkpoint = out_dir.join("final.ckpt");
    trainer.checkpoint().save(&final_checkpoint)?;
    Ok(TrainOutcome {
        model: trainer.into_model(),
        curve,
        final_checkpoint,
    })
}
