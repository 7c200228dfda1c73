use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, Checkpoint, Graph, ParamStore, Tensor, Var};
use crate::condition::{uv_trajectory, ConditionNet, FusedCutoff, Fusion, MvfBranch};
use crate::dsp::{upsample_repeat, AcousticFeatures, Waveform, FRAME_SHIFT};
use crate::sinc::{SincMergeOp, SwitchedMergeOp};
use crate::source::{excitation, Excitation, HarmonicMerge};

use super::loss::{spectral_loss_node, LossReport};
use super::{FilterBlock, ModelConfig, ModelError, Variant};

/// Cutoff-predicting branch of the trainable variants.
#[derive(Clone, Copy, Debug)]
pub struct CutoffPredictor {
    pub branch: MvfBranch,
    pub fusion: Fusion,
}

/// How the two branches were merged in one forward pass.
#[derive(Clone, Debug)]
pub enum MergeCutoff {
    /// Fixed per-sample cutoffs of the base variant.
    Switched { low: Vec<f64>, high: Vec<f64> },
    /// Predicted cutoff shared by both filters.
    Trainable(FusedCutoff),
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Merged waveform `[1, T]`.
    pub output: Var,
    /// Harmonic branch output before merging.
    pub harmonic: Var,
    /// Noise branch output before merging.
    pub noise: Var,
    pub cutoff: MergeCutoff,
}

/// Per-sample cutoffs of one utterance, normalized to Nyquist.
#[derive(Clone, Debug, PartialEq)]
pub struct CutoffTrajectory {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct HnsfModel {
    config: ModelConfig,
    store: ParamStore,
    cond: ConditionNet,
    merge: HarmonicMerge,
    harmonic: Vec<FilterBlock>,
    noise: Vec<FilterBlock>,
    cutoff: Option<CutoffPredictor>,
}

impl HnsfModel {
    /// Registers every parameter, initialised from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cond = ConditionNet::register(&mut store, "cond", config.n_mels, config.channels, &mut rng)?;
        let merge = HarmonicMerge::register(&mut store, "source.merge", config.source.num_harmonics, &mut rng)?;
        let harmonic = (0..config.harmonic_blocks)
            .map(|i| FilterBlock::register(&mut store, &format!("harmonic.{i}"), &config, &mut rng))
            .collect::<Result<_, _>>()?;
        let noise = (0..config.noise_blocks)
            .map(|i| FilterBlock::register(&mut store, &format!("noise.{i}"), &config, &mut rng))
            .collect::<Result<_, _>>()?;
        let cutoff = match config.fusion_spec() {
            None => None,
            Some(spec) => Some(CutoffPredictor {
                branch: MvfBranch::register(&mut store, "mvf", config.n_mels, config.mvf_hidden, &mut rng)?,
                fusion: Fusion::register(&mut store, "fusion", spec, config.smoothing_taps())?,
            }),
        };
        Ok(Self {
            config,
            store,
            cond,
            merge,
            harmonic,
            noise,
            cutoff,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn cutoff_predictor(&self) -> Option<&CutoffPredictor> {
        self.cutoff.as_ref()
    }

    fn check_features(&self, feats: &AcousticFeatures) -> Result<(), ModelError> {
        if feats.n_mels != self.config.n_mels {
            return Err(ModelError::FeatureMismatch(format!(
                "model expects {} mel bands, features have {}",
                self.config.n_mels, feats.n_mels
            )));
        }
        if feats.frames() == 0 {
            return Err(ModelError::FeatureMismatch("features contain no frames".into()));
        }
        Ok(())
    }

    /// Source signals for `feats`, drawn from `rng`.
    pub fn excitation<R: Rng + ?Sized>(&self, feats: &AcousticFeatures, rng: &mut R) -> Excitation {
        let f0 = upsample_repeat(&feats.f0, FRAME_SHIFT);
        excitation(&f0, &self.config.source, rng)
    }

    /// Builds the generation graph. The output has `80 * frames` samples.
    pub fn forward(
        &self,
        g: &mut Graph,
        feats: &AcousticFeatures,
        exc: &Excitation,
    ) -> Result<ForwardOutput, ModelError> {
        self.check_features(feats)?;
        let t = feats.num_samples();
        if exc.len() != t || exc.harmonics.len() != self.config.source.num_harmonics {
            return Err(ModelError::FeatureMismatch(format!(
                "excitation has {} harmonics of {} samples, expected {} of {t}",
                exc.harmonics.len(),
                exc.len(),
                self.config.source.num_harmonics
            )));
        }
        let store = &self.store;
        let cond = self.cond.forward(g, store, feats)?;

        let harmonics = g.constant(exc.harmonics_tensor());
        let mut h = self.merge.forward(g, store, harmonics)?;
        for block in &self.harmonic {
            h = block.forward(g, store, h, cond)?;
        }
        let mut n = g.constant(Tensor::row(exc.noise.clone()));
        for block in &self.noise {
            n = block.forward(g, store, n, cond)?;
        }

        let filter_len = self.config.filter_len;
        let (output, cutoff) = match &self.cutoff {
            None => {
                let (low, high) = self.config.base_cutoffs.trajectories(&feats.f0, FRAME_SHIFT);
                let op = SwitchedMergeOp {
                    fc_low: low.clone(),
                    fc_high: high.clone(),
                    filter_len,
                };
                let out = g.custom(&[h, n], Box::new(op))?;
                (out, MergeCutoff::Switched { low, high })
            }
            Some(pred) => {
                let r = pred.branch.forward(g, store, feats)?;
                let v = uv_trajectory(&feats.f0);
                let fused = pred.fusion.forward(g, store, &v, r)?;
                let out = g.custom(&[h, n, fused.fc], Box::new(SincMergeOp { filter_len }))?;
                (out, MergeCutoff::Trainable(fused))
            }
        };
        Ok(ForwardOutput {
            output,
            harmonic: h,
            noise: n,
            cutoff,
        })
    }

    /// Generates a waveform in one pass, clipped to `[-1, 1]`.
    pub fn synthesize(&self, feats: &AcousticFeatures, seed: u64) -> Result<Waveform, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let exc = self.excitation(feats, &mut rng);
        let mut g = Graph::new();
        let out = self.forward(&mut g, feats, &exc)?;
        let samples = g
            .value(out.output)
            .data()
            .iter()
            .map(|v| v.clamp(-1.0, 1.0))
            .collect();
        Ok(Waveform::new(samples)?)
    }

    /// Spectral loss of the model output against `natural` with the
    /// excitation drawn from `seed`.
    pub fn evaluate(
        &self,
        feats: &AcousticFeatures,
        natural: &[f64],
        seed: u64,
    ) -> Result<LossReport, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let exc = self.excitation(feats, &mut rng);
        let mut g = Graph::new();
        let out = self.forward(&mut g, feats, &exc)?;
        let (parts, _) = spectral_loss_node(&mut g, out.output, natural.to_vec(), &self.config.losses)?;
        Ok(LossReport::from_components(g.value(parts).data().to_vec()))
    }

    /// Merge cutoffs per sample. For the trainable variants both filters
    /// share the predicted cutoff.
    pub fn cutoff_trajectory(&self, feats: &AcousticFeatures) -> Result<CutoffTrajectory, ModelError> {
        self.check_features(feats)?;
        match &self.cutoff {
            None => {
                let (low, high) = self.config.base_cutoffs.trajectories(&feats.f0, FRAME_SHIFT);
                Ok(CutoffTrajectory { low, high })
            }
            Some(pred) => {
                let mut g = Graph::new();
                let r = pred.branch.forward(&mut g, &self.store, feats)?;
                let fused = pred.fusion.forward(&mut g, &self.store, &uv_trajectory(&feats.f0), r)?;
                let fc = g.value(fused.fc).data().to_vec();
                Ok(CutoffTrajectory {
                    low: fc.clone(),
                    high: fc,
                })
            }
        }
    }

    pub fn checkpoint(&self, adam: Option<&Adam>, step: usize) -> Checkpoint {
        let meta = serde_json::json!({ "model": self.config, "step": step });
        Checkpoint::capture(&self.store, adam, meta)
    }

    /// Rebuilds a model from a checkpoint. With `expected` set, a checkpoint
    /// of another variant is rejected.
    pub fn from_checkpoint(ckpt: &Checkpoint, expected: Option<Variant>) -> Result<Self, ModelError> {
        let config: ModelConfig = serde_json::from_value(ckpt.meta["model"].clone())
            .map_err(|e| ModelError::InvalidConfig(format!("checkpoint model config: {e}")))?;
        if let Some(v) = expected {
            if v != config.variant {
                return Err(ModelError::VariantMismatch {
                    expected: v,
                    found: config.variant,
                });
            }
        }
        let mut model = Self::new(config, 0)?;
        ckpt.load_into(&mut model.store)?;
        Ok(model)
    }
}
