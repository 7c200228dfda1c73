use serde::{Deserialize, Serialize};

use crate::condition::{FusionKind, FusionSpec};
use crate::dsp::{smoothing_taps, StftConfig, N_MELS, SAMPLE_RATE};
use crate::sinc::DEFAULT_FILTER_LEN;
use crate::source::SourceConfig;

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Fixed filters whose cutoffs switch on the U/V flag.
    Base,
    Sinc1,
    Sinc2,
    Sinc3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Base, Variant::Sinc1, Variant::Sinc2, Variant::Sinc3];

    pub fn fusion(self) -> Option<FusionKind> {
        match self {
            Variant::Base => None,
            Variant::Sinc1 => Some(FusionKind::Sinc1),
            Variant::Sinc2 => Some(FusionKind::Sinc2),
            Variant::Sinc3 => Some(FusionKind::Sinc3),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Sinc1 => "sinc1",
            Variant::Sinc2 => "sinc2",
            Variant::Sinc3 => "sinc3",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant {s:?} (expected base, sinc1, sinc2 or sinc3)"))
    }
}

/// Normalized cutoffs of the fixed merge filters used by [`Variant::Base`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseCutoffs {
    pub voiced_low: f64,
    pub voiced_high: f64,
    pub unvoiced_low: f64,
    pub unvoiced_high: f64,
}

impl Default for BaseCutoffs {
    /// 5/7 kHz when voiced, 1/3 kHz when unvoiced, over an 8 kHz Nyquist.
    fn default() -> Self {
        Self {
            voiced_low: 5000.0 / 8000.0,
            voiced_high: 7000.0 / 8000.0,
            unvoiced_low: 1000.0 / 8000.0,
            unvoiced_high: 3000.0 / 8000.0,
        }
    }
}

impl BaseCutoffs {
    /// Per-sample (low, high) cutoffs for a per-frame F0 track.
    pub fn trajectories(&self, f0_frames: &[f64], frame_shift: usize) -> (Vec<f64>, Vec<f64>) {
        let mut low = Vec::with_capacity(f0_frames.len() * frame_shift);
        let mut high = Vec::with_capacity(f0_frames.len() * frame_shift);
        for f in f0_frames {
            let (l, h) = if *f > 0.0 {
                (self.voiced_low, self.voiced_high)
            } else {
                (self.unvoiced_low, self.unvoiced_high)
            };
            low.extend(std::iter::repeat_n(l, frame_shift));
            high.extend(std::iter::repeat_n(h, frame_shift));
        }
        (low, high)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Width of the filter blocks and the conditioning vectors.
    pub channels: usize,
    pub layers_per_block: usize,
    pub kernel: usize,
    pub harmonic_blocks: usize,
    pub noise_blocks: usize,
    /// Taps of the merge filters.
    pub filter_len: usize,
    /// Hidden units per direction of the cutoff-predicting Bi-LSTM.
    pub mvf_hidden: usize,
    pub smoothing_ms: f64,
    pub n_mels: usize,
    pub source: SourceConfig,
    pub losses: Vec<StftConfig>,
    pub base_cutoffs: BaseCutoffs,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full(Variant::Sinc1)
    }
}

impl ModelConfig {
    /// Full size: five harmonic blocks, one noise block, 64 channels.
    pub fn full(variant: Variant) -> Self {
        Self {
            variant,
            channels: 64,
            layers_per_block: 10,
            kernel: 3,
            harmonic_blocks: 5,
            noise_blocks: 1,
            filter_len: DEFAULT_FILTER_LEN,
            mvf_hidden: 32,
            smoothing_ms: 5.0,
            n_mels: N_MELS,
            source: SourceConfig::default(),
            losses: StftConfig::loss_defaults().to_vec(),
            base_cutoffs: BaseCutoffs::default(),
        }
    }

    /// One harmonic block, one noise block, 16 channels.
    pub fn tiny(variant: Variant) -> Self {
        Self {
            channels: 16,
            harmonic_blocks: 1,
            noise_blocks: 1,
            ..Self::full(variant)
        }
    }

    pub fn fusion_spec(&self) -> Option<FusionSpec> {
        self.variant.fusion().map(FusionSpec::new)
    }

    pub fn smoothing_taps(&self) -> usize {
        smoothing_taps(self.smoothing_ms, SAMPLE_RATE)
    }

    /// Dilation of layer `k` (0-based) inside a block: `2^(k mod 10)`.
    pub fn dilation(k: usize) -> usize {
        1 << (k % 10)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.channels < 2 || !self.channels.is_multiple_of(2) {
            return bad(format!("channels must be even and >= 2, got {}", self.channels));
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.filter_len.is_multiple_of(2) {
            return bad(format!("filter_len must be odd, got {}", self.filter_len));
        }
        if self.harmonic_blocks == 0 || self.noise_blocks == 0 || self.layers_per_block == 0 {
            return bad("block and layer counts must be positive".into());
        }
        if self.mvf_hidden == 0 || self.n_mels == 0 {
            return bad("mvf_hidden and n_mels must be positive".into());
        }
        if self.source.num_harmonics == 0 {
            return bad("num_harmonics must be positive".into());
        }
        if !(self.source.alpha > 0.0 && self.source.sigma > 0.0) {
            return bad("alpha and sigma must be positive".into());
        }
        if self.losses.is_empty() {
            return bad("at least one loss resolution is required".into());
        }
        for l in &self.losses {
            l.validate().map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilations_cycle() {
        let d: Vec<usize> = (0..12).map(ModelConfig::dilation).collect();
        assert_eq!(d, [1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1, 2]);
    }

    #[test]
    fn defaults() {
        let c = ModelConfig::full(Variant::Base);
        assert_eq!((c.channels, c.harmonic_blocks, c.noise_blocks, c.filter_len), (64, 5, 1, 31));
        assert_eq!(c.losses, StftConfig::loss_defaults().to_vec());
        assert_eq!(c.smoothing_taps(), 81);
        let b = c.base_cutoffs;
        assert_eq!((b.voiced_low, b.voiced_high), (0.625, 0.875));
        assert_eq!((b.unvoiced_low, b.unvoiced_high), (0.125, 0.375));
        c.validate().unwrap();
        ModelConfig::tiny(Variant::Sinc3).validate().unwrap();
    }

    #[test]
    fn rejects_bad_sizes() {
        let mut c = ModelConfig::tiny(Variant::Sinc1);
        c.channels = 15;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny(Variant::Sinc1);
        c.filter_len = 30;
        assert!(c.validate().is_err());
    }

    #[test]
    fn variant_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
        assert!("sinc4".parse::<Variant>().is_err());
    }

    #[test]
    fn switched_trajectories() {
        let (lo, hi) = BaseCutoffs::default().trajectories(&[0.0, 120.0], 80);
        assert!(lo[..80].iter().all(|v| *v == 0.125) && hi[..80].iter().all(|v| *v == 0.375));
        assert!(lo[80..].iter().all(|v| *v == 0.625) && hi[80..].iter().all(|v| *v == 0.875));
    }
}
