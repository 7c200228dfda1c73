//! Non-differentiable signal processing: STFT, feature extraction,
//! frame-to-sample upsampling and moving-average smoothing.

pub mod mel;
pub mod pitch;
pub mod stft;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mel::{log_mel, MelConfig, MelFilterbank};
pub use pitch::{estimate_f0, PitchConfig};
pub use stft::{hann, stft_log_amplitude, Spectrogram, Stft, StftConfig, LOG_FLOOR};

pub const SAMPLE_RATE: u32 = 16_000;
/// Samples per 5 ms feature frame at 16 kHz.
pub const FRAME_SHIFT: usize = 80;
pub const FRAME_SHIFT_MS: f64 = 5.0;
pub const N_MELS: usize = 80;
/// Taps of the centred cutoff smoothing window (5 ms widened to odd length).
pub const SMOOTHING_TAPS: usize = 81;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid features: {0}")]
    InvalidFeatures(String),
    #[error("waveform contains a non-finite sample at index {0}")]
    NonFinite(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Result<Self, DspError> {
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(DspError::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate: SAMPLE_RATE,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Odd tap count covering `window_ms` at `sample_rate`.
pub fn smoothing_taps(window_ms: f64, sample_rate: u32) -> usize {
    let n = (window_ms * sample_rate as f64 / 1000.0).round() as usize;
    n.max(1) | 1
}

/// Repeats every frame value `factor` times.
pub fn upsample_repeat(frames: &[f64], factor: usize) -> Vec<f64> {
    frames
        .iter()
        .flat_map(|v| std::iter::repeat_n(*v, factor))
        .collect()
}

/// Source index feeding output `t` through tap `j` of a centred window,
/// replicating the boundary samples.
#[inline]
pub(crate) fn window_source(t: usize, j: usize, taps: usize, len: usize) -> usize {
    let half = taps / 2;
    (t + j).saturating_sub(half).min(len - 1)
}

/// Centred boxcar average with `taps` (odd) taps; edges replicate the
/// boundary values. Output length equals input length.
pub fn moving_average(x: &[f64], taps: usize) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let scale = 1.0 / taps as f64;
    (0..x.len())
        .map(|t| {
            (0..taps)
                .map(|j| x[window_source(t, j, taps, x.len())])
                .sum::<f64>()
                * scale
        })
        .collect()
}

/// Adjoint of [`moving_average`]: routes each output gradient back to the
/// samples that fed it.
pub fn moving_average_adjoint(grad: &[f64], taps: usize) -> Vec<f64> {
    let mut out = vec![0.0; grad.len()];
    let scale = 1.0 / taps as f64;
    for (t, g) in grad.iter().enumerate() {
        for j in 0..taps {
            out[window_source(t, j, taps, grad.len())] += g * scale;
        }
    }
    out
}

/// Frame-rate acoustic features: F0 in Hz (0 = unvoiced) and a log-mel
/// vector per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcousticFeatures {
    pub f0: Vec<f64>,
    /// Frame-major `frames x n_mels`.
    pub mel: Vec<f64>,
    pub n_mels: usize,
    pub frame_shift_ms: f64,
}

impl AcousticFeatures {
    pub fn new(f0: Vec<f64>, mel: Vec<f64>, n_mels: usize) -> Result<Self, DspError> {
        if n_mels == 0 || mel.len() != f0.len() * n_mels {
            return Err(DspError::InvalidFeatures(format!(
                "{} F0 frames but {} mel values for {} bands",
                f0.len(),
                mel.len(),
                n_mels
            )));
        }
        if let Some(b) = f0.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(DspError::InvalidFeatures(format!(
                "F0 at frame {b} is {} (must be finite and >= 0)",
                f0[b]
            )));
        }
        if let Some(i) = mel.iter().position(|v| !v.is_finite()) {
            return Err(DspError::InvalidFeatures(format!(
                "mel value {i} is not finite"
            )));
        }
        Ok(Self {
            f0,
            mel,
            n_mels,
            frame_shift_ms: FRAME_SHIFT_MS,
        })
    }

    pub fn frames(&self) -> usize {
        self.f0.len()
    }

    /// Sample count generated for these features.
    pub fn num_samples(&self) -> usize {
        self.frames() * FRAME_SHIFT
    }

    pub fn mel_frame(&self, b: usize) -> &[f64] {
        &self.mel[b * self.n_mels..(b + 1) * self.n_mels]
    }

    pub fn is_voiced(&self, b: usize) -> bool {
        self.f0[b] > 0.0
    }

    /// Frames `start..start + len`.
    pub fn segment(&self, start: usize, len: usize) -> Self {
        let end = (start + len).min(self.frames());
        Self {
            f0: self.f0[start..end].to_vec(),
            mel: self.mel[start * self.n_mels..end * self.n_mels].to_vec(),
            n_mels: self.n_mels,
            frame_shift_ms: self.frame_shift_ms,
        }
    }

    /// Mel matrix transposed to band-major `n_mels x frames`.
    pub fn mel_band_major(&self) -> Vec<f64> {
        let frames = self.frames();
        let mut out = vec![0.0; self.mel.len()];
        for b in 0..frames {
            for m in 0..self.n_mels {
                out[m * frames + b] = self.mel[b * self.n_mels + m];
            }
        }
        out
    }
}

/// Log-mel and F0 analysis at a 5 ms frame shift. Produces
/// `ceil(len / 80)` frames.
pub fn extract_features(w: &Waveform) -> AcousticFeatures {
    let frames = w.len().div_ceil(FRAME_SHIFT);
    let mel_cfg = MelConfig::default();
    let mel = log_mel(&w.samples, frames, &mel_cfg);
    let f0 = estimate_f0(
        &w.samples,
        w.sample_rate as f64,
        FRAME_SHIFT,
        frames,
        &PitchConfig::default(),
    );
    AcousticFeatures {
        f0,
        mel,
        n_mels: mel_cfg.n_mels,
        frame_shift_ms: FRAME_SHIFT_MS,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn upsample_examples() {
        let up = upsample_repeat(&[100.0, 0.0], 80);
        assert_eq!(up.len(), 160);
        assert!(up[..80].iter().all(|v| *v == 100.0));
        assert!(up[80..].iter().all(|v| *v == 0.0));
        assert_eq!(upsample_repeat(&[7.0], 1), vec![7.0]);
        assert!(upsample_repeat(&[], 80).is_empty());
    }

    #[test]
    fn smoothing_window_is_81_taps() {
        assert_eq!(smoothing_taps(5.0, SAMPLE_RATE), SMOOTHING_TAPS);
    }

    #[test]
    fn moving_average_of_constant() {
        let y = moving_average(&vec![0.37; 300], SMOOTHING_TAPS);
        assert!(y.iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn moving_average_impulse_plateau() {
        let mut x = vec![0.0; 200];
        x[100] = 1.0;
        let y = moving_average(&x, 81);
        let nonzero: Vec<usize> = (0..200).filter(|t| y[*t] != 0.0).collect();
        assert_eq!(nonzero.len(), 81);
        assert_eq!(nonzero[0], 60);
        assert!(nonzero.iter().all(|t| (y[*t] - 1.0 / 81.0).abs() < 1e-15));
    }

    #[test]
    fn moving_average_step_matches_brute_force() {
        let x: Vec<f64> = (0..300).map(|t| if t < 150 { 0.0 } else { 1.0 }).collect();
        let y = moving_average(&x, 81);
        for t in 0..300 {
            // brute force with explicit clamped window
            let mut s = 0.0;
            for k in t as isize - 40..=t as isize + 40 {
                s += x[k.clamp(0, 299) as usize];
            }
            assert!((y[t] - s / 81.0).abs() < 1e-12);
        }
        assert!(y.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn adjoint_matches_transpose() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ax = moving_average(&x, 9);
        let atg = moving_average_adjoint(&g, 9);
        let lhs: f64 = ax.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&atg).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn feature_validation() {
        assert!(AcousticFeatures::new(vec![100.0, 0.0], vec![0.0; 160], 80).is_ok());
        assert!(AcousticFeatures::new(vec![-1.0], vec![0.0; 80], 80).is_err());
        assert!(AcousticFeatures::new(vec![1.0], vec![0.0; 79], 80).is_err());
    }

    proptest! {
        #[test]
        fn upsample_then_decimate_is_identity(
            frames in proptest::collection::vec(-1e3f64..1e3, 0..40),
            factor in 1usize..100,
        ) {
            let up = upsample_repeat(&frames, factor);
            prop_assert_eq!(up.len(), frames.len() * factor);
            let back: Vec<f64> = up.iter().step_by(factor).copied().collect();
            prop_assert_eq!(back, frames);
        }

        #[test]
        fn moving_average_stays_in_range(
            x in proptest::collection::vec(-10f64..10.0, 1..400),
        ) {
            let y = moving_average(&x, SMOOTHING_TAPS);
            let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-12 * hi.abs().max(lo.abs()).max(1.0);
            prop_assert_eq!(y.len(), x.len());
            for v in y {
                prop_assert!(v >= lo - tol && v <= hi + tol);
            }
        }
    }
}
