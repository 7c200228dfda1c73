use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::DspError;

/// Floor added to the power spectrum before taking the logarithm.
pub const LOG_FLOOR: f64 = 1e-9;

/// Short-time analysis configuration. The window is always Hann.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub dft_bins: usize,
    pub frame_length: usize,
    pub frame_shift: usize,
}

impl StftConfig {
    /// 512-point DFT, 20 ms frames, 5 ms shift.
    pub const L1: StftConfig = StftConfig {
        dft_bins: 512,
        frame_length: 320,
        frame_shift: 80,
    };
    /// 128-point DFT, 5 ms frames, 2.5 ms shift.
    pub const L2: StftConfig = StftConfig {
        dft_bins: 128,
        frame_length: 80,
        frame_shift: 40,
    };
    /// 2048-point DFT, 120 ms frames, 40 ms shift.
    pub const L3: StftConfig = StftConfig {
        dft_bins: 2048,
        frame_length: 1920,
        frame_shift: 640,
    };

    pub fn loss_defaults() -> [StftConfig; 3] {
        [Self::L1, Self::L2, Self::L3]
    }

    /// One-sided bin count.
    pub fn bins(&self) -> usize {
        self.dft_bins / 2 + 1
    }

    /// Frames needed to cover `len` samples; the final frame is zero-padded.
    pub fn num_frames(&self, len: usize) -> usize {
        if len <= self.frame_length {
            1
        } else {
            1 + (len - self.frame_length).div_ceil(self.frame_shift)
        }
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.dft_bins < 2 || self.frame_length == 0 || self.frame_shift == 0 {
            return Err(DspError::InvalidConfig(format!("{self:?} has a zero size")));
        }
        if self.frame_length > self.dft_bins {
            return Err(DspError::InvalidConfig(format!(
                "frame length {} exceeds DFT size {}",
                self.frame_length, self.dft_bins
            )));
        }
        if self.frame_shift > self.frame_length {
            return Err(DspError::InvalidConfig(format!(
                "frame shift {} exceeds frame length {}",
                self.frame_shift, self.frame_length
            )));
        }
        Ok(())
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Row-major `frames x bins` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn frame(&self, f: usize) -> &[f64] {
        &self.data[f * self.bins..(f + 1) * self.bins]
    }

    pub fn get(&self, f: usize, k: usize) -> f64 {
        self.data[f * self.bins + k]
    }
}

/// Planned STFT for one configuration.
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self, DspError> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg,
            window: hann(cfg.frame_length),
            forward: planner.plan_fft_forward(cfg.dft_bins),
            inverse: planner.plan_fft_inverse(cfg.dft_bins),
        })
    }

    pub fn config(&self) -> StftConfig {
        self.cfg
    }

    /// Windowed, zero-padded frame `f` of `samples` as a complex buffer.
    pub fn windowed_frame(&self, samples: &[f64], f: usize) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.cfg.dft_bins];
        let start = f * self.cfg.frame_shift;
        for (n, w) in self.window.iter().enumerate() {
            if let Some(x) = samples.get(start + n) {
                buf[n].re = w * x;
            }
        }
        buf
    }

    /// Full `dft_bins`-point spectrum of frame `f`.
    pub fn frame_spectrum(&self, samples: &[f64], f: usize) -> Vec<Complex64> {
        let mut buf = self.windowed_frame(samples, f);
        self.forward.process(&mut buf);
        buf
    }

    /// One-sided spectra, `frames x bins`.
    pub fn spectra(&self, samples: &[f64]) -> Vec<Complex64> {
        let frames = self.cfg.num_frames(samples.len());
        let bins = self.cfg.bins();
        let mut out = Vec::with_capacity(frames * bins);
        for f in 0..frames {
            out.extend_from_slice(&self.frame_spectrum(samples, f)[..bins]);
        }
        out
    }

    /// `log(|X|^2 + LOG_FLOOR)` per frame and one-sided bin.
    pub fn log_power(&self, samples: &[f64]) -> Result<Spectrogram, DspError> {
        if samples.is_empty() {
            return Err(DspError::EmptyInput);
        }
        let spectra = self.spectra(samples);
        Ok(Spectrogram {
            frames: self.cfg.num_frames(samples.len()),
            bins: self.cfg.bins(),
            data: log_power_of(&spectra),
        })
    }

    /// Pulls an upstream gradient on the log-power matrix back to the
    /// samples. `spectra` must come from [`Stft::spectra`] on `samples`.
    pub fn log_power_backward(
        &self,
        samples_len: usize,
        spectra: &[Complex64],
        grad_log_power: &[f64],
    ) -> Vec<f64> {
        let bins = self.cfg.bins();
        let n_fft = self.cfg.dft_bins;
        let frames = self.cfg.num_frames(samples_len);
        let mut grad = vec![0.0; samples_len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        for f in 0..frames {
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for k in 0..bins {
                let x = spectra[f * bins + k];
                let c = grad_log_power[f * bins + k];
                buf[k] = x * (c / (x.norm_sqr() + LOG_FLOOR));
            }
            // Re(sum_k Y_k e^{+j 2 pi k n / N}) via an unnormalized inverse DFT.
            self.inverse.process(&mut buf);
            let start = f * self.cfg.frame_shift;
            for (n, w) in self.window.iter().enumerate() {
                if let Some(g) = grad.get_mut(start + n) {
                    *g += 2.0 * w * buf[n].re;
                }
            }
        }
        grad
    }
}

pub(crate) fn log_power_of(spectra: &[Complex64]) -> Vec<f64> {
    spectra
        .iter()
        .map(|c| (c.norm_sqr() + LOG_FLOOR).ln())
        .collect()
}

/// `log(|DFT(windowed frame)|^2 + 1e-9)` for every frame.
pub fn stft_log_amplitude(samples: &[f64], cfg: StftConfig) -> Result<Spectrogram, DspError> {
    Stft::new(cfg)?.log_power(samples)
}
