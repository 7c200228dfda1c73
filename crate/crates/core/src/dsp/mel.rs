use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::stft::{hann, LOG_FLOOR};

/// Log-mel analysis settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MelConfig {
    pub n_fft: usize,
    pub frame_length: usize,
    pub frame_shift: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub sample_rate: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_fft: 512,
            frame_length: 320,
            frame_shift: 80,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            sample_rate: 16000.0,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale, `n_mels x (n_fft/2 + 1)`.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub bins: usize,
    pub weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &MelConfig) -> Self {
        let bins = cfg.n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let mut weights = vec![0.0; cfg.n_mels * bins];
        for m in 0..cfg.n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..bins {
                let f = k as f64 * cfg.sample_rate / cfg.n_fft as f64;
                let w = ((f - l) / (c - l)).min((r - f) / (r - c));
                weights[m * bins + k] = w.max(0.0);
            }
        }
        Self {
            n_mels: cfg.n_mels,
            bins,
            weights,
        }
    }

    pub fn apply(&self, magnitude: &[f64]) -> Vec<f64> {
        (0..self.n_mels)
            .map(|m| {
                self.weights[m * self.bins..(m + 1) * self.bins]
                    .iter()
                    .zip(magnitude)
                    .map(|(w, a)| w * a)
                    .sum()
            })
            .collect()
    }
}

/// Natural-log mel amplitudes, one row of `n_mels` per frame. Frame `b` is
/// centred on the middle of the `b`-th hop.
pub fn log_mel(samples: &[f64], frames: usize, cfg: &MelConfig) -> Vec<f64> {
    let bank = MelFilterbank::new(cfg);
    let window = hann(cfg.frame_length);
    let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
    let mut out = Vec::with_capacity(frames * cfg.n_mels);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.n_fft];
    let half = (cfg.frame_length / 2) as isize;
    for b in 0..frames {
        let center = (b * cfg.frame_shift + cfg.frame_shift / 2) as isize;
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (n, w) in window.iter().enumerate() {
            let idx = center - half + n as isize;
            if idx >= 0 {
                if let Some(x) = samples.get(idx as usize) {
                    buf[n].re = w * x;
                }
            }
        }
        fft.process(&mut buf);
        let mag: Vec<f64> = buf[..bank.bins].iter().map(|c| c.norm()).collect();
        out.extend(bank.apply(&mag).into_iter().map(|v| v.max(LOG_FLOOR).ln()));
    }
    out
}
