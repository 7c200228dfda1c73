//! Sine-based harmonic excitation and Gaussian noise excitation.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    /// Sine amplitude.
    pub alpha: f64,
    /// Standard deviation of the additive noise on voiced samples.
    pub sigma: f64,
    /// Number of harmonics including the fundamental.
    pub num_harmonics: usize,
    pub sample_rate: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            sigma: 0.003,
            num_harmonics: 8,
            sample_rate: 16000.0,
        }
    }
}

impl SourceConfig {
    /// Standard deviation of unvoiced and noise-branch excitation.
    pub fn noise_std(&self) -> f64 {
        self.alpha / 3.0
    }
}

/// Excitation for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Excitation {
    /// One sequence per harmonic, fundamental first.
    pub harmonics: Vec<Vec<f64>>,
    /// Input of the noise branch.
    pub noise: Vec<f64>,
    /// Initial phase of each harmonic, in `[-pi, pi]`.
    pub phases: Vec<f64>,
}

impl Excitation {
    pub fn len(&self) -> usize {
        self.noise.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noise.is_empty()
    }

    /// Harmonics stacked as an `[I, T]` tensor.
    pub fn harmonics_tensor(&self) -> Tensor {
        let t = self.len();
        let data = self.harmonics.iter().flatten().copied().collect();
        Tensor::new(vec![self.harmonics.len(), t], data).expect("equal-length harmonics")
    }
}

/// The `harmonic`-th (1-based) sine excitation with a fixed initial phase.
///
/// Voiced samples carry `alpha * sin(phase_t + phi) + n_t`, unvoiced samples
/// carry `alpha / (3 sigma) * n_t`, with `n_t ~ N(0, sigma^2)`. The phase
/// accumulates `2 pi i f_k / fs` over every sample up to `t`.
pub fn sine_harmonic_with_phase<R: Rng + ?Sized>(
    f0: &[f64],
    harmonic: usize,
    phase: f64,
    cfg: &SourceConfig,
    rng: &mut R,
) -> Vec<f64> {
    let normal = Normal::new(0.0, cfg.sigma).expect("sigma must be positive and finite");
    let step = TAU * harmonic as f64 / cfg.sample_rate;
    let nyquist = cfg.sample_rate / 2.0;
    let unvoiced_gain = cfg.alpha / (3.0 * cfg.sigma);
    let mut aliased = 0usize;
    let mut acc = 0.0f64;
    let out = f0
        .iter()
        .map(|&f| {
            acc = (acc + step * f) % TAU;
            let n = normal.sample(rng);
            if f > 0.0 {
                if harmonic as f64 * f >= nyquist {
                    aliased += 1;
                }
                cfg.alpha * (acc + phase).sin() + n
            } else {
                unvoiced_gain * n
            }
        })
        .collect();
    if aliased > 0 {
        log::warn!("harmonic {harmonic} exceeds Nyquist on {aliased} voiced samples");
    }
    out
}

/// Like [`sine_harmonic_with_phase`], drawing the initial phase from `rng`.
pub fn sine_harmonic<R: Rng + ?Sized>(
    f0: &[f64],
    harmonic: usize,
    cfg: &SourceConfig,
    rng: &mut R,
) -> Vec<f64> {
    let phase = rng.random_range(-PI..=PI);
    sine_harmonic_with_phase(f0, harmonic, phase, cfg, rng)
}

/// i.i.d. `N(0, (alpha/3)^2)` samples.
pub fn noise_excitation<R: Rng + ?Sized>(len: usize, cfg: &SourceConfig, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, cfg.noise_std()).expect("alpha must be positive and finite");
    (0..len).map(|_| normal.sample(rng)).collect()
}

/// Harmonic and noise excitation for a per-sample F0 track.
pub fn excitation<R: Rng + ?Sized>(f0: &[f64], cfg: &SourceConfig, rng: &mut R) -> Excitation {
    let phases: Vec<f64> = (0..cfg.num_harmonics)
        .map(|_| rng.random_range(-PI..=PI))
        .collect();
    let harmonics = phases
        .iter()
        .enumerate()
        .map(|(i, &phi)| sine_harmonic_with_phase(f0, i + 1, phi, cfg, rng))
        .collect();
    let noise = noise_excitation(f0.len(), cfg, rng);
    Excitation {
        harmonics,
        noise,
        phases,
    }
}

/// Feedforward merge `e = tanh(sum_i w_i e_i + w_b)`.
#[derive(Clone, Copy, Debug)]
pub struct HarmonicMerge {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl HarmonicMerge {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        num_harmonics: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let bound = 1.0 / (num_harmonics as f64).sqrt();
        Ok(Self {
            weight: store.register_uniform(
                &format!("{prefix}.w"),
                vec![1, num_harmonics],
                bound,
                rng,
            )?,
            bias: store.register(&format!("{prefix}.b"), Tensor::vector(vec![0.0]))?,
        })
    }

    /// `harmonics` is `[I, T]`; returns `[1, T]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, harmonics: Var) -> Result<Var, AutodiffError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let mixed = g.matmul(w, harmonics)?;
        let biased = g.add(mixed, b)?;
        Ok(g.tanh(biased))
    }
}
