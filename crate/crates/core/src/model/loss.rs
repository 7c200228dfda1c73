use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, CustomOp, Graph, Tensor, Var};
use crate::dsp::stft::log_power_of;
use crate::dsp::{Stft, StftConfig};

/// Spectral distance per resolution and their sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub per_resolution: Vec<f64>,
}

impl LossReport {
    pub fn from_components(per_resolution: Vec<f64>) -> Self {
        Self {
            total: per_resolution.iter().sum(),
            per_resolution,
        }
    }
}

fn padded(x: &[f64], len: usize) -> Vec<f64> {
    let mut v = x.to_vec();
    v.resize(len, 0.0);
    v
}

fn distance(s: &[f64], s_hat: &[f64]) -> f64 {
    let sq: f64 = s.iter().zip(s_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * sq / s.len() as f64
}

/// Non-differentiable evaluation: for each resolution, the mean over frames
/// and bins of `0.5 (log|X|^2 - log|X_hat|^2)^2`. The shorter signal is
/// zero-padded.
pub fn spectral_loss(
    generated: &[f64],
    natural: &[f64],
    configs: &[StftConfig],
) -> Result<LossReport, AutodiffError> {
    let len = generated.len().max(natural.len()).max(1);
    let (a, b) = (padded(generated, len), padded(natural, len));
    let parts = configs
        .iter()
        .map(|cfg| {
            let stft = stft(*cfg)?;
            let s_hat = log_power_of(&stft.spectra(&a));
            let s = log_power_of(&stft.spectra(&b));
            Ok(distance(&s, &s_hat))
        })
        .collect::<Result<Vec<_>, AutodiffError>>()?;
    Ok(LossReport::from_components(parts))
}

fn stft(cfg: StftConfig) -> Result<Stft, AutodiffError> {
    Stft::new(cfg).map_err(|e| AutodiffError::InvalidArgument {
        op: "spectral_loss",
        msg: e.to_string(),
    })
}

/// Differentiable multi-resolution distance to a fixed natural waveform.
/// Input: generated `[1, T]`. Output: `[R]`, one distance per resolution.
pub struct SpectralLossOp {
    natural: Vec<f64>,
    resolutions: Vec<Resolution>,
    cache: Vec<Vec<Complex64>>,
}

struct Resolution {
    stft: Stft,
    /// Log power of the natural waveform, computed once.
    target: Vec<f64>,
}

impl SpectralLossOp {
    pub fn new(natural: Vec<f64>, configs: &[StftConfig]) -> Result<Self, AutodiffError> {
        let resolutions = configs
            .iter()
            .map(|cfg| {
                Ok(Resolution {
                    stft: stft(*cfg)?,
                    target: Vec::new(),
                })
            })
            .collect::<Result<_, AutodiffError>>()?;
        Ok(Self {
            natural,
            resolutions,
            cache: Vec::new(),
        })
    }
}

impl CustomOp for SpectralLossOp {
    fn name(&self) -> &'static str {
        "spectral_loss"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError> {
        let x = inputs[0].data();
        if x.is_empty() {
            return Err(AutodiffError::InvalidArgument {
                op: "spectral_loss",
                msg: "empty waveform".into(),
            });
        }
        let len = x.len().max(self.natural.len());
        let gen = padded(x, len);
        let nat = padded(&self.natural, len);
        self.cache.clear();
        let mut out = Vec::with_capacity(self.resolutions.len());
        for r in &mut self.resolutions {
            r.target = log_power_of(&r.stft.spectra(&nat));
            let spectra = r.stft.spectra(&gen);
            out.push(distance(&r.target, &log_power_of(&spectra)));
            self.cache.push(spectra);
        }
        Ok(Tensor::vector(out))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let t = inputs[0].numel();
        let len = t.max(self.natural.len());
        let mut total = vec![0.0; t];
        for ((r, spectra), g) in self.resolutions.iter().zip(&self.cache).zip(grad) {
            let s_hat = log_power_of(spectra);
            let scale = g / s_hat.len() as f64;
            let d: Vec<f64> = s_hat
                .iter()
                .zip(&r.target)
                .map(|(a, b)| (a - b) * scale)
                .collect();
            let gx = r.stft.log_power_backward(len, spectra, &d);
            total.iter_mut().zip(&gx).for_each(|(a, b)| *a += b);
        }
        vec![Some(total)]
    }
}

/// Adds the loss to `g`: returns `(per_resolution [R], total scalar)`.
pub fn spectral_loss_node(
    g: &mut Graph,
    generated: Var,
    natural: Vec<f64>,
    configs: &[StftConfig],
) -> Result<(Var, Var), AutodiffError> {
    let parts = g.custom(&[generated], Box::new(SpectralLossOp::new(natural, configs)?))?;
    let total = g.sum(parts);
    Ok((parts, total))
}
