//! Time-variant windowed-sinc low/high-pass filters driven by a per-sample
//! normalized cutoff, the FIR merge of the harmonic and noise branches, and
//! the closed-form gradient of that merge with respect to the cutoff.
//!
//! Taps are designed on a centred index `n in -(M-1)/2 ..= (M-1)/2` and stored
//! causally at `m = n + (M-1)/2`. With `Hamm(n) = 0.54 + 0.46 cos(2 pi n / M)`:
//!
//! ```text
//! low~_n  = sin(pi fc n) / (pi n) * Hamm(n)            (fc at n = 0)
//! high~_n = (delta[n] - sin(pi fc n) / (pi n)) * Hamm(n)
//! low_m   = low~_n / sum_n low~_n                      (unit gain at DC)
//! high_m  = high~_n / sum_n (-1)^n high~_n             (unit gain at Nyquist)
//! ```
//!
//! Differentiating the normalisation gives, with `a_n = Hamm(n) cos(pi fc n)`,
//! `b = sum low~`, `c = sum a`, `b' = sum (-1)^n high~`, `c' = sum (-1)^n a`:
//!
//! ```text
//! d low_m  / d fc = (a_n - low_m c) / b
//! d high_m / d fc = (high_m c' - a_n) / b'
//! ```

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::autodiff::{AutodiffError, CustomOp, Tensor};

pub const DEFAULT_FILTER_LEN: usize = 31;
/// Cutoffs are clamped into `[FC_MIN, FC_MAX]` before design so that the
/// normalisers stay away from zero.
pub const FC_MIN: f64 = 1e-3;
pub const FC_MAX: f64 = 1.0 - 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("normalized cutoff {0} is outside (0, 1)")]
    CutoffOutOfRange(f64),
    #[error("filter length {0} must be odd")]
    EvenLength(usize),
    #[error("length mismatch: harmonic {harmonic}, noise {noise}, cutoff {cutoff}")]
    LengthMismatch {
        harmonic: usize,
        noise: usize,
        cutoff: usize,
    },
}

impl From<FilterError> for AutodiffError {
    fn from(e: FilterError) -> Self {
        AutodiffError::InvalidArgument {
            op: "sinc_merge",
            msg: e.to_string(),
        }
    }
}

/// Hamming window on the centred index, with `M` (not `M - 1`) in the denominator.
pub fn hamming(n: isize, len: usize) -> f64 {
    0.54 + 0.46 * (2.0 * PI * n as f64 / len as f64).cos()
}

fn check_design(fc: f64, len: usize) -> Result<(), FilterError> {
    if len.is_multiple_of(2) {
        return Err(FilterError::EvenLength(len));
    }
    if !(fc > 0.0 && fc < 1.0) {
        return Err(FilterError::CutoffOutOfRange(fc));
    }
    Ok(())
}

/// Unnormalised windowed-sinc low-pass, causal index order.
pub fn lowpass_prototype(fc: f64, len: usize) -> Result<Vec<f64>, FilterError> {
    check_design(fc, len)?;
    Ok(Design::new(fc, len).proto_low)
}

/// Unnormalised high-pass: unit impulse minus the low-pass prototype, windowed.
pub fn highpass_prototype(fc: f64, len: usize) -> Result<Vec<f64>, FilterError> {
    check_design(fc, len)?;
    Ok(Design::new(fc, len).proto_high)
}

/// Low-pass taps with unit DC gain.
pub fn design_lowpass(fc: f64, len: usize) -> Result<Vec<f64>, FilterError> {
    check_design(fc, len)?;
    Ok(Design::new(fc, len).low)
}

/// High-pass taps with unit gain magnitude at Nyquist.
pub fn design_highpass(fc: f64, len: usize) -> Result<Vec<f64>, FilterError> {
    check_design(fc, len)?;
    Ok(Design::new(fc, len).high)
}

/// Low- and high-pass taps at one cutoff plus their derivatives with respect
/// to the cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct SincTaps {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub d_low: Vec<f64>,
    pub d_high: Vec<f64>,
}

/// Designs both filters at `fc` together with their Jacobians.
pub fn design_with_jacobian(fc: f64, len: usize) -> Result<SincTaps, FilterError> {
    check_design(fc, len)?;
    let d = Design::new(fc, len);
    Ok(SincTaps {
        low: d.low,
        high: d.high,
        d_low: d.d_low,
        d_high: d.d_high,
    })
}

struct Design {
    proto_low: Vec<f64>,
    proto_high: Vec<f64>,
    low: Vec<f64>,
    high: Vec<f64>,
    d_low: Vec<f64>,
    d_high: Vec<f64>,
}

impl Design {
    fn new(fc: f64, len: usize) -> Self {
        Self::with_window(fc, &half_window(len))
    }

    /// `window[k]` is `Hamm(k)` for `k = 0..=(M-1)/2`. Taps are even in `n`,
    /// so only one half is evaluated, with `sin`/`cos(pi fc k)` advanced by
    /// rotation instead of one trig call per tap.
    fn with_window(fc: f64, window: &[f64]) -> Self {
        let half = window.len() - 1;
        let (s1, c1) = (PI * fc).sin_cos();
        let mut lp = vec![fc * window[0]; half + 1];
        let mut a = vec![window[0]; half + 1];
        let (mut s, mut c) = (s1, c1);
        for k in 1..=half {
            lp[k] = s / (PI * k as f64) * window[k];
            a[k] = window[k] * c;
            (s, c) = (s * c1 + c * s1, c * c1 - s * s1);
        }
        let hp = |k: usize| if k == 0 { window[0] - lp[0] } else { -lp[k] };
        let parity = |k: usize| if k.is_multiple_of(2) { 1.0 } else { -1.0 };
        let (mut beta_p, mut gamma_p, mut beta_a, mut gamma_a) = (lp[0], a[0], hp(0), a[0]);
        for k in 1..=half {
            beta_p += 2.0 * lp[k];
            gamma_p += 2.0 * a[k];
            beta_a += 2.0 * parity(k) * hp(k);
            gamma_a += 2.0 * parity(k) * a[k];
        }
        let causal = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..=2 * half).map(|i| f(i.abs_diff(half))).collect() };
        let proto_low = causal(&|k| lp[k]);
        let proto_high = causal(&|k| hp(k));
        let low = causal(&|k| lp[k] / beta_p);
        let high = causal(&|k| hp(k) / beta_a);
        let d_low = causal(&|k| (a[k] - lp[k] / beta_p * gamma_p) / beta_p);
        let d_high = causal(&|k| (hp(k) / beta_a * gamma_a - a[k]) / beta_a);
        Self {
            proto_low,
            proto_high,
            low,
            high,
            d_low,
            d_high,
        }
    }
}

fn half_window(len: usize) -> Vec<f64> {
    (0..=len / 2).map(|k| hamming(k as isize, len)).collect()
}

/// Clamps into the design range. NaN is passed through and rejected later.
fn clamp_fc(fc: f64) -> f64 {
    fc.clamp(FC_MIN, FC_MAX)
}

fn check_merge(harmonic: usize, noise: usize, cutoff: &[&[f64]], len: usize) -> Result<(), FilterError> {
    if len.is_multiple_of(2) {
        return Err(FilterError::EvenLength(len));
    }
    for c in cutoff {
        if harmonic != noise || c.len() != harmonic {
            return Err(FilterError::LengthMismatch {
                harmonic,
                noise,
                cutoff: c.len(),
            });
        }
        if let Some(bad) = c.iter().find(|v| !v.is_finite()) {
            return Err(FilterError::CutoffOutOfRange(*bad));
        }
    }
    Ok(())
}

/// Per-sample tap cache that only redesigns when the cutoff changes.
struct TapCache {
    window: Vec<f64>,
    fc: f64,
    taps: Option<SincTaps>,
}

impl TapCache {
    fn new(len: usize) -> Self {
        Self {
            window: half_window(len),
            fc: f64::NAN,
            taps: None,
        }
    }

    fn at(&mut self, fc: f64) -> &SincTaps {
        let fc = clamp_fc(fc);
        if self.taps.is_none() || fc != self.fc {
            let d = Design::with_window(fc, &self.window);
            self.taps = Some(SincTaps {
                low: d.low,
                high: d.high,
                d_low: d.d_low,
                d_high: d.d_high,
            });
            self.fc = fc;
        }
        self.taps.as_ref().expect("just designed")
    }
}

/// `sum_m x[t - m] h[m]` with zero history before the first sample.
#[inline]
fn causal_dot(x: &[f64], t: usize, taps: &[f64]) -> f64 {
    let span = taps.len().min(t + 1);
    (0..span).map(|m| x[t - m] * taps[m]).sum()
}

/// Time-variant merge with a shared cutoff per sample:
/// `o_t = sum_m harmonic[t-m] low_{t,m} + sum_m noise[t-m] high_{t,m}`.
/// The output is delayed by `(len - 1) / 2` samples relative to a
/// zero-phase filter.
pub fn merge_waveforms(
    harmonic: &[f64],
    noise: &[f64],
    fc: &[f64],
    len: usize,
) -> Result<Vec<f64>, FilterError> {
    merge_waveforms_split(harmonic, noise, fc, fc, len)
}

/// Time-variant merge where the low- and high-pass filters follow separate
/// cutoff trajectories.
pub fn merge_waveforms_split(
    harmonic: &[f64],
    noise: &[f64],
    fc_low: &[f64],
    fc_high: &[f64],
    len: usize,
) -> Result<Vec<f64>, FilterError> {
    check_merge(harmonic.len(), noise.len(), &[fc_low, fc_high], len)?;
    let mut low_cache = TapCache::new(len);
    let mut high_cache = TapCache::new(len);
    Ok((0..harmonic.len())
        .map(|t| {
            causal_dot(harmonic, t, &low_cache.at(fc_low[t]).low)
                + causal_dot(noise, t, &high_cache.at(fc_high[t]).high)
        })
        .collect())
}

/// Gradients of a merge with respect to its inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeGrads {
    pub harmonic: Vec<f64>,
    pub noise: Vec<f64>,
    pub fc_low: Vec<f64>,
    pub fc_high: Vec<f64>,
}

/// Full backward pass of [`merge_waveforms_split`]. Cutoff gradients are zero
/// where the cutoff was clamped.
pub fn merge_backward_split(
    grad_out: &[f64],
    harmonic: &[f64],
    noise: &[f64],
    fc_low: &[f64],
    fc_high: &[f64],
    len: usize,
) -> Result<MergeGrads, FilterError> {
    check_merge(harmonic.len(), noise.len(), &[fc_low, fc_high, grad_out], len)?;
    let n = harmonic.len();
    let mut grads = MergeGrads {
        harmonic: vec![0.0; n],
        noise: vec![0.0; n],
        fc_low: vec![0.0; n],
        fc_high: vec![0.0; n],
    };
    let mut low_cache = TapCache::new(len);
    let mut high_cache = TapCache::new(len);
    let inside = |v: f64| (FC_MIN..=FC_MAX).contains(&v);
    for t in 0..n {
        let g = grad_out[t];
        if g == 0.0 {
            continue;
        }
        let span = len.min(t + 1);
        let lt = low_cache.at(fc_low[t]);
        for m in 0..span {
            grads.harmonic[t - m] += g * lt.low[m];
        }
        if inside(fc_low[t]) {
            grads.fc_low[t] = g * causal_dot(harmonic, t, &lt.d_low);
        }
        let ht = high_cache.at(fc_high[t]);
        for m in 0..span {
            grads.noise[t - m] += g * ht.high[m];
        }
        if inside(fc_high[t]) {
            grads.fc_high[t] = g * causal_dot(noise, t, &ht.d_high);
        }
    }
    Ok(grads)
}

/// `dL/dfc_t = dL/do_t * sum_m (harmonic[t-m] dlow_{t,m}/dfc + noise[t-m] dhigh_{t,m}/dfc)`
/// for a shared cutoff.
pub fn backward_fc(
    grad_out: &[f64],
    harmonic: &[f64],
    noise: &[f64],
    fc: &[f64],
    len: usize,
) -> Result<Vec<f64>, FilterError> {
    let g = merge_backward_split(grad_out, harmonic, noise, fc, fc, len)?;
    Ok(g.fc_low.iter().zip(&g.fc_high).map(|(a, b)| a + b).collect())
}

/// Magnitude response `|sum_m h_m e^{-j pi f m}|` at normalized frequency
/// `f` (1 = Nyquist).
pub fn magnitude_at(taps: &[f64], f: f64) -> f64 {
    taps.iter()
        .enumerate()
        .map(|(m, h)| Complex64::from_polar(*h, -PI * f * m as f64))
        .sum::<Complex64>()
        .norm()
}

/// Magnitudes on the `n_fft / 2 + 1` one-sided bins of an `n_fft`-point DFT.
pub fn frequency_response(taps: &[f64], n_fft: usize) -> Vec<f64> {
    (0..=n_fft / 2)
        .map(|k| magnitude_at(taps, 2.0 * k as f64 / n_fft as f64))
        .collect()
}

fn signal(t: &Tensor) -> &[f64] {
    t.data()
}

/// Differentiable merge with a shared, trainable cutoff.
/// Inputs: harmonic `[1, T]`, noise `[1, T]`, cutoff `[1, T]`.
pub struct SincMergeOp {
    pub filter_len: usize,
}

impl CustomOp for SincMergeOp {
    fn name(&self) -> &'static str {
        "sinc_merge"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError> {
        let [h, n, fc] = inputs else {
            return Err(AutodiffError::InvalidArgument {
                op: "sinc_merge",
                msg: format!("expected 3 inputs, got {}", inputs.len()),
            });
        };
        let out = merge_waveforms(signal(h), signal(n), signal(fc), self.filter_len)?;
        Tensor::new(h.shape().to_vec(), out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (h, n, fc) = (signal(inputs[0]), signal(inputs[1]), signal(inputs[2]));
        let g = merge_backward_split(grad, h, n, fc, fc, self.filter_len)
            .expect("validated in forward");
        let dfc = g.fc_low.iter().zip(&g.fc_high).map(|(a, b)| a + b).collect();
        vec![Some(g.harmonic), Some(g.noise), Some(dfc)]
    }
}

/// Merge with fixed, externally supplied cutoff trajectories. Only the two
/// signals receive gradients.
pub struct SwitchedMergeOp {
    pub fc_low: Vec<f64>,
    pub fc_high: Vec<f64>,
    pub filter_len: usize,
}

impl CustomOp for SwitchedMergeOp {
    fn name(&self) -> &'static str {
        "switched_merge"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError> {
        let [h, n] = inputs else {
            return Err(AutodiffError::InvalidArgument {
                op: "switched_merge",
                msg: format!("expected 2 inputs, got {}", inputs.len()),
            });
        };
        let out = merge_waveforms_split(
            signal(h),
            signal(n),
            &self.fc_low,
            &self.fc_high,
            self.filter_len,
        )?;
        Tensor::new(h.shape().to_vec(), out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let g = merge_backward_split(
            grad,
            signal(inputs[0]),
            signal(inputs[1]),
            &self.fc_low,
            &self.fc_high,
            self.filter_len,
        )
        .expect("validated in forward");
        vec![Some(g.harmonic), Some(g.noise)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centre_tap_equals_cutoff() {
        for fc in [0.05, 0.3, 0.77] {
            let p = lowpass_prototype(fc, 31).unwrap();
            assert_eq!(p[15], fc);
        }
    }

    #[test]
    fn prototypes_sum_to_impulse() {
        for fc in [0.1, 0.5, 0.93] {
            let l = lowpass_prototype(fc, 31).unwrap();
            let h = highpass_prototype(fc, 31).unwrap();
            for (m, (a, b)) in l.iter().zip(&h).enumerate() {
                let expected = if m == 15 { 1.0 } else { 0.0 };
                assert!((a + b - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalised_gains() {
        for fc in [0.05, 0.3, 0.95] {
            let l = design_lowpass(fc, 31).unwrap();
            let h = design_highpass(fc, 31).unwrap();
            assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            let ny: f64 = h
                .iter()
                .enumerate()
                .map(|(m, v)| if m % 2 == 0 { *v } else { -*v })
                .sum();
            assert!((ny.abs() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert_eq!(design_lowpass(0.0, 31), Err(FilterError::CutoffOutOfRange(0.0)));
        assert_eq!(design_highpass(1.0, 31), Err(FilterError::CutoffOutOfRange(1.0)));
        assert_eq!(design_lowpass(0.5, 30), Err(FilterError::EvenLength(30)));
        assert!(matches!(
            merge_waveforms(&[0.0; 3], &[0.0; 2], &[0.5; 3], 31),
            Err(FilterError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn impulse_reproduces_lowpass_taps() {
        let mut h = vec![0.0; 80];
        h[10] = 1.0;
        let out = merge_waveforms(&h, &[0.0; 80], &[0.4; 80], 31).unwrap();
        let taps = design_lowpass(0.4, 31).unwrap();
        for t in 0..80 {
            let expected = if (10..41).contains(&t) { taps[t - 10] } else { 0.0 };
            assert_eq!(out[t], expected);
        }
    }

    #[test]
    fn silent_inputs_give_silence_and_zero_gradient() {
        let z = vec![0.0; 64];
        let fc: Vec<f64> = (0..64).map(|t| 0.2 + 0.01 * t as f64).collect();
        assert!(merge_waveforms(&z, &z, &fc, 31).unwrap().iter().all(|v| *v == 0.0));
        let g = backward_fc(&vec![1.0; 64], &z, &z, &fc, 31).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn jacobian_sums_vanish() {
        for fc in [0.1, 0.5, 0.9] {
            let t = design_with_jacobian(fc, 31).unwrap();
            assert!(t.d_low.iter().sum::<f64>().abs() < 1e-12);
            let parity: f64 = t
                .d_high
                .iter()
                .enumerate()
                .map(|(m, v)| if m % 2 == 0 { *v } else { -*v })
                .sum();
            assert!(parity.abs() < 1e-12);
        }
    }
}
