/// Normalized-autocorrelation F0 estimator settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PitchConfig {
    pub window_ms: f64,
    pub fmin: f64,
    pub fmax: f64,
    /// Minimum peak correlation for a frame to be voiced.
    pub voicing_threshold: f64,
    /// Candidate peaks within this fraction of the best peak are considered;
    /// the shortest lag among them wins, which avoids octave-down errors.
    pub peak_tolerance: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            window_ms: 25.0,
            fmin: 60.0,
            fmax: 500.0,
            voicing_threshold: 0.45,
            peak_tolerance: 0.9,
        }
    }
}

/// Per-frame F0 in Hz, 0 for unvoiced. Frame `b` is centred on the middle
/// of the `b`-th hop of `frame_shift` samples.
pub fn estimate_f0(
    samples: &[f64],
    sample_rate: f64,
    frame_shift: usize,
    frames: usize,
    cfg: &PitchConfig,
) -> Vec<f64> {
    let window = (cfg.window_ms * sample_rate / 1000.0).round() as usize;
    let min_lag = (sample_rate / cfg.fmax).floor().max(2.0) as usize;
    let max_lag = (sample_rate / cfg.fmin).ceil() as usize;
    let at = |i: isize| -> f64 {
        if i < 0 {
            0.0
        } else {
            samples.get(i as usize).copied().unwrap_or(0.0)
        }
    };
    let mut f0 = Vec::with_capacity(frames);
    let mut corr = vec![0.0; max_lag + 2];
    for b in 0..frames {
        let center = (b * frame_shift + frame_shift / 2) as isize;
        let start = center - (window / 2) as isize;
        let seg: Vec<f64> = (0..window + max_lag + 1)
            .map(|n| at(start + n as isize))
            .collect();
        let e0: f64 = seg[..window].iter().map(|v| v * v).sum();
        if e0 < 1e-10 * window as f64 {
            f0.push(0.0);
            continue;
        }
        for lag in min_lag - 1..=max_lag + 1 {
            let a = &seg[..window];
            let b = &seg[lag..lag + window];
            let num: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let el: f64 = b.iter().map(|v| v * v).sum();
            corr[lag] = if el > 0.0 { num / (e0 * el).sqrt() } else { 0.0 };
        }
        let best = (min_lag..=max_lag)
            .map(|l| corr[l])
            .fold(f64::NEG_INFINITY, f64::max);
        if best < cfg.voicing_threshold {
            f0.push(0.0);
            continue;
        }
        let lag = (min_lag..=max_lag)
            .find(|&l| {
                corr[l] >= cfg.peak_tolerance * best
                    && corr[l] >= corr[l - 1]
                    && corr[l] >= corr[l + 1]
            })
            .unwrap_or(min_lag);
        let (l, c, r) = (corr[lag - 1], corr[lag], corr[lag + 1]);
        let denom = l - 2.0 * c + r;
        let delta = if denom.abs() > 1e-12 {
            (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        f0.push(sample_rate / (lag as f64 + delta));
    }
    f0
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(f: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| 0.5 * (2.0 * PI * f * i as f64 / 16000.0).sin()).collect()
    }

    #[test]
    fn tracks_non_integer_period() {
        let x = tone(137.0, 8000);
        let f0 = estimate_f0(&x, 16000.0, 80, 100, &PitchConfig::default());
        for v in &f0[5..95] {
            assert!((v - 137.0).abs() < 1.5, "{v}");
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let f0 = estimate_f0(&vec![0.0; 1600], 16000.0, 80, 20, &PitchConfig::default());
        assert!(f0.iter().all(|v| *v == 0.0));
    }
}
