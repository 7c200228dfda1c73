use std::path::Path;

use serde::Serialize;

use crate::dsp::{AcousticFeatures, FRAME_SHIFT, SAMPLE_RATE};
use crate::model::{CutoffTrajectory, LossRow};
use crate::sinc::{design_highpass, design_lowpass, frequency_response};

use super::IoError;

/// `step,L1,...,Ln,total`.
pub fn write_loss_curve(path: &Path, rows: &[LossRow]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path)?;
    let n = rows.first().map_or(3, |r| r.report.per_resolution.len());
    let mut header = vec!["step".to_string()];
    header.extend((1..=n).map(|i| format!("L{i}")));
    header.push("total".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.step.to_string()];
        rec.extend(r.report.per_resolution.iter().map(|v| v.to_string()));
        rec.push(r.report.total.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-frame cutoff summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MvfRow {
    pub frame: usize,
    pub time_ms: f64,
    pub f0: f64,
    pub voiced: bool,
    /// Mean normalized low-pass cutoff over the frame's samples.
    pub fc: f64,
    pub mvf_hz: f64,
}

pub fn mvf_rows(feats: &AcousticFeatures, traj: &CutoffTrajectory) -> Vec<MvfRow> {
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    traj.low
        .chunks(FRAME_SHIFT)
        .enumerate()
        .map(|(b, chunk)| {
            let fc = chunk.iter().sum::<f64>() / chunk.len() as f64;
            MvfRow {
                frame: b,
                time_ms: b as f64 * feats.frame_shift_ms,
                f0: feats.f0[b],
                voiced: feats.is_voiced(b),
                fc,
                mvf_hz: fc * nyquist,
            }
        })
        .collect()
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Magnitude response of the normalized filter pair at one cutoff.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResponseRow {
    pub bin: usize,
    /// Frequency normalized to Nyquist.
    pub freq: f64,
    pub freq_hz: f64,
    pub low_mag: f64,
    pub high_mag: f64,
    pub low_db: f64,
    pub high_db: f64,
}

/// `n_fft / 2 + 1` rows for the low- and high-pass filters at `fc`.
pub fn response_rows(fc: f64, len: usize, n_fft: usize) -> Result<Vec<ResponseRow>, IoError> {
    let low = frequency_response(&design_lowpass(fc, len)?, n_fft);
    let high = frequency_response(&design_highpass(fc, len)?, n_fft);
    let db = |m: f64| 20.0 * m.max(1e-12).log10();
    Ok(low
        .iter()
        .zip(&high)
        .enumerate()
        .map(|(k, (l, h))| {
            let freq = 2.0 * k as f64 / n_fft as f64;
            ResponseRow {
                bin: k,
                freq,
                freq_hz: freq * SAMPLE_RATE as f64 / 2.0,
                low_mag: *l,
                high_mag: *h,
                low_db: db(*l),
                high_db: db(*h),
            }
        })
        .collect())
}
