use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::{Waveform, SAMPLE_RATE};

use super::IoError;

const SCALE: f64 = 32768.0;

/// Reads a 16 kHz mono 16-bit PCM file, scaling samples by `1 / 32768`.
pub fn wav_read(path: &Path) -> Result<Waveform, IoError> {
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    let where_ = path.display();
    if spec.channels != 1 {
        return Err(IoError::UnsupportedWav(format!(
            "{where_}: expected mono, found {} channels",
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(IoError::UnsupportedWav(format!(
            "{where_}: expected sample rate {SAMPLE_RATE} Hz, found {} Hz",
            spec.sample_rate
        )));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(IoError::UnsupportedWav(format!(
            "{where_}: expected 16-bit integer PCM, found {}-bit {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / SCALE))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Waveform::new(samples)?)
}

/// Quantizes one sample after clipping to `[-1, 1]`.
pub fn quantize(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Writes 16 kHz mono 16-bit PCM.
pub fn wav_write(w: &Waveform, path: &Path) -> Result<(), IoError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for s in &w.samples {
        writer.write_sample(quantize(*s))?;
    }
    writer.finalize()?;
    Ok(())
}
