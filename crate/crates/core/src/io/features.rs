use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::{AcousticFeatures, FRAME_SHIFT_MS};

use super::IoError;

/// JSON sidecar describing a feature payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub frames: usize,
    pub f0_dim: usize,
    pub mel_dim: usize,
    pub frame_shift_ms: f64,
}

impl FeatureHeader {
    pub fn frame_width(&self) -> usize {
        self.f0_dim + self.mel_dim
    }
}

/// Sidecar path: the payload path with `.json` appended.
pub fn sidecar_path(payload: &Path) -> PathBuf {
    let mut s = payload.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes little-endian `f32` frames (F0 then mel) and the JSON sidecar.
pub fn write_features(feats: &AcousticFeatures, path: &Path) -> Result<(), IoError> {
    let header = FeatureHeader {
        frames: feats.frames(),
        f0_dim: 1,
        mel_dim: feats.n_mels,
        frame_shift_ms: feats.frame_shift_ms,
    };
    let mut bytes = Vec::with_capacity(header.frames * header.frame_width() * 4);
    for b in 0..feats.frames() {
        let frame = std::iter::once(&feats.f0[b]).chain(feats.mel_frame(b));
        for v in frame {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

/// Reads a payload and its sidecar; values are widened to `f64`.
pub fn read_features(path: &Path) -> Result<AcousticFeatures, IoError> {
    let header: FeatureHeader = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    if header.f0_dim != 1 {
        return Err(IoError::Features(format!("f0_dim must be 1, found {}", header.f0_dim)));
    }
    if (header.frame_shift_ms - FRAME_SHIFT_MS).abs() > 1e-9 {
        return Err(IoError::Features(format!(
            "frame shift must be {FRAME_SHIFT_MS} ms, found {}",
            header.frame_shift_ms
        )));
    }
    let bytes = std::fs::read(path)?;
    let width = header.frame_width();
    let expected = header.frames * width * 4;
    if bytes.len() != expected {
        return Err(IoError::Features(format!(
            "{}: payload has {} bytes, header implies {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut f0 = Vec::with_capacity(header.frames);
    let mut mel = Vec::with_capacity(header.frames * header.mel_dim);
    for frame in values.chunks_exact(width) {
        f0.push(frame[0]);
        mel.extend_from_slice(&frame[1..]);
    }
    Ok(AcousticFeatures::new(f0, mel, header.mel_dim)?)
}
