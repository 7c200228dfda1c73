#![allow(dead_code)]

use std::f64::consts::TAU;

use hnsf::dsp::{extract_features, Waveform};
use hnsf::model::Utterance;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const VOICED_F0: f64 = 150.0;

/// One second at 16 kHz: a 150 Hz harmonic tone for the first half,
/// white noise for the second.
pub fn voiced_unvoiced_clip(seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let small = Normal::new(0.0, 0.005).unwrap();
    let loud = Normal::new(0.0, 0.08).unwrap();
    let samples = (0..16000)
        .map(|t| {
            let time = t as f64 / 16000.0;
            if t < 8000 {
                let tone: f64 = (1..=40)
                    .filter(|k| *k as f64 * VOICED_F0 < 7800.0)
                    .map(|k| 0.25 / k as f64 * (TAU * VOICED_F0 * k as f64 * time).sin())
                    .sum();
                tone + small.sample(&mut rng)
            } else {
                loud.sample(&mut rng)
            }
        })
        .collect();
    Waveform::new(samples).unwrap()
}

pub fn clip_utterance(seed: u64) -> Utterance {
    let w = voiced_unvoiced_clip(seed);
    Utterance::new(extract_features(&w), w.samples)
}
