mod common;

use std::f64::consts::TAU;

use hnsf::autodiff::Graph;
use hnsf::dsp::{extract_features, AcousticFeatures, StftConfig, Waveform, LOG_FLOOR};
use hnsf::gradcheck::input_gradient_error;
use hnsf::io::{read_features, write_features};
use hnsf::model::{spectral_loss, spectral_loss_node, train, HnsfModel, ModelConfig, TrainConfig, Variant};
use hnsf::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn small_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        channels: 4,
        layers_per_block: 3,
        ..ModelConfig::tiny(variant)
    }
}

fn random_features(frames: usize, seed: u64) -> AcousticFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = (0..frames)
        .map(|b| if (b / 5) % 2 == 0 { rng.random_range(90.0..250.0) } else { 0.0 })
        .collect();
    let mel = (0..frames * 80).map(|_| rng.random_range(-8.0..0.0)).collect();
    AcousticFeatures::new(f0, mel, 80).unwrap()
}

fn noise(len: usize, std: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, std).unwrap();
    (0..len).map(|_| d.sample(&mut rng)).collect()
}

#[test]
fn sine_f0_is_tracked() {
    let samples = (0..16000).map(|t| 0.5 * (TAU * 200.0 * t as f64 / 16000.0).sin()).collect();
    let feats = extract_features(&Waveform::new(samples).unwrap());
    assert_eq!(feats.frames(), 200);
    for (b, f) in feats.f0.iter().enumerate().take(195).skip(5) {
        assert!((f - 200.0).abs() <= 2.0, "frame {b}: {f}");
    }
}

#[test]
fn white_noise_is_mostly_unvoiced() {
    let feats = extract_features(&Waveform::new(noise(16000, 0.1, 3)).unwrap());
    let unvoiced = feats.f0.iter().filter(|f| **f == 0.0).count();
    assert!(unvoiced as f64 >= 0.9 * feats.frames() as f64, "{unvoiced} of {}", feats.frames());
}

#[test]
fn silence_sits_at_the_floor() {
    let feats = extract_features(&Waveform::new(vec![0.0; 8000]).unwrap());
    assert!(feats.f0.iter().all(|f| *f == 0.0));
    let floor = LOG_FLOOR.ln();
    assert!(feats.mel.iter().all(|m| (m - floor).abs() < 1e-12));
}

#[test]
fn feature_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let feats = extract_features(&common::voiced_unvoiced_clip(4));
    let first = dir.path().join("a.f32");
    let second = dir.path().join("b.f32");
    write_features(&feats, &first).unwrap();
    let read = read_features(&first).unwrap();
    write_features(&read, &second).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    assert_eq!(read.frames(), feats.frames());
    for (a, b) in read.mel.iter().zip(&feats.mel) {
        assert_eq!(*a, *b as f32 as f64);
    }
}

#[test]
fn loss_grows_with_distortion() {
    let clean = noise(8000, 0.2, 1);
    let mut last = 0.0;
    for (i, std) in [1e-3, 1e-2, 1e-1].into_iter().enumerate() {
        let disturbed: Vec<f64> = clean.iter().zip(noise(8000, std, 9)).map(|(a, b)| a + b).collect();
        let loss = spectral_loss(&disturbed, &clean, &StftConfig::loss_defaults()).unwrap().total;
        assert!(loss > last, "std {std}: {loss} <= {last}");
        if i == 0 {
            assert!(loss > 0.0);
        }
        last = loss;
    }
}

#[test]
fn spectral_loss_gradient() {
    let x = Tensor::row(noise(512, 0.3, 5));
    let natural = noise(512, 0.3, 6);
    let configs = StftConfig::loss_defaults();
    let err = input_gradient_error(&x, 1e-6, |g, v| {
        let (_, total) = spectral_loss_node(g, v, natural.clone(), &configs)?;
        Ok(total)
    })
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn every_parameter_gets_a_finite_gradient() {
    let feats = random_features(30, 2);
    let natural = noise(feats.num_samples(), 0.1, 3);
    for variant in Variant::ALL {
        let mut model = HnsfModel::new(small_config(variant), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let exc = model.excitation(&feats, &mut rng);
        let mut g = Graph::new();
        let out = model.forward(&mut g, &feats, &exc).unwrap();
        let (_, total) = spectral_loss_node(&mut g, out.output, natural.clone(), &model.config().losses).unwrap();
        g.backward(total).unwrap();
        let store = model.store_mut();
        store.zero_grad();
        g.accumulate_param_grads(store);
        for p in store.iter() {
            assert!(p.grad_populated, "{variant}: {} detached", p.name);
            assert!(p.grad.iter().all(|v| v.is_finite()), "{variant}: {}", p.name);
        }
    }
}

#[test]
fn backward_is_deterministic_and_leaves_values() {
    let feats = random_features(20, 7);
    let natural = noise(feats.num_samples(), 0.1, 8);
    let model = HnsfModel::new(small_config(Variant::Sinc3), 3).unwrap();
    let before = model.store().clone();
    let run = |model: &HnsfModel| {
        let mut store = model.store().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let exc = model.excitation(&feats, &mut rng);
        let mut g = Graph::new();
        let out = model.forward(&mut g, &feats, &exc).unwrap();
        let (_, total) = spectral_loss_node(&mut g, out.output, natural.clone(), &model.config().losses).unwrap();
        g.backward(total).unwrap();
        g.accumulate_param_grads(&mut store);
        store.iter().map(|p| p.grad.clone()).collect::<Vec<_>>()
    };
    let first = run(&model);
    let second = run(&model);
    assert_eq!(first, second);
    for (a, b) in before.iter().zip(model.store().iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
}

#[test]
fn one_second_of_frames_gives_one_second_of_audio() {
    let feats = random_features(200, 5);
    let model = HnsfModel::new(small_config(Variant::Sinc1), 0).unwrap();
    let w = model.synthesize(&feats, 0).unwrap();
    assert_eq!(w.len(), 16000);
    assert!(w.samples.iter().all(|v| v.abs() <= 1.0));
    assert_eq!(w.samples, model.synthesize(&feats, 0).unwrap().samples);
}

#[test]
fn zero_step_run_writes_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let model = HnsfModel::new(small_config(Variant::Sinc2), 0).unwrap();
    let cfg = TrainConfig {
        steps: 0,
        segment_frames: 20,
        ..TrainConfig::default()
    };
    let outcome = train(model, vec![common::clip_utterance(0)], &cfg, dir.path()).unwrap();
    assert_eq!(outcome.curve.len(), 1);
    assert!(dir.path().join("step_000000.ckpt").exists());
    assert!(outcome.final_checkpoint.exists());
    let csv = std::fs::read_to_string(dir.path().join("loss_curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn seeded_runs_give_identical_curves() {
    let cfg = TrainConfig {
        steps: 2,
        segment_frames: 20,
        seed: 9,
        ..TrainConfig::default()
    };
    let curves: Vec<Vec<f64>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let model = HnsfModel::new(small_config(Variant::Sinc3), 0).unwrap();
            let outcome = train(model, vec![common::clip_utterance(1)], &cfg, dir.path()).unwrap();
            outcome.curve.iter().map(|r| r.report.total).collect()
        })
        .collect();
    assert_eq!(curves[0].len(), 3);
    assert_eq!(curves[0], curves[1]);
}
