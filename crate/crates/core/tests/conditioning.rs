use hnsf::autodiff::{Graph, ParamStore, Tensor, Var};
use hnsf::condition::{uv_trajectory, ConditionNet, FusionKind, FusionSpec, Fusion, MvfBranch};
use hnsf::dsp::AcousticFeatures;
use hnsf::gradcheck::param_gradient_error;
use hnsf::sinc::SincMergeOp;
use hnsf::source::{sine_harmonic_with_phase, HarmonicMerge, SourceConfig};
use hnsf::autodiff::AutodiffError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MELS: usize = 5;

fn features(f0: &[f64], seed: u64) -> AcousticFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mel = (0..f0.len() * MELS).map(|_| rng.random_range(-2.0..2.0)).collect();
    AcousticFeatures::new(f0.to_vec(), mel, MELS).unwrap()
}

fn row(len: usize, seed: u64, scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::row((0..len).map(|_| rng.random_range(-scale..scale)).collect())
}

/// `sum(y * w)` with a fixed random `w`.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.value(y).numel();
    let w = Tensor::new(g.shape(y).to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

struct Chain {
    store: ParamStore,
    branch: MvfBranch,
    fusion: Fusion,
    feats: AcousticFeatures,
    harmonic: Tensor,
    noise: Tensor,
}

fn chain(kind: FusionKind) -> Chain {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParamStore::new();
    let branch = MvfBranch::register(&mut store, "mvf", MELS, 3, &mut rng).unwrap();
    let fusion = Fusion::register(&mut store, "fusion", FusionSpec::new(kind), 81).unwrap();
    let feats = features(&[180.0, 0.0, 0.0, 120.0], 5);
    let t = feats.num_samples();
    Chain {
        store,
        branch,
        fusion,
        feats,
        harmonic: row(t, 8, 1.0),
        noise: row(t, 9, 1.0),
    }
}

/// Sum of squared merge output with the cutoff predicted from the features.
fn chain_loss(c: &Chain, g: &mut Graph, store: &ParamStore) -> Result<Var, AutodiffError> {
    let r = c.branch.forward(g, store, &c.feats)?;
    let fused = c.fusion.forward(g, store, &uv_trajectory(&c.feats.f0), r)?;
    let h = g.constant(c.harmonic.clone());
    let n = g.constant(c.noise.clone());
    let out = g.custom(&[h, n, fused.fc], Box::new(SincMergeOp { filter_len: 31 }))?;
    let sq = g.square(out);
    Ok(g.sum(sq))
}

#[test]
fn full_chain_gradient_through_predicted_cutoff() {
    for kind in [FusionKind::Sinc1, FusionKind::Sinc2, FusionKind::Sinc3] {
        let c = chain(kind);
        let err = param_gradient_error(&c.store, 1e-5, 6, |g, s| chain_loss(&c, g, s)).unwrap();
        assert!(err < 1e-3, "{kind:?}: {err}");
    }
}

#[test]
fn sigmoid_coefficients_receive_gradient() {
    let c = chain(FusionKind::Sinc3);
    let mut store = c.store.clone();
    let mut g = Graph::new();
    let loss = chain_loss(&c, &mut g, &store).unwrap();
    g.backward(loss).unwrap();
    g.accumulate_param_grads(&mut store);
    for name in ["fusion.a", "fusion.b", "fusion.c"] {
        let p = store.by_name(name).unwrap();
        assert!(p.grad[0].is_finite() && p.grad[0] != 0.0, "{name}");
    }
}

#[test]
fn fixed_fusions_register_no_coefficients() {
    for kind in [FusionKind::Sinc1, FusionKind::Sinc2] {
        let c = chain(kind);
        assert!(c.store.by_name("fusion.a").is_none());
    }
}

#[test]
fn condition_network_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let net = ConditionNet::register(&mut store, "cond", MELS, 4, &mut rng).unwrap();
    let feats = features(&[0.0, 210.0, 220.0, 0.0], 3);
    let err = param_gradient_error(&store, 1e-5, 12, |g, s| {
        let y = net.forward(g, s, &feats)?;
        project(g, y, 4)
    })
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn residual_branch_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let branch = MvfBranch::register(&mut store, "mvf", MELS, 3, &mut rng).unwrap();
    let feats = features(&[0.0, 110.0, 0.0, 95.0], 7);
    let err = param_gradient_error(&store, 1e-5, 12, |g, s| {
        let y = branch.forward(g, s, &feats)?;
        project(g, y, 8)
    })
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn harmonic_merge_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let merge = HarmonicMerge::register(&mut store, "merge", 8, &mut rng).unwrap();
    let harmonics: Vec<f64> = (0..8 * 50).map(|_| rng.random_range(-0.2..0.2)).collect();
    let harmonics = Tensor::new(vec![8, 50], harmonics).unwrap();
    let err = param_gradient_error(&store, 1e-5, 8, |g, s| {
        let x = g.constant(harmonics.clone());
        let e = merge.forward(g, s, x)?;
        let sq = g.square(e);
        Ok(g.sum(sq))
    })
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn sine_amplitude_without_noise() {
    let cfg = SourceConfig {
        sigma: 1e-12,
        ..SourceConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let e = sine_harmonic_with_phase(&vec![200.0; 1600], 1, 0.3, &cfg, &mut rng);
    let peak = e.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((peak - cfg.alpha).abs() < 1e-3 * cfg.alpha, "{peak}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sigmoid_cutoff_inside_unit_interval(
        a in -10.0f64..10.0,
        b in -10.0f64..10.0,
        c in -10.0f64..10.0,
        r in -1.0f64..1.0,
        voiced in any::<bool>(),
    ) {
        let spec = FusionSpec { a, b, c, ..FusionSpec::new(FusionKind::Sinc3) };
        let v = if voiced { 0.7 } else { 0.3 };
        let fc = spec.apply(v, r);
        prop_assert!(fc > 0.0 && fc < 1.0, "{fc}");
    }

    #[test]
    fn fixed_fusion_ranges(r in -0.999999f64..0.999999) {
        let spec = FusionSpec::new(FusionKind::Sinc1);
        let voiced = spec.apply(0.7, r);
        let unvoiced = spec.apply(0.3, r);
        prop_assert!(voiced > 0.5 && voiced < 0.9);
        prop_assert!(unvoiced > 0.1 && unvoiced < 0.5);
    }

    #[test]
    fn smoothing_stays_in_raw_hull(seed in 0u64..200) {
        let c = chain(FusionKind::Sinc1);
        let mut store = c.store.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in store.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-3.0..3.0));
        }
        let mut g = Graph::new();
        let r = c.branch.forward(&mut g, &store, &c.feats).unwrap();
        let fused = c.fusion.forward(&mut g, &store, &uv_trajectory(&c.feats.f0), r).unwrap();
        let raw = g.value(fused.raw).data();
        let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for v in g.value(fused.fc).data() {
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
    }

    #[test]
    fn merged_harmonics_strictly_bounded(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let merge = HarmonicMerge::register(&mut store, "merge", 8, &mut rng).unwrap();
        for p in store.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let x: Vec<f64> = (0..8 * 20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![8, 20], x).unwrap());
        let e = merge.forward(&mut g, &store, x).unwrap();
        prop_assert!(g.value(e).data().iter().all(|v| v.abs() < 1.0));
    }
}
