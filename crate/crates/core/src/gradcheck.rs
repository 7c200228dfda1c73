//! Finite-difference gradient checks.
//!
//! Errors are reported relative to the largest numeric derivative of the
//! quantity under test: `max_i |a_i - n_i| / max_i |n_i|`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{AutodiffError, CustomOp, Graph, ParamStore, Tensor, Var};
use crate::condition::{ClampOp, Fusion, FusionKind, FusionSpec, SmoothOp, UpsampleOp};
use crate::dsp::StftConfig;
use crate::model::{spectral_loss_node, FilterBlock, ModelConfig, Variant};
use crate::nn::{BiLstm, Conv1d};
use crate::sinc::{
    design_highpass, design_lowpass, design_with_jacobian, merge_backward_split, merge_waveforms,
    FilterError,
};

/// Central difference `(f(x + e) - f(x - e)) / 2e` for every coordinate.
pub fn numeric_grad<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub threshold: f64,
}

impl GradcheckReport {
    pub fn new(name: impl Into<String>, max_rel_error: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            max_rel_error,
            threshold,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < self.threshold
    }
}

/// Analytic tap derivatives against central differences of the designed
/// taps. Returns the worse of the low- and high-pass errors.
pub fn sinc_tap_error(fc: f64, len: usize, eps: f64) -> Result<f64, FilterError> {
    let taps = design_with_jacobian(fc, len)?;
    let (lo_up, lo_dn) = (design_lowpass(fc + eps, len)?, design_lowpass(fc - eps, len)?);
    let (hi_up, hi_dn) = (design_highpass(fc + eps, len)?, design_highpass(fc - eps, len)?);
    let fd = |up: &[f64], dn: &[f64]| -> Vec<f64> {
        up.iter().zip(dn).map(|(a, b)| (a - b) / (2.0 * eps)).collect()
    };
    Ok(max_relative_error(&taps.d_low, &fd(&lo_up, &lo_dn))
        .max(max_relative_error(&taps.d_high, &fd(&hi_up, &hi_dn))))
}

/// Errors of the merge backward pass for `L = sum_t w_t o_t` on random
/// signals: `(cutoff, harmonic, noise)`. Signal gradients are probed at
/// `signal_probes` random positions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MergeErrors {
    pub cutoff: f64,
    pub harmonic: f64,
    pub noise: f64,
}

impl MergeErrors {
    pub fn max(&self) -> f64 {
        self.cutoff.max(self.harmonic).max(self.noise)
    }
}

pub fn merge_chain_error(
    len: usize,
    filter_len: usize,
    eps: f64,
    signal_probes: usize,
    seed: u64,
) -> Result<MergeErrors, FilterError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |lo: f64, hi: f64| -> Vec<f64> { (0..len).map(|_| rng.random_range(lo..hi)).collect() };
    let h = draw(-1.0, 1.0);
    let n = draw(-1.0, 1.0);
    let fc = draw(0.05, 0.95);
    let w = draw(-1.0, 1.0);
    let objective = |h: &[f64], n: &[f64], fc: &[f64]| -> f64 {
        merge_waveforms(h, n, fc, filter_len)
            .expect("valid merge")
            .iter()
            .zip(&w)
            .map(|(o, w)| o * w)
            .sum()
    };
    let g = merge_backward_split(&w, &h, &n, &fc, &fc, filter_len)?;
    let d_fc: Vec<f64> = g.fc_low.iter().zip(&g.fc_high).map(|(a, b)| a + b).collect();
    let cutoff = max_relative_error(&d_fc, &numeric_grad(|x| objective(&h, &n, x), &fc, eps));

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let probes: Vec<usize> = (0..signal_probes.min(len)).map(|_| rng.random_range(0..len)).collect();
    let probe = |analytic: &[f64], f: &dyn Fn(&[f64]) -> f64, x: &[f64]| -> f64 {
        let mut a = Vec::new();
        let mut num = Vec::new();
        let mut xp = x.to_vec();
        for &i in &probes {
            xp[i] = x[i] + eps;
            let up = f(&xp);
            xp[i] = x[i] - eps;
            let dn = f(&xp);
            xp[i] = x[i];
            a.push(analytic[i]);
            num.push((up - dn) / (2.0 * eps));
        }
        max_relative_error(&a, &num)
    };
    let harmonic = probe(&g.harmonic, &|x| objective(x, &n, &fc), &h);
    let noise = probe(&g.noise, &|x| objective(&h, x, &fc), &n);
    Ok(MergeErrors {
        cutoff,
        harmonic,
        noise,
    })
}

/// Checks the gradient of a scalar graph output with respect to one input.
pub fn input_gradient_error<F>(x: &Tensor, eps: f64, build: F) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, AutodiffError>,
{
    let eval = |data: &[f64]| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let v = g.input(Tensor::new(x.shape().to_vec(), data.to_vec())?);
        let y = build(&mut g, v)?;
        Ok(g.value(y).data()[0])
    };
    let mut g = Graph::new();
    let v = g.input(x.clone());
    let y = build(&mut g, v)?;
    g.backward(y)?;
    let analytic = g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]);
    let mut failure = None;
    let numeric = numeric_grad(
        |d| {
            eval(d).unwrap_or_else(|e| {
                failure = Some(e);
                f64::NAN
            })
        },
        x.data(),
        eps,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(max_relative_error(&analytic, &numeric))
}

/// Checks the gradients of every parameter in `store` (at most
/// `max_per_param` coordinates each).
pub fn param_gradient_error<F>(
    store: &ParamStore,
    eps: f64,
    max_per_param: usize,
    build: F,
) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, AutodiffError>,
{
    let mut work = store.clone();
    let mut g = Graph::new();
    let y = build(&mut g, &work)?;
    g.backward(y)?;
    work.zero_grad();
    g.accumulate_param_grads(&mut work);

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let names: Vec<String> = work.iter().map(|p| p.name.clone()).collect();
    for name in names {
        let id = work.id(&name).expect("registered");
        let count = work.get(id).value.numel();
        let step = count.div_ceil(max_per_param.max(1)).max(1);
        for i in (0..count).step_by(step) {
            analytic.push(work.get(id).grad[i]);
            let orig = work.get(id).value.data()[i];
            let mut eval = |v: f64| -> Result<f64, AutodiffError> {
                work.get_mut(id).value.data_mut()[i] = v;
                let mut g = Graph::new();
                let y = build(&mut g, &work)?;
                Ok(g.value(y).data()[0])
            };
            let up = eval(orig + eps)?;
            let dn = eval(orig - eps)?;
            eval(orig)?;
            numeric.push((up - dn) / (2.0 * eps));
        }
    }
    Ok(max_relative_error(&analytic, &numeric))
}

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape, data).expect("consistent shape")
}

/// `sum(x * w)` for a fixed random `w`, turning any output into a scalar
/// with a non-trivial upstream gradient.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_tensor(g.shape(y).to_vec(), &mut rng, 1.0);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn custom_error(op: impl Fn() -> Box<dyn CustomOp>, x: Tensor, eps: f64) -> Result<f64, AutodiffError> {
    input_gradient_error(&x, eps, |g, v| {
        let y = g.custom(&[v], op())?;
        project(g, y, 7)
    })
}

/// Settings of the full check suite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SuiteConfig {
    pub filter_len: usize,
    /// Cutoff of the tap-Jacobian check.
    pub fc: f64,
    pub eps: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            filter_len: 31,
            fc: 0.3,
            eps: 1e-4,
        }
    }
}

/// Runs the filter checks and a set of layer checks.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<GradcheckReport>, AutodiffError> {
    let mut out = Vec::new();
    let tap = sinc_tap_error(cfg.fc, cfg.filter_len, cfg.eps)?;
    out.push(GradcheckReport::new(format!("sinc taps fc={}", cfg.fc), tap, 1e-4));
    let merge = merge_chain_error(1000, cfg.filter_len, cfg.eps, 64, 11)?;
    out.push(GradcheckReport::new("merge cutoff", merge.cutoff, 1e-3));
    out.push(GradcheckReport::new("merge harmonic", merge.harmonic, 1e-3));
    out.push(GradcheckReport::new("merge noise", merge.noise, 1e-3));

    let layer_eps = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let x = random_tensor(vec![3, 40], &mut rng, 1.0);
    let mut store = ParamStore::new();
    let conv = Conv1d::register(&mut store, "conv", 3, 4, 3, 4, &mut rng)?;
    let e = param_gradient_error(&store, layer_eps, 16, |g, s| {
        let v = g.constant(x.clone());
        let y = conv.forward(g, s, v)?;
        let y = g.tanh(y);
        project(g, y, 1)
    })?;
    out.push(GradcheckReport::new("dilated conv params", e, 1e-5));
    let e = input_gradient_error(&x, layer_eps, |g, v| {
        let y = conv.forward(g, &store, v)?;
        project(g, y, 1)
    })?;
    out.push(GradcheckReport::new("dilated conv input", e, 1e-5));

    let mut store = ParamStore::new();
    let lstm = BiLstm::register(&mut store, "lstm", 3, 4, &mut rng)?;
    let x = random_tensor(vec![3, 9], &mut rng, 1.0);
    let e = param_gradient_error(&store, layer_eps, 12, |g, s| {
        let v = g.constant(x.clone());
        let y = lstm.forward(g, s, v)?;
        project(g, y, 2)
    })?;
    out.push(GradcheckReport::new("bi-lstm params", e, 1e-5));
    let e = input_gradient_error(&x, layer_eps, |g, v| {
        let y = lstm.forward(g, &store, v)?;
        project(g, y, 2)
    })?;
    out.push(GradcheckReport::new("bi-lstm input", e, 1e-5));

    let mut mcfg = ModelConfig::tiny(Variant::Sinc1);
    mcfg.channels = 4;
    let mut store = ParamStore::new();
    let block = FilterBlock::register(&mut store, "blk", &mcfg, &mut rng)?;
    let p = random_tensor(vec![1, 64], &mut rng, 0.5);
    let cond = random_tensor(vec![4, 64], &mut rng, 0.1);
    let e = param_gradient_error(&store, layer_eps, 8, |g, s| {
        let pv = g.constant(p.clone());
        let cv = g.constant(cond.clone());
        let y = block.forward(g, s, pv, cv)?;
        project(g, y, 3)
    })?;
    out.push(GradcheckReport::new("filter block params", e, 1e-5));
    let e = input_gradient_error(&p, layer_eps, |g, v| {
        let cv = g.constant(cond.clone());
        let y = block.forward(g, &store, v, cv)?;
        project(g, y, 3)
    })?;
    out.push(GradcheckReport::new("filter block input", e, 1e-5));

    let natural = random_tensor(vec![1, 512], &mut rng, 0.5).into_data();
    let gen = random_tensor(vec![1, 512], &mut rng, 0.5);
    let losses = StftConfig::loss_defaults();
    let e = input_gradient_error(&gen, layer_eps, |g, v| {
        let (_, total) = spectral_loss_node(g, v, natural.clone(), &losses)?;
        Ok(total)
    })?;
    out.push(GradcheckReport::new("spectral loss", e, 1e-4));

    let e = custom_error(|| Box::new(UpsampleOp { factor: 5 }), random_tensor(vec![2, 6], &mut rng, 1.0), layer_eps)?;
    out.push(GradcheckReport::new("upsample", e, 1e-6));
    let e = custom_error(|| Box::new(SmoothOp { taps: 9 }), random_tensor(vec![1, 30], &mut rng, 1.0), layer_eps)?;
    out.push(GradcheckReport::new("moving average", e, 1e-6));
    let e = custom_error(
        || Box::new(ClampOp { lo: -0.5, hi: 0.5 }),
        random_tensor(vec![1, 30], &mut rng, 1.0),
        layer_eps,
    )?;
    out.push(GradcheckReport::new("clamp", e, 1e-6));

    let mut store = ParamStore::new();
    let fusion = Fusion::register(&mut store, "fusion", FusionSpec::new(FusionKind::Sinc3), 9)?;
    let v: Vec<f64> = (0..40).map(|t| if t < 20 { 0.7 } else { 0.3 }).collect();
    let r = random_tensor(vec![1, 40], &mut rng, 0.9);
    let e = param_gradient_error(&store, layer_eps, 1, |g, s| {
        let rv = g.constant(r.clone());
        let out = fusion.forward(g, s, &v, rv)?;
        project(g, out.fc, 4)
    })?;
    out.push(GradcheckReport::new("sigmoid fusion coefficients", e, 1e-6));
    Ok(out)
}
