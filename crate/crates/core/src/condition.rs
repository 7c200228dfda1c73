//! Condition module: frame-rate features to sample-rate conditioning,
//! U/V reference trajectory, and the predicted cutoff trajectory.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, CustomOp, Graph, ParamId, ParamStore, Tensor, Var};
use crate::dsp::{moving_average, moving_average_adjoint, AcousticFeatures, FRAME_SHIFT};
use crate::nn::{BiLstm, Conv1d};
use crate::sinc::{FC_MAX, FC_MIN};

/// Reference cutoff for voiced samples (0.7 of Nyquist, 5.6 kHz at 16 kHz).
pub const VOICED_REF: f64 = 0.7;
pub const UNVOICED_REF: f64 = 0.3;
/// F0 enters the conditioning features divided by this many Hz.
pub const F0_CONDITION_SCALE: f64 = 400.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Sinc1,
    Sinc2,
    Sinc3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Sigmoid,
}

/// `fc = F(a v + b r + c)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionSpec {
    pub kind: FusionKind,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub activation: Activation,
}

impl FusionSpec {
    pub fn new(kind: FusionKind) -> Self {
        match kind {
            FusionKind::Sinc1 => Self {
                kind,
                a: 1.0,
                b: 0.2,
                c: 0.0,
                activation: Activation::Identity,
            },
            FusionKind::Sinc2 => Self {
                kind,
                a: 0.0,
                b: 0.5,
                c: 0.5,
                activation: Activation::Identity,
            },
            // Initial values of the trainable coefficients.
            FusionKind::Sinc3 => Self {
                kind,
                a: 1.0,
                b: 0.5,
                c: 0.0,
                activation: Activation::Sigmoid,
            },
        }
    }

    pub fn trainable(&self) -> bool {
        self.kind == FusionKind::Sinc3
    }

    /// Scalar evaluation before smoothing.
    pub fn apply(&self, v: f64, r: f64) -> f64 {
        let x = self.a * v + self.b * r + self.c;
        match self.activation {
            Activation::Identity => x,
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

/// Per-sample U/V reference: 0.7 where the frame is voiced (F0 > 0), else 0.3.
pub fn uv_trajectory(f0_frames: &[f64]) -> Vec<f64> {
    f0_frames
        .iter()
        .flat_map(|f| {
            let v = if *f > 0.0 { VOICED_REF } else { UNVOICED_REF };
            std::iter::repeat_n(v, FRAME_SHIFT)
        })
        .collect()
}

/// Repeats each column `factor` times along the time axis.
pub struct UpsampleOp {
    pub factor: usize,
}

impl CustomOp for UpsampleOp {
    fn name(&self) -> &'static str {
        "upsample_repeat"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError> {
        let x = inputs[0];
        let (c, b) = x.dims2().ok_or(AutodiffError::InvalidArgument {
            op: "upsample_repeat",
            msg: format!("expected rank 2, got {:?}", x.shape()),
        })?;
        let mut out = Vec::with_capacity(c * b * self.factor);
        for r in 0..c {
            out.extend(crate::dsp::upsample_repeat(x.row_slice(r), self.factor));
        }
        Tensor::new(vec![c, b * self.factor], out)
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let n = inputs[0].numel();
        let g = (0..n)
            .map(|i| grad[i * self.factor..(i + 1) * self.factor].iter().sum())
            .collect();
        vec![Some(g)]
    }
}

/// Centred moving average on a `[1, T]` signal.
pub struct SmoothOp {
    pub taps: usize,
}

impl CustomOp for SmoothOp {
    fn name(&self) -> &'static str {
        "moving_average"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError> {
        let x = inputs[0];
        Tensor::new(x.shape().to_vec(), moving_average(x.data(), self.taps))
    }

    fn backward(&self, _inputs: &[&Tensor], _out: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(moving_average_adjoint(grad, self.taps))]
    }
}

/// Elementwise clamp; the gradient passes only where the input was inside.
pub struct ClampOp {
    pub lo: f64,
    pub hi: f64,
}

impl CustomOp for ClampOp {
    fn name(&self) -> &'static str {
        "clamp"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError> {
        let x = inputs[0];
        let d = x.data().iter().map(|v| v.clamp(self.lo, self.hi)).collect();
        Tensor::new(x.shape().to_vec(), d)
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let g = inputs[0]
            .data()
            .iter()
            .zip(grad)
            .map(|(x, g)| if (self.lo..=self.hi).contains(x) { *g } else { 0.0 })
            .collect();
        vec![Some(g)]
    }
}

fn frame_inputs(g: &mut Graph, feats: &AcousticFeatures) -> Result<Var, AutodiffError> {
    let mel = Tensor::new(vec![feats.n_mels, feats.frames()], feats.mel_band_major())?;
    Ok(g.constant(mel))
}

fn upsample(g: &mut Graph, x: Var) -> Result<Var, AutodiffError> {
    g.custom(&[x], Box::new(UpsampleOp { factor: FRAME_SHIFT }))
}

/// Bi-LSTM and convolution over the mel frames, concatenated with the
/// scaled F0 and upsampled to the sample rate.
#[derive(Clone, Copy, Debug)]
pub struct ConditionNet {
    pub bilstm: BiLstm,
    pub conv: Conv1d,
    pub dim: usize,
}

impl ConditionNet {
    /// `dim` must be even; the Bi-LSTM emits `dim` channels and the
    /// convolution `dim - 1`, leaving one channel for F0.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        n_mels: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        if dim < 2 || !dim.is_multiple_of(2) {
            return Err(AutodiffError::InvalidArgument {
                op: "condition",
                msg: format!("condition dimension must be even and >= 2, got {dim}"),
            });
        }
        let bilstm = BiLstm::register(store, &format!("{prefix}.bilstm"), n_mels, dim / 2, rng)?;
        let conv = Conv1d::register(store, &format!("{prefix}.conv"), dim, dim - 1, 3, 1, rng)?;
        Ok(Self { bilstm, conv, dim })
    }

    /// `[dim, 80 B]` conditioning; the last channel carries F0 / 400.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        feats: &AcousticFeatures,
    ) -> Result<Var, AutodiffError> {
        let mel = frame_inputs(g, feats)?;
        let h = self.bilstm.forward(g, store, mel)?;
        let c = self.conv.forward(g, store, h)?;
        let f0: Vec<f64> = feats.f0.iter().map(|f| f / F0_CONDITION_SCALE).collect();
        let f0 = g.constant(Tensor::row(f0));
        let joined = g.concat(&[c, f0], 0)?;
        upsample(g, joined)
    }
}

/// Residual branch `r = tanh(conv(bilstm(mel)))`, upsampled.
#[derive(Clone, Copy, Debug)]
pub struct MvfBranch {
    pub bilstm: BiLstm,
    pub conv: Conv1d,
}

impl MvfBranch {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        n_mels: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let bilstm = BiLstm::register(store, &format!("{prefix}.bilstm"), n_mels, hidden, rng)?;
        let conv = Conv1d::register(store, &format!("{prefix}.conv"), 2 * hidden, 1, 3, 1, rng)?;
        Ok(Self { bilstm, conv })
    }

    /// `[1, 80 B]` residual in `(-1, 1)`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        feats: &AcousticFeatures,
    ) -> Result<Var, AutodiffError> {
        let mel = frame_inputs(g, feats)?;
        let h = self.bilstm.forward(g, store, mel)?;
        let c = self.conv.forward(g, store, h)?;
        let r = g.tanh(c);
        upsample(g, r)
    }
}

/// Cutoff trajectory before and after smoothing.
#[derive(Clone, Copy, Debug)]
pub struct FusedCutoff {
    /// `F(a v + b r + c)` before smoothing.
    pub raw: Var,
    /// Smoothed and clamped into `[FC_MIN, FC_MAX]`.
    pub fc: Var,
}

/// Fusion of the U/V reference and the residual; holds trainable
/// coefficients for the sigmoid variant.
#[derive(Clone, Copy, Debug)]
pub struct Fusion {
    pub spec: FusionSpec,
    pub coeffs: Option<[ParamId; 3]>,
    pub smoothing_taps: usize,
}

impl Fusion {
    pub fn register(store: &mut ParamStore, prefix: &str, spec: FusionSpec, smoothing_taps: usize) -> Result<Self, AutodiffError> {
        let coeffs = if spec.trainable() {
            Some([
                store.register(&format!("{prefix}.a"), Tensor::scalar(spec.a))?,
                store.register(&format!("{prefix}.b"), Tensor::scalar(spec.b))?,
                store.register(&format!("{prefix}.c"), Tensor::scalar(spec.c))?,
            ])
        } else {
            None
        };
        Ok(Self {
            spec,
            coeffs,
            smoothing_taps,
        })
    }

    /// Current coefficients, reading trainable ones from `store`.
    pub fn current_spec(&self, store: &ParamStore) -> FusionSpec {
        let mut spec = self.spec;
        if let Some([a, b, c]) = self.coeffs {
            spec.a = store.value(a).data()[0];
            spec.b = store.value(b).data()[0];
            spec.c = store.value(c).data()[0];
        }
        spec
    }

    /// `v` is the per-sample U/V reference, `r` the `[1, T]` residual.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        v: &[f64],
        r: Var,
    ) -> Result<FusedCutoff, AutodiffError> {
        if g.value(r).numel() != v.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "fuse_cutoff",
                lhs: vec![1, v.len()],
                rhs: g.shape(r).to_vec(),
            });
        }
        let pre = match self.coeffs {
            None => {
                let FusionSpec { a, b, c, .. } = self.spec;
                let br = g.scale(r, b);
                let shift = Tensor::row(v.iter().map(|x| a * x + c).collect());
                g.offset(br, &shift)?
            }
            Some([a, b, c]) => {
                let spec = self.current_spec(store);
                if ![spec.a, spec.b, spec.c].iter().all(|x| x.is_finite()) {
                    return Err(AutodiffError::InvalidArgument {
                        op: "fuse_cutoff",
                        msg: format!(
                            "non-finite fusion coefficients a={} b={} c={}",
                            spec.a, spec.b, spec.c
                        ),
                    });
                }
                let (a, b, c) = (g.param(store, a), g.param(store, b), g.param(store, c));
                let vv = g.constant(Tensor::row(v.to_vec()));
                let av = g.mul(vv, a)?;
                let br = g.mul(r, b)?;
                let s = g.add(av, br)?;
                g.add(s, c)?
            }
        };
        let raw = match self.spec.activation {
            Activation::Identity => pre,
            Activation::Sigmoid => g.sigmoid(pre),
        };
        let smoothed = g.custom(
            &[raw],
            Box::new(SmoothOp {
                taps: self.smoothing_taps,
            }),
        )?;
        let fc = g.custom(
            &[smoothed],
            Box::new(ClampOp {
                lo: FC_MIN,
                hi: FC_MAX,
            }),
        )?;
        Ok(FusedCutoff { raw, fc })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SMOOTHING_TAPS;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn feats(f0: Vec<f64>) -> AcousticFeatures {
        let n = f0.len();
        let mel = (0..n * 80).map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5).collect();
        AcousticFeatures::new(f0, mel, 80).unwrap()
    }

    fn zero_all(store: &mut ParamStore) {
        for p in store.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn uv_examples() {
        let v = uv_trajectory(&[200.0, 0.0]);
        assert_eq!(v.len(), 160);
        assert!(v[..80].iter().all(|x| *x == 0.7));
        assert!(v[80..].iter().all(|x| *x == 0.3));
        assert!(uv_trajectory(&[100.0; 3]).iter().all(|x| *x == 0.7));
        assert!(uv_trajectory(&[0.0; 3]).iter().all(|x| *x == 0.3));
    }

    #[test]
    fn table_rows() {
        assert_eq!(FusionSpec::new(FusionKind::Sinc1).apply(0.7, 0.0), 0.7);
        assert_eq!(FusionSpec::new(FusionKind::Sinc2).apply(0.7, 0.0), 0.5);
        assert_eq!(FusionSpec::new(FusionKind::Sinc2).apply(0.3, 0.0), 0.5);
    }

    #[test]
    fn condition_shape_and_zero_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let net = ConditionNet::register(&mut store, "cond", 80, 64, &mut rng).unwrap();
        let f = feats(vec![120.0, 0.0, 240.0]);
        let mut g = Graph::new();
        let c = net.forward(&mut g, &store, &f).unwrap();
        assert_eq!(g.shape(c), &[64, 240]);

        zero_all(&mut store);
        let mut g = Graph::new();
        let c = net.forward(&mut g, &store, &f).unwrap();
        let v = g.value(c);
        for ch in 0..63 {
            assert!(v.row_slice(ch).iter().all(|x| *x == 0.0), "channel {ch}");
        }
        let expected: Vec<f64> = crate::dsp::upsample_repeat(&f.f0, 80)
            .iter()
            .map(|x| x / F0_CONDITION_SCALE)
            .collect();
        assert_eq!(v.row_slice(63), expected.as_slice());
    }

    #[test]
    fn zero_residual_gives_smoothed_uv() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let branch = MvfBranch::register(&mut store, "mvf", 80, 32, &mut rng).unwrap();
        let fusion = Fusion::register(&mut store, "fusion", FusionSpec::new(FusionKind::Sinc1), SMOOTHING_TAPS).unwrap();
        zero_all(&mut store);
        let f = feats(vec![150.0, 150.0, 0.0, 0.0]);
        let v = uv_trajectory(&f.f0);
        let mut g = Graph::new();
        let r = branch.forward(&mut g, &store, &f).unwrap();
        assert!(g.value(r).data().iter().all(|x| *x == 0.0));
        let out = fusion.forward(&mut g, &store, &v, r).unwrap();
        let expected = moving_average(&v, SMOOTHING_TAPS);
        for (a, b) in g.value(out.fc).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn residual_strictly_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let branch = MvfBranch::register(&mut store, "mvf", 80, 32, &mut rng).unwrap();
        for p in store.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v *= 40.0);
        }
        let mut g = Graph::new();
        let r = branch.forward(&mut g, &store, &feats(vec![100.0; 6])).unwrap();
        assert!(g.value(r).data().iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn non_finite_coefficients_rejected() {
        let mut store = ParamStore::new();
        let fusion = Fusion::register(&mut store, "fusion", FusionSpec::new(FusionKind::Sinc3), SMOOTHING_TAPS).unwrap();
        store.set_value("fusion.b", Tensor::scalar(f64::NAN)).unwrap();
        let mut g = Graph::new();
        let r = g.constant(Tensor::row(vec![0.0; 80]));
        let err = fusion.forward(&mut g, &store, &[0.7; 80], r).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }
}
