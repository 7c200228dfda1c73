//! Parameterised layers on channel-major `[channels, time]` sequences.
//!
//! Weights are initialised uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`;
//! LSTM forget-gate biases start at 1.

use rand::Rng;

use crate::autodiff::{AutodiffError, Graph, ParamId, ParamStore, Tensor, Var};

fn bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

/// Position-wise feedforward layer, `[in, T] -> [out, T]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let b = bound(inputs);
        Ok(Self {
            weight: store.register_uniform(&format!("{name}.w"), vec![outputs, inputs], b, rng)?,
            bias: store.register_uniform(&format!("{name}.b"), vec![outputs], b, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(w, x)?;
        g.add(y, b)
    }
}

/// Length-preserving dilated 1-D convolution.
#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub dilation: usize,
}

impl Conv1d {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let b = bound(inputs * kernel);
        Ok(Self {
            weight: store.register_uniform(
                &format!("{name}.w"),
                vec![outputs, inputs, kernel],
                b,
                rng,
            )?,
            bias: store.register_uniform(&format!("{name}.b"), vec![outputs], b, rng)?,
            dilation,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv1d(x, w, Some(b), self.dilation)
    }
}

/// Bidirectional LSTM, `[in, steps] -> [2 * hidden, steps]`.
#[derive(Clone, Copy, Debug)]
pub struct BiLstm {
    pub fwd: [ParamId; 3],
    pub bwd: [ParamId; 3],
    pub hidden: usize,
}

impl BiLstm {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let b = bound(hidden);
        let mut dir = |tag: &str, rng: &mut R| -> Result<[ParamId; 3], AutodiffError> {
            let w_ih = store.register_uniform(
                &format!("{name}.{tag}.w_ih"),
                vec![4 * hidden, inputs],
                b,
                rng,
            )?;
            let w_hh = store.register_uniform(
                &format!("{name}.{tag}.w_hh"),
                vec![4 * hidden, hidden],
                b,
                rng,
            )?;
            let mut bias = vec![0.0; 4 * hidden];
            bias[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
            let bias = store.register(&format!("{name}.{tag}.b"), Tensor::vector(bias))?;
            Ok([w_ih, w_hh, bias])
        };
        let fwd = dir("fwd", rng)?;
        let bwd = dir("bwd", rng)?;
        Ok(Self { fwd, bwd, hidden })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let f = self.fwd.map(|id| g.param(store, id));
        let b = self.bwd.map(|id| g.param(store, id));
        g.bilstm(x, f, b)
    }
}
