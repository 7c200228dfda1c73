use rand::Rng;

use crate::autodiff::{AutodiffError, Graph, ParamStore, Var};
use crate::nn::{Conv1d, Linear};

use super::ModelConfig;

/// Neural filter block: an entry feedforward to `channels`, a stack of
/// dilated convolutions each followed by a residual add of its input and
/// the conditioning, an exit feedforward to one channel, and a skip from
/// the block input.
#[derive(Clone, Debug)]
pub struct FilterBlock {
    pub entry: Linear,
    pub convs: Vec<Conv1d>,
    pub exit: Linear,
}

impl FilterBlock {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let c = cfg.channels;
        let entry = Linear::register(store, &format!("{name}.entry"), 1, c, rng)?;
        let convs = (0..cfg.layers_per_block)
            .map(|k| {
                Conv1d::register(
                    store,
                    &format!("{name}.conv{k}"),
                    c,
                    c,
                    cfg.kernel,
                    ModelConfig::dilation(k),
                    rng,
                )
            })
            .collect::<Result<_, _>>()?;
        let exit = Linear::register(store, &format!("{name}.exit"), c, 1, rng)?;
        Ok(Self { entry, convs, exit })
    }

    /// `p` is `[1, T]`, `cond` is `[channels, T]`; returns `[1, T]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        p: Var,
        cond: Var,
    ) -> Result<Var, AutodiffError> {
        if g.shape(p)[1..] != g.shape(cond)[1..] {
            return Err(AutodiffError::ShapeMismatch {
                op: "filter_block",
                lhs: g.shape(p).to_vec(),
                rhs: g.shape(cond).to_vec(),
            });
        }
        let x = self.entry.forward(g, store, p)?;
        let mut h = g.tanh(x);
        for conv in &self.convs {
            let y = conv.forward(g, store, h)?;
            let y = g.tanh(y);
            let r = g.add(h, y)?;
            h = g.add(r, cond)?;
        }
        let out = self.exit.forward(g, store, h)?;
        g.add(out, p)
    }
}
