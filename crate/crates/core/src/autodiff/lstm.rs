//! Fused unidirectional LSTM recurrences used by the bidirectional layer.
//!
//! Gate layout inside every `4H` block is `[input, forget, cell, output]`.

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations kept from the forward pass, indexed by time step (not by
/// processing order).
#[derive(Clone, Debug)]
pub(crate) struct DirCache {
    pub hidden_size: usize,
    pub reverse: bool,
    /// `[B, 4H]` post-activation gates.
    pub gates: Vec<f64>,
    /// `[B, H]` cell states.
    pub cells: Vec<f64>,
    /// `[B, H]` hidden states.
    pub hidden: Vec<f64>,
}

impl DirCache {
    fn order(&self, steps: usize) -> Vec<usize> {
        if self.reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        }
    }

    fn previous(&self, t: usize, steps: usize) -> Option<usize> {
        if self.reverse {
            (t + 1 < steps).then_some(t + 1)
        } else {
            t.checked_sub(1)
        }
    }
}

pub(crate) struct DirGrads {
    pub dx: Vec<f64>,
    pub dw_ih: Vec<f64>,
    pub dw_hh: Vec<f64>,
    pub db: Vec<f64>,
}

/// `xt` is the input transposed to `[B, D]`.
pub(crate) fn forward(
    xt: &[f64],
    steps: usize,
    input_size: usize,
    w_ih: &[f64],
    w_hh: &[f64],
    bias: &[f64],
    hidden_size: usize,
    reverse: bool,
) -> DirCache {
    let h4 = 4 * hidden_size;
    let mut cache = DirCache {
        hidden_size,
        reverse,
        gates: vec![0.0; steps * h4],
        cells: vec![0.0; steps * hidden_size],
        hidden: vec![0.0; steps * hidden_size],
    };
    let mut z = vec![0.0; h4];
    for t in cache.order(steps) {
        let prev = cache.previous(t, steps);
        let x = &xt[t * input_size..(t + 1) * input_size];
        for (r, zr) in z.iter_mut().enumerate() {
            let wi = &w_ih[r * input_size..(r + 1) * input_size];
            let mut acc = bias[r];
            for (w, xv) in wi.iter().zip(x) {
                acc += w * xv;
            }
            if let Some(p) = prev {
                let hp = &cache.hidden[p * hidden_size..(p + 1) * hidden_size];
                let wh = &w_hh[r * hidden_size..(r + 1) * hidden_size];
                for (w, hv) in wh.iter().zip(hp) {
                    acc += w * hv;
                }
            }
            *zr = acc;
        }
        let h = hidden_size;
        for j in 0..h {
            let i = sigmoid(z[j]);
            let f = sigmoid(z[h + j]);
            let g = z[2 * h + j].tanh();
            let o = sigmoid(z[3 * h + j]);
            let c_prev = prev.map_or(0.0, |p| cache.cells[p * h + j]);
            let c = f * c_prev + i * g;
            let gates = &mut cache.gates[t * h4..(t + 1) * h4];
            gates[j] = i;
            gates[h + j] = f;
            gates[2 * h + j] = g;
            gates[3 * h + j] = o;
            cache.cells[t * h + j] = c;
            cache.hidden[t * h + j] = o * c.tanh();
        }
    }
    cache
}

/// Backpropagation through time. `dh_out` is `[B, H]`, the upstream
/// gradient on each emitted hidden state.
pub(crate) fn backward(
    cache: &DirCache,
    xt: &[f64],
    steps: usize,
    input_size: usize,
    w_ih: &[f64],
    w_hh: &[f64],
    dh_out: &[f64],
) -> DirGrads {
    let h = cache.hidden_size;
    let h4 = 4 * h;
    let mut grads = DirGrads {
        dx: vec![0.0; steps * input_size],
        dw_ih: vec![0.0; h4 * input_size],
        dw_hh: vec![0.0; h4 * h],
        db: vec![0.0; h4],
    };
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; h4];
    let order = cache.order(steps);
    for &t in order.iter().rev() {
        let prev = cache.previous(t, steps);
        let gates = &cache.gates[t * h4..(t + 1) * h4];
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let c = cache.cells[t * h + j];
            let c_prev = prev.map_or(0.0, |p| cache.cells[p * h + j]);
            let tc = c.tanh();
            let dh = dh_out[t * h + j] + dh_next[j];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            dz[j] = dc * g * i * (1.0 - i);
            dz[h + j] = dc * c_prev * f * (1.0 - f);
            dz[2 * h + j] = dc * i * (1.0 - g * g);
            dz[3 * h + j] = d_o * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        let x = &xt[t * input_size..(t + 1) * input_size];
        let dx = &mut grads.dx[t * input_size..(t + 1) * input_size];
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for (r, &dzr) in dz.iter().enumerate() {
            grads.db[r] += dzr;
            if dzr == 0.0 {
                continue;
            }
            let dwi = &mut grads.dw_ih[r * input_size..(r + 1) * input_size];
            let wi = &w_ih[r * input_size..(r + 1) * input_size];
            for k in 0..input_size {
                dwi[k] += dzr * x[k];
                dx[k] += wi[k] * dzr;
            }
            let wh = &w_hh[r * h..(r + 1) * h];
            for k in 0..h {
                dh_next[k] += wh[k] * dzr;
            }
            if let Some(p) = prev {
                let hp = &cache.hidden[p * h..(p + 1) * h];
                let dwh = &mut grads.dw_hh[r * h..(r + 1) * h];
                for k in 0..h {
                    dwh[k] += dzr * hp[k];
                }
            }
        }
    }
    grads
}
