use super::lstm::{self, DirCache};
use super::{AutodiffError, ParamId, ParamStore, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation whose gradient is supplied in closed form instead of being
/// traced through elementary ops.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError>;

    /// Returns one entry per input: the gradient of the loss with respect to
    /// that input, or `None` when the input is not differentiable.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &[f64],
    ) -> Vec<Option<Vec<f64>>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// Right operand holds a single value.
    Scalar,
    /// Right operand holds one value per row of a rank-2 left operand.
    Row,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Square(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    Conv1d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        dilation: usize,
    },
    BiLstm {
        inputs: [Var; 7],
        fwd: Box<DirCache>,
        bwd: Box<DirCache>,
        transposed: Vec<f64>,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Reverse-mode computation graph. Nodes are appended in evaluation order,
/// so index order is a valid topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

/// `[outer, axis, inner]` decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter as a gradient-receiving leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(Broadcast::Same);
        }
        let nb: usize = sb.iter().product();
        if nb == 1 {
            return Ok(Broadcast::Scalar);
        }
        if sa.len() == 2 && nb == sa[0] && (sb.len() == 1 || sb == [sa[0], 1]) {
            return Ok(Broadcast::Row);
        }
        Err(self.mismatch(op, a, b))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Var, Broadcast), AutodiffError> {
        let kind = self.broadcast_kind(name, a, b)?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let data: Vec<f64> = match kind {
            Broadcast::Same => av.data().iter().zip(bv).map(|(x, y)| f(*x, *y)).collect(),
            Broadcast::Scalar => av.data().iter().map(|x| f(*x, bv[0])).collect(),
            Broadcast::Row => {
                let cols = av.shape()[1];
                av.data()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| f(*x, bv[i / cols]))
                    .collect()
            }
        };
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok((self.push(t, Op::Leaf, rg), kind))
    }

    /// Elementwise sum. `b` may also be a single value or one value per row.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (v, kind) = self.binary("add", a, b, |x, y| x + y)?;
        self.nodes[v.0].op = Op::Add(a, b, kind);
        Ok(v)
    }

    /// Elementwise product with the same broadcasting rules as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (v, kind) = self.binary("mul", a, b, |x, y| x * y)?;
        self.nodes[v.0].op = Op::Mul(a, b, kind);
        Ok(v)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let av = self.value(a);
        let t = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x * s).collect())
            .expect("same shape");
        let rg = self.needs(&[a]);
        self.push(t, Op::Scale(a, s), rg)
    }

    /// Adds a constant tensor of identical shape.
    pub fn offset(&mut self, a: Var, c: &Tensor) -> Result<Var, AutodiffError> {
        if self.shape(a) != c.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "offset",
                lhs: self.shape(a).to_vec(),
                rhs: c.shape().to_vec(),
            });
        }
        let av = self.value(a);
        let data = av.data().iter().zip(c.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.needs(&[a]);
        Ok(self.push(t, Op::Offset(a), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let t = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| f(*x)).collect())
            .expect("same shape");
        let rg = self.needs(&[a]);
        self.push(t, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.value(a).data();
        let m = d.iter().sum::<f64>() / d.len().max(1) as f64;
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (Some((m, k)), Some((k2, n))) = (self.value(a).dims2(), self.value(b).dims2()) else {
            return Err(self.mismatch("matmul", a, b));
        };
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Length-preserving dilated convolution over the trailing axis.
    ///
    /// `input` is `[c_in, t]`, `weight` is `[c_out, c_in, k]` with odd `k`,
    /// `bias` is `[c_out]`. Zero padding of `(k - 1) * dilation / 2` on each side.
    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        dilation: usize,
    ) -> Result<Var, AutodiffError> {
        let (c_in, t) = self
            .value(input)
            .dims2()
            .ok_or_else(|| self.mismatch("conv1d", input, weight))?;
        let ws = self.shape(weight).to_vec();
        if ws.len() != 3 || ws[1] != c_in {
            return Err(self.mismatch("conv1d", input, weight));
        }
        let (c_out, k) = (ws[0], ws[2]);
        if k % 2 == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "conv1d",
                msg: format!("kernel width must be odd, got {k}"),
            });
        }
        if dilation == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "conv1d",
                msg: "dilation must be at least 1".into(),
            });
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(self.mismatch("conv1d", weight, b));
            }
        }
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let mut out = vec![0.0; c_out * t];
        for o in 0..c_out {
            let row = &mut out[o * t..(o + 1) * t];
            if let Some(b) = bias {
                let bv = self.value(b).data()[o];
                row.iter_mut().for_each(|v| *v = bv);
            }
            for i in 0..c_in {
                let xr = &x[i * t..(i + 1) * t];
                for kk in 0..k {
                    let wv = w[(o * c_in + i) * k + kk];
                    if wv == 0.0 {
                        continue;
                    }
                    let (dst, src) = conv_ranges(t, kk, k, dilation);
                    for (y, xv) in row[dst].iter_mut().zip(&xr[src]) {
                        *y += wv * xv;
                    }
                }
            }
        }
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        let rg = self.needs(&inputs);
        Ok(self.push(
            Tensor::new(vec![c_out, t], out)?,
            Op::Conv1d {
                input,
                weight,
                bias,
                dilation,
            },
            rg,
        ))
    }

    /// Bidirectional LSTM over the trailing (time) axis of `[d, steps]`.
    ///
    /// Per direction: `w_ih [4h, d]`, `w_hh [4h, h]`, `b [4h]`, gate order
    /// input, forget, cell, output. Output is `[2h, steps]` with the forward
    /// direction in the first `h` rows.
    pub fn bilstm(&mut self, x: Var, fwd: [Var; 3], bwd: [Var; 3]) -> Result<Var, AutodiffError> {
        let (d, steps) = self
            .value(x)
            .dims2()
            .ok_or_else(|| self.mismatch("bilstm", x, fwd[0]))?;
        let h4 = self.shape(fwd[2]).first().copied().unwrap_or(0);
        let h = h4 / 4;
        for dir in [&fwd, &bwd] {
            if self.shape(dir[0]) != [h4, d] {
                return Err(self.mismatch("bilstm", x, dir[0]));
            }
            if self.shape(dir[1]) != [h4, h] || h4 % 4 != 0 {
                return Err(self.mismatch("bilstm", dir[1], dir[2]));
            }
            if self.shape(dir[2]) != [h4] {
                return Err(self.mismatch("bilstm", dir[0], dir[2]));
            }
        }
        let xv = self.value(x).data();
        let mut transposed = vec![0.0; d * steps];
        for r in 0..d {
            for t in 0..steps {
                transposed[t * d + r] = xv[r * steps + t];
            }
        }
        let run = |dir: &[Var; 3], reverse: bool| {
            lstm::forward(
                &transposed,
                steps,
                d,
                self.value(dir[0]).data(),
                self.value(dir[1]).data(),
                self.value(dir[2]).data(),
                h,
                reverse,
            )
        };
        let fc = run(&fwd, false);
        let bc = run(&bwd, true);
        let mut out = vec![0.0; 2 * h * steps];
        for t in 0..steps {
            for j in 0..h {
                out[j * steps + t] = fc.hidden[t * h + j];
                out[(h + j) * steps + t] = bc.hidden[t * h + j];
            }
        }
        let inputs = [x, fwd[0], fwd[1], fwd[2], bwd[0], bwd[1], bwd[2]];
        let rg = self.needs(&inputs);
        Ok(self.push(
            Tensor::new(vec![2 * h, steps], out)?,
            Op::BiLstm {
                inputs,
                fwd: Box::new(fc),
                bwd: Box::new(bc),
                transposed,
            },
            rg,
        ))
    }

    /// `input[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, input: Var, axis: usize, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(AutodiffError::InvalidArgument {
                op: "slice",
                msg: format!("range {start}..{end} on axis {axis} of {shape:?}"),
            });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(input).data();
        let width = end - start;
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = (o * len + start) * inner;
            data.extend_from_slice(&src[base..base + width * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = width;
        let rg = self.needs(&[input]);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Slice { input, axis, start }, rg))
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = *inputs.first().ok_or_else(|| AutodiffError::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(AutodiffError::InvalidArgument {
                op: "concat",
                msg: format!("axis {axis} out of range for {base:?}"),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(self.mismatch("concat", first, v));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                let src = self.value(v).data();
                data.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.needs(inputs);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn custom(&mut self, inputs: &[Var], mut op: Box<dyn CustomOp>) -> Result<Var, AutodiffError> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
        let out = op.forward(&values)?;
        let rg = self.needs(inputs);
        Ok(self.push(
            out,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        ))
    }

    /// Fills the gradient of every node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(AutodiffError::NonScalarLoss(shape.to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                propagate(&self.nodes, &mut self.grads, i, &g);
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Adds the gradients of parameter leaves into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (node, grad) in self.nodes.iter().zip(&self.grads) {
            if let (Some(id), Some(g)) = (node.param, grad) {
                let p = store.get_mut(id);
                p.grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                p.grad_populated = true;
            }
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (y, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *y += av * bv;
            }
        }
    }
    out
}

/// Dot product with independent partial sums so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    acc.iter().sum::<f64>() + tail
}

pub(crate) fn sum(a: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let chunks = a.chunks_exact(8);
    let tail: f64 = chunks.remainder().iter().sum();
    for x in chunks {
        for j in 0..8 {
            acc[j] += x[j];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Destination and source ranges for kernel tap `kk` of a same-length conv.
fn conv_ranges(
    t: usize,
    kk: usize,
    k: usize,
    dilation: usize,
) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let shift = (kk as isize - (k as isize - 1) / 2) * dilation as isize;
    let t = t as isize;
    let lo = 0.max(-shift).min(t);
    let hi = t.min(t - shift).max(lo);
    if lo == hi {
        return (0..0, 0..0);
    }
    (
        lo as usize..hi as usize,
        (lo + shift) as usize..(hi + shift) as usize,
    )
}

fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn add_into(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    if let Some(s) = slot(nodes, grads, v) {
        s.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
}

fn reduce_broadcast(kind: Broadcast, g: &[f64], cols: usize, rhs_len: usize) -> Vec<f64> {
    match kind {
        Broadcast::Same => g.to_vec(),
        Broadcast::Scalar => vec![g.iter().sum()],
        Broadcast::Row => {
            let mut out = vec![0.0; rhs_len];
            for (i, gv) in g.iter().enumerate() {
                out[i / cols] += gv;
            }
            out
        }
    }
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let node = &nodes[i];
    let out = &node.value;
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b, kind) => {
            add_into(nodes, grads, *a, g);
            let bv = val(*b);
            let cols = out.shape().get(1).copied().unwrap_or(1);
            let gb = reduce_broadcast(*kind, g, cols, bv.numel());
            add_into(nodes, grads, *b, &gb);
        }
        Op::Mul(a, b, kind) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            let cols = out.shape().get(1).copied().unwrap_or(1);
            let rhs_at = |idx: usize| match kind {
                Broadcast::Same => bv[idx],
                Broadcast::Scalar => bv[0],
                Broadcast::Row => bv[idx / cols],
            };
            let ga: Vec<f64> = g.iter().enumerate().map(|(j, gv)| gv * rhs_at(j)).collect();
            let prod: Vec<f64> = g.iter().zip(av).map(|(gv, x)| gv * x).collect();
            let gb = reduce_broadcast(*kind, &prod, cols, bv.len());
            add_into(nodes, grads, *a, &ga);
            add_into(nodes, grads, *b, &gb);
        }
        Op::Scale(a, s) => {
            if let Some(dst) = slot(nodes, grads, *a) {
                dst.iter_mut().zip(g).for_each(|(d, gv)| *d += gv * s);
            }
        }
        Op::Offset(a) => add_into(nodes, grads, *a, g),
        Op::Tanh(a) => {
            if let Some(dst) = slot(nodes, grads, *a) {
                for ((d, gv), y) in dst.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * (1.0 - y * y);
                }
            }
        }
        Op::Sigmoid(a) => {
            if let Some(dst) = slot(nodes, grads, *a) {
                for ((d, gv), y) in dst.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * y * (1.0 - y);
                }
            }
        }
        Op::Square(a) => {
            let x = val(*a).data();
            if let Some(dst) = slot(nodes, grads, *a) {
                for ((d, gv), xv) in dst.iter_mut().zip(g).zip(x) {
                    *d += 2.0 * gv * xv;
                }
            }
        }
        Op::Log(a) => {
            let x = val(*a).data();
            if let Some(dst) = slot(nodes, grads, *a) {
                for ((d, gv), xv) in dst.iter_mut().zip(g).zip(x) {
                    *d += gv / xv;
                }
            }
        }
        Op::Sum(a) => {
            if let Some(dst) = slot(nodes, grads, *a) {
                dst.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean(a) => {
            let n = val(*a).numel().max(1) as f64;
            if let Some(dst) = slot(nodes, grads, *a) {
                dst.iter_mut().for_each(|d| *d += g[0] / n);
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2().expect("rank 2");
            let n = out.shape()[1];
            let (av, bv) = (val(*a).data(), val(*b).data());
            if nodes[a.0].requires_grad {
                // dA = G B^T
                let mut ga = vec![0.0; m * k];
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let brow = &bv[p * n..(p + 1) * n];
                        ga[r * k + p] = dot(grow, brow);
                    }
                }
                add_into(nodes, grads, *a, &ga);
            }
            if nodes[b.0].requires_grad {
                // dB = A^T G
                let mut gb = vec![0.0; k * n];
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let av_rp = av[r * k + p];
                        for (d, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += av_rp * gv;
                        }
                    }
                }
                add_into(nodes, grads, *b, &gb);
            }
        }
        Op::Conv1d {
            input,
            weight,
            bias,
            dilation,
        } => {
            let (c_in, t) = val(*input).dims2().expect("rank 2");
            let ws = val(*weight).shape();
            let (c_out, k) = (ws[0], ws[2]);
            let x = val(*input).data();
            let w = val(*weight).data();
            if let Some(b) = bias {
                let gb: Vec<f64> = (0..c_out).map(|o| sum(&g[o * t..(o + 1) * t])).collect();
                add_into(nodes, grads, *b, &gb);
            }
            if nodes[weight.0].requires_grad {
                let mut gw = vec![0.0; w.len()];
                for o in 0..c_out {
                    let grow = &g[o * t..(o + 1) * t];
                    for i in 0..c_in {
                        let xr = &x[i * t..(i + 1) * t];
                        for kk in 0..k {
                            let (dst, src) = conv_ranges(t, kk, k, *dilation);
                            gw[(o * c_in + i) * k + kk] = dot(&grow[dst], &xr[src]);
                        }
                    }
                }
                add_into(nodes, grads, *weight, &gw);
            }
            if nodes[input.0].requires_grad {
                let mut gx = vec![0.0; c_in * t];
                for o in 0..c_out {
                    let grow = &g[o * t..(o + 1) * t];
                    for i in 0..c_in {
                        let gxr = &mut gx[i * t..(i + 1) * t];
                        for kk in 0..k {
                            let wv = w[(o * c_in + i) * k + kk];
                            if wv == 0.0 {
                                continue;
                            }
                            let (dst, src) = conv_ranges(t, kk, k, *dilation);
                            for (d, gv) in gxr[src].iter_mut().zip(&grow[dst]) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
                add_into(nodes, grads, *input, &gx);
            }
        }
        Op::BiLstm {
            inputs,
            fwd,
            bwd,
            transposed,
        } => {
            let (d, steps) = val(inputs[0]).dims2().expect("rank 2");
            let h = fwd.hidden_size;
            let mut dh_f = vec![0.0; steps * h];
            let mut dh_b = vec![0.0; steps * h];
            for t in 0..steps {
                for j in 0..h {
                    dh_f[t * h + j] = g[j * steps + t];
                    dh_b[t * h + j] = g[(h + j) * steps + t];
                }
            }
            let mut dx_t = vec![0.0; d * steps];
            for (cache, dh, base) in [(fwd, &dh_f, 1usize), (bwd, &dh_b, 4usize)] {
                let r = lstm::backward(
                    cache,
                    transposed,
                    steps,
                    d,
                    val(inputs[base]).data(),
                    val(inputs[base + 1]).data(),
                    dh,
                );
                dx_t.iter_mut().zip(&r.dx).for_each(|(a, b)| *a += b);
                add_into(nodes, grads, inputs[base], &r.dw_ih);
                add_into(nodes, grads, inputs[base + 1], &r.dw_hh);
                add_into(nodes, grads, inputs[base + 2], &r.db);
            }
            if let Some(dst) = slot(nodes, grads, inputs[0]) {
                for r in 0..d {
                    for t in 0..steps {
                        dst[r * steps + t] += dx_t[t * d + r];
                    }
                }
            }
        }
        Op::Slice { input, axis, start } => {
            let shape = val(*input).shape();
            let (outer, len, inner) = split_axis(shape, *axis);
            let width = out.shape()[*axis];
            if let Some(dst) = slot(nodes, grads, *input) {
                for o in 0..outer {
                    let base = (o * len + start) * inner;
                    let src = &g[o * width * inner..(o + 1) * width * inner];
                    dst[base..base + width * inner]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(a, b)| *a += b);
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = split_axis(out.shape(), *axis);
            let mut offset = 0;
            for v in inputs {
                let len = val(*v).shape()[*axis];
                if let Some(dst) = slot(nodes, grads, *v) {
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                        dst[o * len * inner..(o + 1) * len * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, b)| *a += b);
                    }
                }
                offset += len;
            }
        }
        Op::Custom { inputs, op } => {
            let values: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
            let gs = op.backward(&values, out, g);
            for (v, gi) in inputs.iter().zip(gs) {
                if let Some(gi) = gi {
                    add_into(nodes, grads, *v, &gi);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_at_origin() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![0.0]));
        let y = g.tanh(x);
        assert_eq!(g.value(y).data(), &[0.0]);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0]);
    }

    #[test]
    fn quadratic_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0]));
        let xx = g.mul(x, x).unwrap();
        let l = g.sum(xx);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn identity_kernel_conv() {
        let mut g = Graph::new();
        let seq = vec![0.3, -1.0, 2.5, 4.0, 0.0, 7.0];
        let x = g.constant(Tensor::row(seq.clone()));
        let w = g.constant(Tensor::new(vec![1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap());
        for d in [1, 2, 5] {
            let y = g.conv1d(x, w, None, d).unwrap();
            assert_eq!(g.value(y).data(), seq.as_slice());
        }
    }

    #[test]
    fn dilation_longer_than_signal() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let w = g.constant(Tensor::new(vec![1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap());
        let y = g.conv1d(x, w, None, 8).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn dilated_conv_taps_land_at_offsets() {
        let mut g = Graph::new();
        let mut seq = vec![0.0; 9];
        seq[4] = 1.0;
        let x = g.constant(Tensor::row(seq));
        let w = g.constant(Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.conv1d(x, w, None, 2).unwrap();
        // out[t] = w0 x[t-2] + w1 x[t] + w2 x[t+2]
        assert_eq!(
            g.value(y).data(),
            &[0.0, 0.0, 3.0, 0.0, 2.0, 0.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn zero_weight_bilstm_is_silent() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.1, -0.7]).unwrap());
        let h = 4;
        let mk = |g: &mut Graph| {
            [
                g.constant(Tensor::zeros(vec![4 * h, 2])),
                g.constant(Tensor::zeros(vec![4 * h, h])),
                g.constant(Tensor::zeros(vec![4 * h])),
            ]
        };
        let f = mk(&mut g);
        let b = mk(&mut g);
        let y = g.bilstm(x, f, b).unwrap();
        assert_eq!(g.shape(y), &[2 * h, 3]);
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![4, 5]));
        let msg = g.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
        let msg = g.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(vec![2]));
        let b = g.tanh(a);
        assert!(matches!(g.backward(b), Err(AutodiffError::NonScalarLoss(_))));
    }

    #[test]
    fn slice_concat_round_trip() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let top = g.slice(x, 0, 0, 1).unwrap();
        let rest = g.slice(x, 0, 1, 3).unwrap();
        let back = g.concat(&[top, rest], 0).unwrap();
        assert_eq!(g.value(back), g.value(x));
        let right = g.slice(x, 1, 1, 2).unwrap();
        assert_eq!(g.value(right).data(), &[2., 4., 6.]);
        let s = g.sum(right);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0., 1., 0., 1., 0., 1.]);
    }

    #[test]
    fn row_broadcast_bias() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
        let b = g.input(Tensor::vector(vec![10., 20.]));
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).data(), &[11., 12., 23., 24.]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(b).unwrap(), &[2., 2.]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let x = g.input(Tensor::vector(vec![3.0, 4.0]));
        let y = g.mul(c, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap(), &[1.0, 2.0]);
    }
}
