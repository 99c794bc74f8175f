//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its output value and the
//! handles of its inputs. Nodes can only reference earlier nodes, so the
//! node vector is already a topological order and [`Tape::backward`] is
//! a single reverse sweep.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryKind {
    Relu,
    Tanh,
    Exp,
    Ln,
    Abs,
    Square,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv1d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Unary(UnaryKind, Var),
    Binary(BinaryKind, Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    LogSumExp(Var),
    SumAll(Var),
    MeanAll(Var),
    MeanLength(Var),
    SumChannels(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation. Rebuilt for every training step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    /// Gradient for `var`; zeros of the right shape when unused.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (c, l) = self.shapes[var.0];
                Tensor::zeros(c, l)
            }
        }
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

/// `out[o, j] += sum_{i,t} w[o, i, t] * x[i, j*stride + t - padding]`
fn conv_forward(
    x: &Tensor,
    w: &Tensor,
    kernel: usize,
    stride: usize,
    padding: usize,
    out: &mut Tensor,
) {
    let c_in = x.channels();
    let len = x.length();
    let out_len = out.length();
    for o in 0..out.channels() {
        let w_row = w.channel(o);
        let out_row = out.channel_mut(o);
        for i in 0..c_in {
            let x_row = x.channel(i);
            for t in 0..kernel {
                let wv = w_row[i * kernel + t];
                if wv == 0.0 {
                    continue;
                }
                let (j0, j1) = valid_range(len, out_len, t, stride, padding);
                if j0 >= j1 {
                    continue;
                }
                let start = j0 * stride + t - padding;
                if stride == 1 {
                    let xs = &x_row[start..start + (j1 - j0)];
                    for (o_v, x_v) in out_row[j0..j1].iter_mut().zip(xs) {
                        *o_v += wv * x_v;
                    }
                } else {
                    for (n, o_v) in out_row[j0..j1].iter_mut().enumerate() {
                        *o_v += wv * x_row[start + n * stride];
                    }
                }
            }
        }
    }
}

/// Output positions `j` in `[j0, j1)` whose tap `t` lands inside the input.
fn valid_range(len: usize, out_len: usize, t: usize, stride: usize, padding: usize) -> (usize, usize) {
    // need 0 <= j*stride + t - padding < len
    let j0 = if padding > t {
        (padding - t).div_ceil(stride)
    } else {
        0
    };
    let limit = len + padding;
    let j1 = if limit > t {
        ((limit - t - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (j0, j1.max(j0))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// 1-D cross-correlation. `weight` is `[c_out, c_in * kernel]`,
    /// `bias` is `[c_out, 1]`.
    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let (c_in, len) = x.shape();
        let c_out = w.channels();
        if kernel == 0 || stride == 0 {
            return Err(Error::Shape("conv1d kernel and stride must be positive".into()));
        }
        if w.length() != c_in * kernel {
            return Err(Error::Shape(format!(
                "conv1d weight row of {} does not match c_in {c_in} x kernel {kernel}",
                w.length()
            )));
        }
        if kernel > len + 2 * padding {
            return Err(Error::Shape(format!(
                "conv1d kernel {kernel} exceeds padded length {}",
                len + 2 * padding
            )));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != (c_out, 1) {
                return Err(Error::Shape(format!(
                    "conv1d bias {:?} should be [{c_out}, 1]",
                    self.value(b).shape()
                )));
            }
        }
        let out_len = (len + 2 * padding - kernel) / stride + 1;
        let mut out = match bias {
            Some(b) => {
                let bv = self.value(b);
                let mut o = Tensor::zeros(c_out, out_len);
                for c in 0..c_out {
                    o.channel_mut(c).fill(bv.get(c, 0));
                }
                o
            }
            None => Tensor::zeros(c_out, out_len),
        };
        conv_forward(x, w, kernel, stride, padding, &mut out);
        Ok(self.push(
            out,
            Op::Conv1d {
                input,
                weight,
                bias,
                kernel,
                stride,
                padding,
            },
        ))
    }

    /// Linear interpolation by an integer factor; the last sample is held.
    pub fn upsample_linear(&mut self, input: Var, factor: usize) -> Result<Var> {
        let x = self.value(input);
        let (c, len) = x.shape();
        if factor == 0 || len == 0 {
            return Err(Error::Shape("upsample needs factor >= 1 and a non-empty input".into()));
        }
        let mut out = Tensor::zeros(c, len * factor);
        for ch in 0..c {
            let xr = x.channel(ch);
            let orow = out.channel_mut(ch);
            for (i, &x0) in xr.iter().enumerate() {
                let x1 = xr[(i + 1).min(len - 1)];
                for r in 0..factor {
                    let frac = r as f64 / factor as f64;
                    orow[i * factor + r] = x0 * (1.0 - frac) + x1 * frac;
                }
            }
        }
        Ok(self.push(out, Op::Upsample { input, factor }))
    }

    /// Affine map of the flattened input: `weight` is `[m, n]`, `bias`
    /// is `[m, 1]`, output is `[m, 1]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let x = self.value(input).data();
        let w = self.value(weight);
        let b = self.value(bias);
        let m = w.channels();
        if w.length() != x.len() || b.shape() != (m, 1) {
            return Err(Error::Shape(format!(
                "linear: weight {:?}, bias {:?}, input of {} values",
                w.shape(),
                b.shape(),
                x.len()
            )));
        }
        let out: Vec<f64> = (0..m)
            .map(|r| {
                b.get(r, 0)
                    + w.channel(r)
                        .iter()
                        .zip(x)
                        .map(|(wv, xv)| wv * xv)
                        .sum::<f64>()
            })
            .collect();
        Ok(self.push(Tensor::column(out), Op::Linear { input, weight, bias }))
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        let f: fn(f64) -> f64 = match kind {
            UnaryKind::Relu => |v| v.max(0.0),
            UnaryKind::Tanh => f64::tanh,
            UnaryKind::Exp => f64::exp,
            UnaryKind::Ln => f64::ln,
            UnaryKind::Abs => f64::abs,
            UnaryKind::Square => |v| v * v,
        };
        let out = self.value(x).map(f);
        self.push(out, Op::Unary(kind, x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Ln, x)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Abs, x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Square, x)
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ca, la) = ta.shape();
        let (cb, lb) = tb.shape();
        let (c, l) = match (broadcast_dim(ca, cb), broadcast_dim(la, lb)) {
            (Some(c), Some(l)) => (c, l),
            _ => {
                return Err(Error::Shape(format!(
                    "cannot broadcast [{ca}, {la}] with [{cb}, {lb}]"
                )))
            }
        };
        let f: fn(f64, f64) -> f64 = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
            BinaryKind::Div => |x, y| x / y,
        };
        let mut out = Tensor::zeros(c, l);
        for ch in 0..c {
            let ra = ta.channel(if ca == 1 { 0 } else { ch });
            let rb = tb.channel(if cb == 1 { 0 } else { ch });
            let ro = out.channel_mut(ch);
            match (la == l, lb == l) {
                (true, true) => {
                    for ((o, &x), &y) in ro.iter_mut().zip(ra).zip(rb) {
                        *o = f(x, y);
                    }
                }
                (true, false) => {
                    let y = rb[0];
                    for (o, &x) in ro.iter_mut().zip(ra) {
                        *o = f(x, y);
                    }
                }
                (false, true) => {
                    let x = ra[0];
                    for (o, &y) in ro.iter_mut().zip(rb) {
                        *o = f(x, y);
                    }
                }
                (false, false) => ro[0] = f(ra[0], rb[0]),
            }
        }
        Ok(self.push(out, Op::Binary(kind, a, b)))
    }

    /// Elementwise sum; size-1 axes broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor))
    }

    /// Softmax across channels, independently at every position.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (c, l) = t.shape();
        let mut out = Tensor::zeros(c, l);
        for j in 0..l {
            let m = (0..c).map(|k| t.get(k, j)).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..c {
                let e = (t.get(k, j) - m).exp();
                out.data_mut()[k * l + j] = e;
                total += e;
            }
            for k in 0..c {
                out.data_mut()[k * l + j] /= total;
            }
        }
        self.push(out, Op::Softmax(x))
    }

    /// `ln sum_k exp(x[k, j])` across channels, giving `[1, length]`.
    pub fn logsumexp(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (c, l) = t.shape();
        let out: Vec<f64> = (0..l)
            .map(|j| {
                let m = (0..c).map(|k| t.get(k, j)).fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    return m;
                }
                m + (0..c).map(|k| (t.get(k, j) - m).exp()).sum::<f64>().ln()
            })
            .collect();
        self.push(Tensor::row(out), Op::LogSumExp(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.sum() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(x))
    }

    /// Mean over the length axis: `[c, l] -> [c, 1]`.
    pub fn mean_length(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let l = t.length() as f64;
        let out = (0..t.channels())
            .map(|c| t.channel(c).iter().sum::<f64>() / l)
            .collect();
        self.push(Tensor::column(out), Op::MeanLength(x))
    }

    /// Sum over channels: `[c, l] -> [1, l]`.
    pub fn sum_channels(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut out = vec![0.0; t.length()];
        for c in 0..t.channels() {
            for (o, v) in out.iter_mut().zip(t.channel(c)) {
                *o += v;
            }
        }
        self.push(Tensor::row(out), Op::SumChannels(x))
    }

    pub fn reshape(&mut self, x: Var, channels: usize, length: usize) -> Result<Var> {
        let out = self.value(x).clone().reshaped(channels, length)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                lv.shape()
            )));
        }
        if !lv.item().is_finite() {
            return Err(Error::NonFinite(format!("loss = {}", lv.item())));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        fn acc(grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        }
        match &node.op {
            Op::Leaf => {}
            &Op::Conv1d {
                input,
                weight,
                bias,
                kernel,
                stride,
                padding,
            } => {
                let x = self.value(input);
                let w = self.value(weight);
                let (c_in, len) = x.shape();
                let out_len = g.length();
                let mut dx = Tensor::zeros(c_in, len);
                let mut dw = Tensor::zeros(w.channels(), w.length());
                for o in 0..g.channels() {
                    let g_row = g.channel(o);
                    let w_row = w.channel(o);
                    for i in 0..c_in {
                        let x_row = x.channel(i);
                        for t in 0..kernel {
                            let (j0, j1) = valid_range(len, out_len, t, stride, padding);
                            if j0 >= j1 {
                                continue;
                            }
                            let start = j0 * stride + t - padding;
                            let wv = w_row[i * kernel + t];
                            let dx_row = dx.channel_mut(i);
                            let mut dwv = 0.0;
                            if stride == 1 {
                                let n = j1 - j0;
                                let gs = &g_row[j0..j1];
                                for ((dxv, &xv), &gv) in dx_row[start..start + n]
                                    .iter_mut()
                                    .zip(&x_row[start..start + n])
                                    .zip(gs)
                                {
                                    *dxv += wv * gv;
                                    dwv += gv * xv;
                                }
                            } else {
                                for (n, &gv) in g_row[j0..j1].iter().enumerate() {
                                    let p = start + n * stride;
                                    dx_row[p] += wv * gv;
                                    dwv += gv * x_row[p];
                                }
                            }
                            dw.channel_mut(o)[i * kernel + t] += dwv;
                        }
                    }
                }
                acc(grads, input, dx);
                acc(grads, weight, dw);
                if let Some(b) = bias {
                    let db = (0..g.channels()).map(|o| g.channel(o).iter().sum()).collect();
                    acc(grads, b, Tensor::column(db));
                }
            }
            &Op::Upsample { input, factor } => {
                let (c, len) = self.value(input).shape();
                let mut dx = Tensor::zeros(c, len);
                for ch in 0..c {
                    let gr = g.channel(ch);
                    let dr = dx.channel_mut(ch);
                    for i in 0..len {
                        let next = (i + 1).min(len - 1);
                        for r in 0..factor {
                            let frac = r as f64 / factor as f64;
                            let gv = gr[i * factor + r];
                            dr[i] += gv * (1.0 - frac);
                            dr[next] += gv * frac;
                        }
                    }
                }
                acc(grads, input, dx);
            }
            &Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = self.value(input);
                let w = self.value(weight);
                let (c, l) = x.shape();
                let mut dx = vec![0.0; x.len()];
                let mut dw = Tensor::zeros(w.channels(), w.length());
                for r in 0..w.channels() {
                    let gv = g.get(r, 0);
                    for ((d, &wv), (dwv, &xv)) in dx
                        .iter_mut()
                        .zip(w.channel(r))
                        .zip(dw.channel_mut(r).iter_mut().zip(x.data()))
                    {
                        *d += gv * wv;
                        *dwv += gv * xv;
                    }
                }
                acc(grads, input, Tensor::new(c, l, dx).expect("shape preserved"));
                acc(grads, weight, dw);
                acc(grads, bias, g.clone());
            }
            &Op::Unary(kind, x) => {
                let xv = self.value(x);
                let yv = &node.value;
                let mut dx = g.clone();
                for ((d, &a), &y) in dx.data_mut().iter_mut().zip(xv.data()).zip(yv.data()) {
                    *d *= match kind {
                        UnaryKind::Relu => {
                            if a > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Tanh => 1.0 - y * y,
                        UnaryKind::Exp => y,
                        UnaryKind::Ln => 1.0 / a,
                        UnaryKind::Abs => a.signum() * (a != 0.0) as i32 as f64,
                        UnaryKind::Square => 2.0 * a,
                    };
                }
                acc(grads, x, dx);
            }
            &Op::Binary(kind, a, b) => {
                let ta = self.value(a);
                let tb = self.value(b);
                let (c, l) = g.shape();
                let mut da = Tensor::zeros(ta.channels(), ta.length());
                let mut db = Tensor::zeros(tb.channels(), tb.length());
                for ch in 0..c {
                    let ca = if ta.channels() == 1 { 0 } else { ch };
                    let cb = if tb.channels() == 1 { 0 } else { ch };
                    for j in 0..l {
                        let ja = if ta.length() == 1 { 0 } else { j };
                        let jb = if tb.length() == 1 { 0 } else { j };
                        let gv = g.get(ch, j);
                        let (x, y) = (ta.get(ca, ja), tb.get(cb, jb));
                        let (ga, gb) = match kind {
                            BinaryKind::Add => (gv, gv),
                            BinaryKind::Sub => (gv, -gv),
                            BinaryKind::Mul => (gv * y, gv * x),
                            BinaryKind::Div => (gv / y, -gv * x / (y * y)),
                        };
                        da.data_mut()[ca * ta.length() + ja] += ga;
                        db.data_mut()[cb * tb.length() + jb] += gb;
                    }
                }
                acc(grads, a, da);
                acc(grads, b, db);
            }
            &Op::Scale(x, factor) => acc(grads, x, g.map(|v| v * factor)),
            &Op::Softmax(x) => {
                let s = &node.value;
                let (c, l) = s.shape();
                let mut dx = Tensor::zeros(c, l);
                for j in 0..l {
                    let dot: f64 = (0..c).map(|k| g.get(k, j) * s.get(k, j)).sum();
                    for k in 0..c {
                        dx.data_mut()[k * l + j] = s.get(k, j) * (g.get(k, j) - dot);
                    }
                }
                acc(grads, x, dx);
            }
            &Op::LogSumExp(x) => {
                let t = self.value(x);
                let (c, l) = t.shape();
                let mut dx = Tensor::zeros(c, l);
                for j in 0..l {
                    let lse = node.value.get(0, j);
                    if lse == f64::NEG_INFINITY {
                        continue;
                    }
                    for k in 0..c {
                        dx.data_mut()[k * l + j] = g.get(0, j) * (t.get(k, j) - lse).exp();
                    }
                }
                acc(grads, x, dx);
            }
            &Op::SumAll(x) => {
                let (c, l) = self.value(x).shape();
                acc(grads, x, Tensor::full(c, l, g.item()));
            }
            &Op::MeanAll(x) => {
                let (c, l) = self.value(x).shape();
                acc(grads, x, Tensor::full(c, l, g.item() / (c * l) as f64));
            }
            &Op::MeanLength(x) => {
                let (c, l) = self.value(x).shape();
                let mut dx = Tensor::zeros(c, l);
                for ch in 0..c {
                    dx.channel_mut(ch).fill(g.get(ch, 0) / l as f64);
                }
                acc(grads, x, dx);
            }
            &Op::SumChannels(x) => {
                let (c, l) = self.value(x).shape();
                let mut dx = Tensor::zeros(c, l);
                for ch in 0..c {
                    dx.channel_mut(ch).copy_from_slice(g.channel(0));
                }
                acc(grads, x, dx);
            }
            &Op::Reshape(x) => {
                let (c, l) = self.value(x).shape();
                acc(grads, x, g.clone().reshaped(c, l).expect("same element count"));
            }
        }
    }
}
