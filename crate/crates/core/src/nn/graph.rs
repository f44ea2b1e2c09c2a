//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its value. Calling
//! [`Graph::backward`] walks the tape in reverse and returns gradients for
//! every node, from which parameter gradients are collected.

use super::kernels::{conv2d_backward, conv2d_forward, conv_out_len, conv_t2_backward, conv_t2_forward};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::metrics::pairwise_sum;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvT {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    MulChannels {
        x: Var,
        s: Var,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Gap(Var),
    Blend {
        x1: Var,
        c1: Var,
        x2: Var,
        c2: Var,
    },
    Mix {
        x: Var,
        m: Vec<f64>,
    },
    MeanAbs {
        x: Var,
        target: Tensor,
    },
    MeanSq {
        x: Var,
        target: Tensor,
    },
    Dot {
        x: Var,
        weights: Tensor,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::Conv { .. } => "conv2d",
            Op::ConvT { .. } => "conv_transpose2",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::MulChannels { .. } => "mul_channels",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Gap(_) => "global_avg_pool",
            Op::Blend { .. } => "confidence_blend",
            Op::Mix { .. } => "channel_mix",
            Op::MeanAbs { .. } => "mean_abs",
            Op::MeanSq { .. } => "mean_sq",
            Op::Dot { .. } => "dot",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    nan_check: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fail any op whose output contains NaN or infinity.
    pub fn with_nan_check() -> Self {
        Graph {
            nan_check: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.nan_check && !value.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite output from {} (node {})",
                op.name(),
                self.nodes.len()
            )));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Input,
        });
        Var(self.nodes.len() - 1)
    }

    /// Place a parameter on the tape (once per graph).
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.param_nodes.len() <= id.0 {
            self.param_nodes.resize(id.0 + 1, None);
        }
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Param,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<[usize; 4]> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return shape_err(format!("{what}: {sa:?} vs {sb:?}"));
        }
        Ok(sa)
    }

    /// Square-kernel convolution. `w`: `[co, ci, k, k]`, `b`: `[1, co, 1, 1]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let [_, ci, h, wd] = self.shape(x);
        let [co, wci, k, k2] = self.shape(w);
        if wci != ci || k != k2 || stride == 0 {
            return shape_err(format!("conv2d: input {:?}, weight {:?}", self.shape(x), self.shape(w)));
        }
        if let Some(b) = b {
            if self.shape(b) != [1, co, 1, 1] {
                return shape_err(format!("conv2d bias {:?} for {co} outputs", self.shape(b)));
            }
        }
        if conv_out_len(h, k, stride, pad).is_none() || conv_out_len(wd, k, stride, pad).is_none() {
            return shape_err(format!("conv2d: kernel {k} larger than padded input {h}x{wd}"));
        }
        let out = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad);
        self.push(out, Op::Conv { x, w, b, stride, pad })
    }

    /// 2×2 stride-2 transposed convolution. `w`: `[ci, co, 2, 2]`.
    pub fn conv_transpose2(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let ci = self.shape(x)[1];
        let [wci, co, k, k2] = self.shape(w);
        if wci != ci || k != 2 || k2 != 2 {
            return shape_err(format!("conv_transpose2: input {:?}, weight {:?}", self.shape(x), self.shape(w)));
        }
        if let Some(b) = b {
            if self.shape(b) != [1, co, 1, 1] {
                return shape_err(format!("conv_transpose2 bias {:?} for {co} outputs", self.shape(b)));
            }
        }
        let out = conv_t2_forward(self.value(x), self.value(w), b.map(|b| self.value(b)));
        self.push(out, Op::ConvT { x, w, b })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "sub")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x - y).collect();
        self.push(Tensor::from_vec(shape, data)?, Op::Sub(a, b))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * k);
        self.push(out, Op::Scale(x, k))
    }

    /// `x · s` with `s` of shape `[n, c, 1, 1]` broadcast over pixels.
    pub fn mul_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let [n, c, _, _] = self.shape(x);
        if self.shape(s) != [n, c, 1, 1] {
            return shape_err(format!("mul_channels: {:?} by {:?}", self.shape(x), self.shape(s)));
        }
        let mut out = self.value(x).clone();
        let sv = self.value(s).data().to_vec();
        for b in 0..n {
            for ch in 0..c {
                let k = sv[b * c + ch];
                out.plane_mut(b, ch).iter_mut().for_each(|v| *v *= k);
            }
        }
        self.push(out, Op::MulChannels { x, s })
    }

    /// Channel concatenation.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return shape_err("concat of nothing");
        };
        let [n, _, h, w] = self.shape(first);
        let mut c_total = 0;
        for &v in xs {
            let [vn, vc, vh, vw] = self.shape(v);
            if (vn, vh, vw) != (n, h, w) {
                return shape_err(format!("concat: {:?} vs {:?}", self.shape(v), self.shape(first)));
            }
            c_total += vc;
        }
        let mut out = Tensor::zeros([n, c_total, h, w]);
        for b in 0..n {
            let mut c0 = 0;
            for &v in xs {
                let t = &self.nodes[v.0].value;
                for ch in 0..t.channels() {
                    out.plane_mut(b, c0 + ch).copy_from_slice(t.plane(b, ch));
                }
                c0 += t.channels();
            }
        }
        self.push(out, Op::Concat(xs.to_vec()))
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.shape(x);
        if len == 0 || start + len > c {
            return shape_err(format!("slice {start}..{} of {c} channels", start + len));
        }
        let mut out = Tensor::zeros([n, len, h, w]);
        for b in 0..n {
            for ch in 0..len {
                out.plane_mut(b, ch).copy_from_slice(self.value(x).plane(b, start + ch));
            }
        }
        self.push(out, Op::Slice { x, start })
    }

    /// Global average pool to `[n, c, 1, 1]`.
    pub fn gap(&mut self, x: Var) -> Result<Var> {
        let [n, c, _, _] = self.shape(x);
        let t = self.value(x);
        let p = t.plane_len() as f64;
        let data = (0..n * c).map(|i| pairwise_sum(t.plane(i / c, i % c)) / p).collect();
        self.push(Tensor::from_vec([n, c, 1, 1], data)?, Op::Gap(x))
    }

    /// Per-pixel softmax blend: `w1·x1 + w2·x2` with `(w1, w2) = softmax(c1, c2)`.
    /// Confidences are single-channel and shared across the channels of `x`.
    pub fn blend(&mut self, x1: Var, c1: Var, x2: Var, c2: Var) -> Result<Var> {
        let [n, c, h, w] = self.same_shape(x1, x2, "blend values")?;
        self.same_shape(c1, c2, "blend confidences")?;
        if self.shape(c1) != [n, 1, h, w] {
            return shape_err(format!("blend confidence {:?} for values {:?}", self.shape(c1), [n, c, h, w]));
        }
        let mut out = Tensor::zeros([n, c, h, w]);
        for b in 0..n {
            let (ca, cb) = (self.value(c1).plane(b, 0), self.value(c2).plane(b, 0));
            let w1: Vec<f64> = ca.iter().zip(cb).map(|(a, b)| sigmoid(a - b)).collect();
            for ch in 0..c {
                let (a, bb) = (self.value(x1).plane(b, ch), self.value(x2).plane(b, ch));
                let o: Vec<f64> = (0..h * w).map(|i| w1[i] * a[i] + (1.0 - w1[i]) * bb[i]).collect();
                out.plane_mut(b, ch).copy_from_slice(&o);
            }
        }
        self.push(out, Op::Blend { x1, c1, x2, c2 })
    }

    /// Fixed linear map across channels: `out[o] = Σ_i m[o][i]·x[i]`.
    pub fn mix(&mut self, x: Var, m: &[Vec<f64>]) -> Result<Var> {
        let [n, c, h, w] = self.shape(x);
        if m.is_empty() || m.iter().any(|row| row.len() != c) {
            return shape_err(format!("mix matrix does not take {c} channels"));
        }
        let rows = m.len();
        let mut out = Tensor::zeros([n, rows, h, w]);
        for b in 0..n {
            for (o, row) in m.iter().enumerate() {
                let mut acc = vec![0.0; h * w];
                for (i, &k) in row.iter().enumerate() {
                    for (a, v) in acc.iter_mut().zip(self.value(x).plane(b, i)) {
                        *a += k * v;
                    }
                }
                out.plane_mut(b, o).copy_from_slice(&acc);
            }
        }
        let flat = m.iter().flatten().copied().collect();
        self.push(out, Op::Mix { x, m: flat })
    }

    /// Mean absolute difference to a constant target (scalar output).
    pub fn mean_abs(&mut self, x: Var, target: &Tensor) -> Result<Var> {
        self.check_target(x, target, "mean_abs")?;
        let d: Vec<f64> = self.value(x).data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).collect();
        let v = pairwise_sum(&d) / d.len() as f64;
        self.push(
            Tensor::scalar(v),
            Op::MeanAbs {
                x,
                target: target.clone(),
            },
        )
    }

    /// Mean squared difference to a constant target (scalar output).
    pub fn mean_sq(&mut self, x: Var, target: &Tensor) -> Result<Var> {
        self.check_target(x, target, "mean_sq")?;
        let d: Vec<f64> = self.value(x).data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).collect();
        let v = pairwise_sum(&d) / d.len() as f64;
        self.push(
            Tensor::scalar(v),
            Op::MeanSq {
                x,
                target: target.clone(),
            },
        )
    }

    /// `Σ x·weights` (scalar output); used to project outputs for gradient checks.
    pub fn dot(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        self.check_target(x, weights, "dot")?;
        let d: Vec<f64> = self.value(x).data().iter().zip(weights.data()).map(|(a, b)| a * b).collect();
        self.push(
            Tensor::scalar(pairwise_sum(&d)),
            Op::Dot {
                x,
                weights: weights.clone(),
            },
        )
    }

    fn check_target(&self, x: Var, t: &Tensor, what: &str) -> Result<()> {
        if self.shape(x) != t.shape() {
            return shape_err(format!("{what}: {:?} vs target {:?}", self.shape(x), t.shape()));
        }
        Ok(())
    }

    /// Gradients of the sum of `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::filled(self.shape(out), 1.0));
        for i in (0..=out.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, i: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |grads: &mut [Option<Tensor>], v: Var, g: Tensor| match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot => *slot = Some(g),
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &self.nodes[i].op {
            Op::Input | Op::Param => {}
            &Op::Conv { x, w, b, stride, pad } => {
                let (dx, dw, db) = conv2d_backward(val(x), val(w), dy, stride, pad);
                acc(grads, x, dx);
                acc(grads, w, dw);
                if let Some(b) = b {
                    acc(grads, b, db);
                }
            }
            &Op::ConvT { x, w, b } => {
                let (dx, dw, db) = conv_t2_backward(val(x), val(w), dy);
                acc(grads, x, dx);
                acc(grads, w, dw);
                if let Some(b) = b {
                    acc(grads, b, db);
                }
            }
            &Op::Relu(x) => {
                let xv = val(x);
                let data = xv.data().iter().zip(dy.data()).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
                acc(grads, x, Tensor::from_vec(xv.shape(), data).expect("same shape"));
            }
            &Op::Sigmoid(x) => {
                let y = &self.nodes[i].value;
                let data = y.data().iter().zip(dy.data()).map(|(&s, &g)| g * s * (1.0 - s)).collect();
                acc(grads, x, Tensor::from_vec(y.shape(), data).expect("same shape"));
            }
            &Op::Add(a, b) => {
                acc(grads, a, dy.clone());
                acc(grads, b, dy.clone());
            }
            &Op::Sub(a, b) => {
                acc(grads, a, dy.clone());
                acc(grads, b, dy.map(|g| -g));
            }
            &Op::Scale(x, k) => acc(grads, x, dy.map(|g| g * k)),
            &Op::MulChannels { x, s } => {
                let (xv, sv) = (val(x), val(s));
                let [n, c, _, _] = xv.shape();
                let mut dx = dy.clone();
                let mut ds = Tensor::zeros(sv.shape());
                for b in 0..n {
                    for ch in 0..c {
                        let k = sv.data()[b * c + ch];
                        let prod: Vec<f64> = dy.plane(b, ch).iter().zip(xv.plane(b, ch)).map(|(g, v)| g * v).collect();
                        ds.data_mut()[b * c + ch] = pairwise_sum(&prod);
                        dx.plane_mut(b, ch).iter_mut().for_each(|g| *g *= k);
                    }
                }
                acc(grads, x, dx);
                acc(grads, s, ds);
            }
            Op::Concat(xs) => {
                let n = dy.batch();
                let mut c0 = 0;
                for &v in xs {
                    let mut g = Tensor::zeros(val(v).shape());
                    let c = g.channels();
                    for b in 0..n {
                        for ch in 0..c {
                            g.plane_mut(b, ch).copy_from_slice(dy.plane(b, c0 + ch));
                        }
                    }
                    c0 += c;
                    acc(grads, v, g);
                }
            }
            &Op::Slice { x, start } => {
                let mut g = Tensor::zeros(val(x).shape());
                for b in 0..dy.batch() {
                    for ch in 0..dy.channels() {
                        g.plane_mut(b, start + ch).copy_from_slice(dy.plane(b, ch));
                    }
                }
                acc(grads, x, g);
            }
            &Op::Gap(x) => {
                let shape = val(x).shape();
                let p = (shape[2] * shape[3]) as f64;
                let mut g = Tensor::zeros(shape);
                for b in 0..shape[0] {
                    for ch in 0..shape[1] {
                        let v = dy.data()[b * shape[1] + ch] / p;
                        g.plane_mut(b, ch).fill(v);
                    }
                }
                acc(grads, x, g);
            }
            &Op::Blend { x1, c1, x2, c2 } => {
                let [n, c, _, _] = dy.shape();
                let (mut g1, mut g2) = (Tensor::zeros(dy.shape()), Tensor::zeros(dy.shape()));
                let mut gc = Tensor::zeros(val(c1).shape());
                for b in 0..n {
                    let w1: Vec<f64> = val(c1)
                        .plane(b, 0)
                        .iter()
                        .zip(val(c2).plane(b, 0))
                        .map(|(a, bb)| sigmoid(a - bb))
                        .collect();
                    for ch in 0..c {
                        let (a, bb, d) = (val(x1).plane(b, ch), val(x2).plane(b, ch), dy.plane(b, ch));
                        let gcp = gc.plane_mut(b, 0);
                        for k in 0..w1.len() {
                            gcp[k] += d[k] * w1[k] * (1.0 - w1[k]) * (a[k] - bb[k]);
                        }
                        let p1 = g1.plane_mut(b, ch);
                        for k in 0..w1.len() {
                            p1[k] = d[k] * w1[k];
                        }
                        let p2 = g2.plane_mut(b, ch);
                        for k in 0..w1.len() {
                            p2[k] = d[k] * (1.0 - w1[k]);
                        }
                    }
                }
                acc(grads, x1, g1);
                acc(grads, x2, g2);
                acc(grads, c2, gc.map(|g| -g));
                acc(grads, c1, gc);
            }
            Op::Mix { x, m } => {
                let xs = val(*x).shape();
                let (cin, rows) = (xs[1], dy.channels());
                let mut g = Tensor::zeros(xs);
                for b in 0..xs[0] {
                    for i in 0..cin {
                        let gp = g.plane_mut(b, i);
                        for o in 0..rows {
                            let k = m[o * cin + i];
                            for (gv, d) in gp.iter_mut().zip(dy.plane(b, o)) {
                                *gv += k * d;
                            }
                        }
                    }
                }
                acc(grads, *x, g);
            }
            Op::MeanAbs { x, target } => {
                let xv = val(*x);
                let k = dy.data()[0] / xv.len() as f64;
                let data = xv
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(a, b)| {
                        let d = a - b;
                        if d > 0.0 {
                            k
                        } else if d < 0.0 {
                            -k
                        } else {
                            0.0
                        }
                    })
                    .collect();
                acc(grads, *x, Tensor::from_vec(xv.shape(), data).expect("same shape"));
            }
            Op::MeanSq { x, target } => {
                let xv = val(*x);
                let k = 2.0 * dy.data()[0] / xv.len() as f64;
                let data = xv.data().iter().zip(target.data()).map(|(a, b)| k * (a - b)).collect();
                acc(grads, *x, Tensor::from_vec(xv.shape(), data).expect("same shape"));
            }
            Op::Dot { x, weights } => {
                let k = dy.data()[0];
                acc(grads, *x, weights.map(|w| w * k));
            }
        }
    }

    /// Parameter gradients present on the tape, in parameter order.
    pub fn param_grads<'g>(&self, grads: &'g Gradients) -> Vec<(ParamId, &'g Tensor)> {
        let mut out: Vec<(ParamId, &Tensor)> = self
            .param_nodes
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.and_then(|v| grads.get(v)).map(|g| (ParamId(i), g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}
