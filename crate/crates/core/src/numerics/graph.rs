//! Reverse-mode differentiation over a linear tape.
//!
//! A [`Graph`] borrows the model's [`ParamStore`] for the duration of one forward and
//! backward pass. Nodes are appended in evaluation order, so walking the tape backwards
//! visits every consumer before its producers.

use super::kernels::{self, ConvGeom, LstmTrace};
use super::params::{ParamGrads, ParamId, ParamStore};
use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Vector-Jacobian product of a fused operation defined outside this module.
pub trait CustomBackward {
    /// Returns one gradient per input (in the order inputs were given), or `None`
    /// for inputs that receive nothing.
    fn backward(&self, inputs: &[&Tensor], out: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Tanh(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvTranspose { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Lstm { x: Var, w_ih: Var, w_hh: Var, b: Var, reverse: bool, trace: Box<LstmTrace> },
    Gather { table: Var, idx: Vec<usize> },
    CropRows { x: Var },
    MeanAbsDiff(Var, Var),
    MeanSqDiff(Var, Var),
    WeightedSum(Vec<(Var, f64)>),
    Custom { inputs: Vec<Var>, vjp: Box<dyn CustomBackward> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

/// Output of [`Graph::backward`]: gradients of every parameter and every node.
pub struct Gradients {
    pub params: ParamGrads,
    nodes: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to any node, e.g. an input leaf.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new(), param_nodes: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that gradients flow into (e.g. the point of a gradient check).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf without gradient; also the stop-gradient primitive.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let v = self.push(Tensor::zeros(&[0]), Op::Param(id), true);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.tensor(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "add: {:?} vs {:?}", ta.shape(), tb.shape());
        let mut out = ta.clone();
        out.add_assign(tb);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "sub: {:?} vs {:?}", ta.shape(), tb.shape());
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::from_vec(ta.shape(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_assign(k);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(v), Op::Sum(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let out = Tensor::from_vec(ta.shape(), ta.data().iter().map(|x| x.tanh()).collect());
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    /// Per-row affine map: `x: T×In`, `w: Out×In` → `T×Out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (tx, tw) = (self.value(x), self.value(w));
        let (t, inp) = (tx.rows(), tx.cols());
        let outc = tw.rows();
        assert_eq!(tw.cols(), inp, "linear: input width {} vs weight {:?}", inp, tw.shape());
        let mut out = vec![0.0; t * outc];
        kernels::matmul_nt(t, inp, outc, tx.data(), tw.data(), &mut out, 0.0);
        if let Some(b) = b {
            kernels::add_bias_rows(&mut out, self.value(b).data());
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::from_vec(&[t, outc], out), Op::Linear { x, w, b }, rg)
    }

    /// Strided convolution `x: long×Cin`, `w: Cout×Cin×K` → `short×Cout`.
    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad_left: usize, short_len: usize) -> Var {
        let (tx, tw) = (self.value(x), self.value(w));
        let (cout, cin, k) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        assert_eq!(tx.cols(), cin, "conv: input channels {} vs kernel {:?}", tx.cols(), tw.shape());
        let geom = ConvGeom { long_len: tx.rows(), short_len, channels: cin, kernel: k, stride, pad_left };
        let mut cols = vec![0.0; short_len * cin * k];
        kernels::im2col(&geom, tx.data(), &mut cols);
        let mut out = vec![0.0; short_len * cout];
        kernels::matmul_nt(short_len, cin * k, cout, &cols, tw.data(), &mut out, 0.0);
        if let Some(b) = b {
            kernels::add_bias_rows(&mut out, self.value(b).data());
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::from_vec(&[short_len, cout], out), Op::Conv { x, w, b, geom }, rg)
    }

    /// Adjoint placement of [`Graph::conv`]: `x: short×Cin`, `w: Cin×Cout×K` → `long×Cout`.
    pub fn conv_transpose(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad_left: usize, long_len: usize) -> Var {
        let (tx, tw) = (self.value(x), self.value(w));
        let (cin, cout, k) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        assert_eq!(tx.cols(), cin, "conv_transpose: input channels {} vs kernel {:?}", tx.cols(), tw.shape());
        let short_len = tx.rows();
        let geom = ConvGeom { long_len, short_len, channels: cout, kernel: k, stride, pad_left };
        let mut cols = vec![0.0; short_len * cout * k];
        kernels::matmul_nn(short_len, cin, cout * k, tx.data(), tw.data(), &mut cols, 0.0);
        let mut out = vec![0.0; long_len * cout];
        kernels::col2im(&geom, &cols, &mut out);
        if let Some(b) = b {
            kernels::add_bias_rows(&mut out, self.value(b).data());
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::from_vec(&[long_len, cout], out), Op::ConvTranspose { x, w, b, geom }, rg)
    }

    /// One LSTM direction; output `T×H`.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, b: Var, reverse: bool) -> Var {
        let (tx, ti, th, tb) = (self.value(x), self.value(w_ih), self.value(w_hh), self.value(b));
        let hidden = th.cols();
        assert_eq!(ti.cols(), tx.cols(), "lstm: input width mismatch");
        assert_eq!(ti.rows(), 4 * hidden);
        let trace = kernels::lstm_forward(tx.rows(), tx.cols(), hidden, tx.data(), ti.data(), th.data(), tb.data(), reverse);
        let out = Tensor::from_vec(&[tx.rows(), hidden], trace.hidden_out.clone());
        let rg = self.rg(x) || self.rg(w_ih) || self.rg(w_hh) || self.rg(b);
        self.push(out, Op::Lstm { x, w_ih, w_hh, b, reverse, trace: Box::new(trace) }, rg)
    }

    /// Rows of `table` selected by `idx`.
    pub fn gather(&mut self, table: Var, idx: Vec<usize>) -> Var {
        let tt = self.value(table);
        let d = tt.cols();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in &idx {
            out.extend_from_slice(tt.row(i));
        }
        let rg = self.rg(table);
        self.push(Tensor::from_vec(&[idx.len(), d], out), Op::Gather { table, idx }, rg)
    }

    /// First `n` rows of `x`.
    pub fn crop_rows(&mut self, x: Var, n: usize) -> Var {
        let out = self.value(x).slice_rows(0, n);
        let rg = self.rg(x);
        self.push(out, Op::CropRows { x }, rg)
    }

    /// `mean |a - b|`
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len());
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y).abs()).sum();
        let v = s / ta.len().max(1) as f64;
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::scalar(v), Op::MeanAbsDiff(a, b), rg)
    }

    /// `mean (a - b)²`
    pub fn mean_sq_diff(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len());
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let v = s / ta.len().max(1) as f64;
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::scalar(v), Op::MeanSqDiff(a, b), rg)
    }

    /// `Σ wᵢ·termᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let v: f64 = terms.iter().map(|(t, w)| w * self.value(*t).item()).sum();
        let rg = terms.iter().any(|(t, w)| *w != 0.0 && self.rg(*t));
        self.push(Tensor::scalar(v), Op::WeightedSum(terms), rg)
    }

    /// Appends a fused operation whose value was computed by the caller.
    pub fn custom(&mut self, inputs: Vec<Var>, value: Tensor, vjp: Box<dyn CustomBackward>) -> Var {
        let rg = inputs.iter().any(|v| self.rg(*v));
        self.push(value, Op::Custom { inputs, vjp }, rg)
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let mut params = ParamGrads::new(self.params.len());
        for (i, v) in self.param_nodes.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = &grads[v.0] {
                    params.accumulate(ParamId(i), g);
                }
            }
        }
        Gradients { params, nodes: grads }
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(a) => a.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &self.nodes[id].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                let mut neg = g.clone();
                neg.scale_assign(-1.0);
                acc(grads, *b, neg);
            }
            Op::Scale(a, k) => {
                let mut t = g.clone();
                t.scale_assign(*k);
                acc(grads, *a, t);
            }
            Op::Sum(a) => {
                let ta = self.value(*a);
                acc(grads, *a, Tensor::full(ta.shape(), g.item()));
            }
            Op::Tanh(a) => {
                let y = &self.nodes[id].value;
                let data = g.data().iter().zip(y.data()).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                acc(grads, *a, Tensor::from_vec(y.shape(), data));
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (t, inp, outc) = (tx.rows(), tx.cols(), tw.rows());
                if self.rg(*x) {
                    let mut dx = vec![0.0; t * inp];
                    kernels::matmul_nn(t, outc, inp, g.data(), tw.data(), &mut dx, 0.0);
                    acc(grads, *x, Tensor::from_vec(tx.shape(), dx));
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; outc * inp];
                    kernels::matmul_tn(outc, t, inp, g.data(), tx.data(), &mut dw, 0.0);
                    acc(grads, *w, Tensor::from_vec(tw.shape(), dw));
                }
                if let Some(b) = b {
                    let mut db = vec![0.0; outc];
                    kernels::col_sums(g.data(), outc, &mut db);
                    acc(grads, *b, Tensor::from_vec(&[outc], db));
                }
            }
            Op::Conv { x, w, b, geom } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let cout = tw.shape()[0];
                let width = geom.channels * geom.kernel;
                if self.rg(*w) {
                    let mut cols = vec![0.0; geom.short_len * width];
                    kernels::im2col(geom, tx.data(), &mut cols);
                    let mut dw = vec![0.0; cout * width];
                    kernels::matmul_tn(cout, geom.short_len, width, g.data(), &cols, &mut dw, 0.0);
                    acc(grads, *w, Tensor::from_vec(tw.shape(), dw));
                }
                if self.rg(*x) {
                    let mut dcols = vec![0.0; geom.short_len * width];
                    kernels::matmul_nn(geom.short_len, cout, width, g.data(), tw.data(), &mut dcols, 0.0);
                    let mut dx = vec![0.0; tx.len()];
                    kernels::col2im(geom, &dcols, &mut dx);
                    acc(grads, *x, Tensor::from_vec(tx.shape(), dx));
                }
                if let Some(b) = b {
                    let mut db = vec![0.0; cout];
                    kernels::col_sums(g.data(), cout, &mut db);
                    acc(grads, *b, Tensor::from_vec(&[cout], db));
                }
            }
            Op::ConvTranspose { x, w, b, geom } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (cin, cout) = (tw.shape()[0], tw.shape()[1]);
                let width = cout * geom.kernel;
                let mut gcols = vec![0.0; geom.short_len * width];
                kernels::im2col(geom, g.data(), &mut gcols);
                if self.rg(*w) {
                    let mut dw = vec![0.0; cin * width];
                    kernels::matmul_tn(cin, geom.short_len, width, tx.data(), &gcols, &mut dw, 0.0);
                    acc(grads, *w, Tensor::from_vec(tw.shape(), dw));
                }
                if self.rg(*x) {
                    let mut dx = vec![0.0; geom.short_len * cin];
                    kernels::matmul_nt(geom.short_len, width, cin, &gcols, tw.data(), &mut dx, 0.0);
                    acc(grads, *x, Tensor::from_vec(tx.shape(), dx));
                }
                if let Some(b) = b {
                    let mut db = vec![0.0; cout];
                    kernels::col_sums(g.data(), cout, &mut db);
                    acc(grads, *b, Tensor::from_vec(&[cout], db));
                }
            }
            Op::Lstm { x, w_ih, w_hh, b, reverse, trace } => {
                let (tx, ti, th) = (self.value(*x), self.value(*w_ih), self.value(*w_hh));
                let hidden = th.cols();
                let lg = kernels::lstm_backward(
                    tx.rows(),
                    tx.cols(),
                    hidden,
                    tx.data(),
                    ti.data(),
                    th.data(),
                    trace,
                    g.data(),
                    *reverse,
                );
                acc(grads, *x, Tensor::from_vec(tx.shape(), lg.d_x));
                acc(grads, *w_ih, Tensor::from_vec(ti.shape(), lg.d_w_ih));
                acc(grads, *w_hh, Tensor::from_vec(th.shape(), lg.d_w_hh));
                acc(grads, *b, Tensor::from_vec(&[4 * hidden], lg.d_bias));
            }
            Op::Gather { table, idx } => {
                let tt = self.value(*table);
                let d = tt.cols();
                let mut dt = Tensor::zeros(tt.shape());
                for (r, &i) in idx.iter().enumerate() {
                    let src = &g.data()[r * d..(r + 1) * d];
                    for (o, v) in dt.row_mut(i).iter_mut().zip(src) {
                        *o += *v;
                    }
                }
                acc(grads, *table, dt);
            }
            Op::CropRows { x } => {
                let tx = self.value(*x);
                let mut dx = vec![0.0; tx.len()];
                dx[..g.len()].copy_from_slice(g.data());
                acc(grads, *x, Tensor::from_vec(tx.shape(), dx));
            }
            Op::MeanAbsDiff(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let k = g.item() / ta.len().max(1) as f64;
                let da: Vec<f64> = ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .map(|(x, y)| {
                        let d = x - y;
                        if d > 0.0 {
                            k
                        } else if d < 0.0 {
                            -k
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if self.rg(*b) {
                    let db = da.iter().map(|v| -v).collect();
                    acc(grads, *b, Tensor::from_vec(tb.shape(), db));
                }
                acc(grads, *a, Tensor::from_vec(ta.shape(), da));
            }
            Op::MeanSqDiff(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let k = 2.0 * g.item() / ta.len().max(1) as f64;
                let da: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| k * (x - y)).collect();
                if self.rg(*b) {
                    let db = da.iter().map(|v| -v).collect();
                    acc(grads, *b, Tensor::from_vec(tb.shape(), db));
                }
                acc(grads, *a, Tensor::from_vec(ta.shape(), da));
            }
            Op::WeightedSum(terms) => {
                for (t, w) in terms {
                    if *w != 0.0 {
                        acc(grads, *t, Tensor::scalar(w * g.item()));
                    }
                }
            }
            Op::Custom { inputs, vjp } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let out = &self.nodes[id].value;
                for (v, dg) in inputs.iter().zip(vjp.backward(&vals, out, g)) {
                    if let Some(dg) = dg {
                        acc(grads, *v, dg);
                    }
                }
            }
        }
    }
}
