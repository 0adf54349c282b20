//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] walks the tape in reverse and leaves gradients for every
//! parameter leaf, which [`Graph::accumulate_into`] adds to a [`ParamStore`].
//! [`Graph::detach`] copies a value into a fresh constant leaf so no gradient
//! flows back through it.

use alloc::vec;
use alloc::vec::Vec;

use crate::nn::{ParamId, ParamStore};
use crate::tensor::{gemm, MatRef, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    AddChannelBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Reshape(Var),
    LogSoftmax(Var),
    Softmax(Var),
    ClampLog(Var, f64),
    Gather(Var, Vec<usize>),
    SelectRows(Var, Vec<usize>),
    Minimum(Var, Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Var, Var),
    Dot(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf holding a copy of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// Stop-gradient: same value, fresh constant leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = (av.shape()[0], av.shape()[1]);
        assert_eq!(bv.shape()[0], k, "matmul inner dimension");
        let n = bv.shape()[1];
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            MatRef::row_major(av.data(), k),
            MatRef::row_major(bv.data(), n),
            0.0,
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_vec(&[m, n], out).unwrap(), Op::MatMul(a, b), rg)
    }

    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Var {
        let mut out = self.value(x).clone();
        let bias = self.value(b).data();
        let n = bias.len();
        assert_eq!(out.cols(), n, "row bias width");
        for row in out.data_mut().chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += *bv;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        self.push(out, Op::AddRowBias(x, b), rg)
    }

    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Var {
        let mut out = self.value(x).clone();
        let bias = self.value(b).data();
        let c = out.shape()[1];
        assert_eq!(bias.len(), c, "channel bias width");
        let plane: usize = out.shape()[2..].iter().product();
        for (idx, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let bv = bias[idx % c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        let rg = self.rg(x) || self.rg(b);
        self.push(out, Op::AddChannelBias(x, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.len(), self.value(b).len(), "add shapes");
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.len(), self.value(b).len(), "mul shapes");
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= *v;
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v = 0.0
            }
        });
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshaped(shape).expect("reshape element count");
        let rg = self.rg(a);
        self.push(out, Op::Reshape(a), rg)
    }

    /// 2-D convolution of `x: [B, C, H, W]` with `w: [O, C, KH, KW]`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        assert_eq!(xs.len(), 4, "conv2d input must be [B, C, H, W]");
        assert_eq!(ws[1], xs[1], "conv2d channel mismatch");
        let (batch, in_ch, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (out_ch, kh, kw) = (ws[0], ws[2], ws[3]);
        assert!(
            h + 2 * pad >= kh && wd + 2 * pad >= kw,
            "conv2d kernel larger than padded input"
        );
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let geom = ConvGeom {
            batch,
            in_ch,
            h,
            w: wd,
            out_ch,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        };
        let cols = im2col(self.value(x).data(), &geom);
        let ckk = in_ch * kh * kw;
        let bhw = batch * ho * wo;
        let mut tmp = vec![0.0; out_ch * bhw];
        gemm(
            out_ch,
            ckk,
            bhw,
            MatRef::row_major(self.value(w).data(), ckk),
            MatRef::row_major(&cols, bhw),
            0.0,
            &mut tmp,
        );
        let plane = ho * wo;
        let mut out = vec![0.0; batch * out_ch * plane];
        for o in 0..out_ch {
            for b in 0..batch {
                let src = &tmp[o * bhw + b * plane..o * bhw + (b + 1) * plane];
                out[(b * out_ch + o) * plane..(b * out_ch + o + 1) * plane].copy_from_slice(src);
            }
        }
        let rg = self.rg(x) || self.rg(w);
        let value = Tensor::from_vec(&[batch, out_ch, ho, wo], out).unwrap();
        self.push(value, Op::Conv2d { x, w, geom, cols }, rg)
    }

    /// Row-wise log-softmax of a 2-D tensor.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let k = out.cols();
        for row in out.data_mut().chunks_mut(k) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + libm::log(row.iter().map(|v| libm::exp(v - m)).sum::<f64>());
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmax(a), rg)
    }

    /// Row-wise softmax of a 2-D tensor.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        softmax_rows_in_place(out.data_mut(), self.value(a).cols());
        let rg = self.rg(a);
        self.push(out, Op::Softmax(a), rg)
    }

    /// Elementwise `ln(max(a, floor))`; the gradient is zero where clamped.
    pub fn clamp_log(&mut self, a: Var, floor: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v = libm::log(v.max(floor)));
        let rg = self.rg(a);
        self.push(out, Op::ClampLog(a, floor), rg)
    }

    /// Picks `a[i, idx[i]]` from a `[B, K]` tensor, giving `[B]`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let k = av.cols();
        assert_eq!(av.rows(), idx.len(), "gather row count");
        let out: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| av.data()[i * k + j]).collect();
        let rg = self.rg(a);
        let n = out.len();
        self.push(Tensor::from_vec(&[n], out).unwrap(), Op::Gather(a, idx.to_vec()), rg)
    }

    /// Rows `idx` of `a` along the first dimension.
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(av.row(i));
        }
        let mut shape = av.shape().to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        shape[0] = idx.len();
        let rg = self.rg(a);
        self.push(
            Tensor::from_vec(&shape, out).unwrap(),
            Op::SelectRows(a, idx.to_vec()),
            rg,
        )
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            if *v < *o {
                *o = *v;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Minimum(a, b), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// `[B, n1]` and `[B, n2]` side by side.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let rows = av.rows();
        assert_eq!(bv.rows(), rows, "concat row count");
        let (ca, cb) = (av.cols(), bv.cols());
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for i in 0..rows {
            out.extend_from_slice(av.row(i));
            out.extend_from_slice(bv.row(i));
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(
            Tensor::from_vec(&[rows, ca + cb], out).unwrap(),
            Op::ConcatCols(a, b),
            rg,
        )
    }

    /// Scalar `Σ w_i a_i` with constant weights.
    pub fn dot_const(&mut self, a: Var, weights: &[f64]) -> Var {
        let av = self.value(a);
        assert_eq!(av.len(), weights.len(), "dot length");
        let s = av.data().iter().zip(weights).map(|(x, w)| x * w).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Dot(a, weights.to_vec()), rg)
    }

    /// Gradient of the last [`backward`](Self::backward) target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) {
        let n = self.nodes.len();
        self.grads = (0..n).map(|_| None).collect();
        assert_eq!(self.value(loss).len(), 1, "backward target must be a scalar");
        if !self.rg(loss) {
            return;
        }
        self.grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..n).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
    }

    fn acc(&mut self, v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_with(&mut self, v: Var, f: impl FnOnce(&Tensor) -> Tensor) {
        if self.rg(v) {
            let g = f(&self.nodes[v.0].value);
            self.acc(v, g);
        }
    }

    fn propagate(&mut self, i: usize, g: &Tensor) {
        let op = core::mem::replace(&mut self.nodes[i].op, Op::Constant);
        match &op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = (self.value(a).shape()[0], self.value(a).shape()[1]);
                let n = self.value(b).shape()[1];
                if self.rg(a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(
                        m,
                        n,
                        k,
                        MatRef::row_major(g.data(), n),
                        MatRef::transposed(self.value(b).data(), n),
                        0.0,
                        &mut ga,
                    );
                    self.acc(a, Tensor::from_vec(&[m, k], ga).unwrap());
                }
                if self.rg(b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(
                        k,
                        m,
                        n,
                        MatRef::transposed(self.value(a).data(), k),
                        MatRef::row_major(g.data(), n),
                        0.0,
                        &mut gb,
                    );
                    self.acc(b, Tensor::from_vec(&[k, n], gb).unwrap());
                }
            }
            Op::AddRowBias(x, b) => {
                self.acc(*x, g.clone());
                self.acc_with(*b, |bv| {
                    let n = bv.len();
                    let mut gb = Tensor::zeros(bv.shape());
                    for row in g.data().chunks(n) {
                        for (o, v) in gb.data_mut().iter_mut().zip(row) {
                            *o += *v;
                        }
                    }
                    gb
                });
            }
            Op::AddChannelBias(x, b) => {
                self.acc(*x, g.clone());
                let c = g.shape()[1];
                let plane: usize = g.shape()[2..].iter().product();
                self.acc_with(*b, |bv| {
                    let mut gb = Tensor::zeros(bv.shape());
                    for (idx, chunk) in g.data().chunks(plane).enumerate() {
                        gb.data_mut()[idx % c] += chunk.iter().sum::<f64>();
                    }
                    gb
                });
            }
            Op::Add(a, b) => {
                self.acc(*a, g.clone());
                self.acc(*b, g.clone());
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    let ga = zip_map(g, self.value(b), |gv, bv| gv * bv);
                    self.acc(a, ga);
                }
                if self.rg(b) {
                    let gb = zip_map(g, self.value(a), |gv, av| gv * av);
                    self.acc(b, gb);
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                let mut ga = g.clone();
                ga.data_mut().iter_mut().for_each(|v| *v *= s);
                self.acc(*a, ga);
            }
            Op::Relu(a) => {
                let out = &self.nodes[i].value;
                let ga = zip_map(g, out, |gv, ov| if ov > 0.0 { gv } else { 0.0 });
                self.acc(*a, ga);
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.acc(*a, g.clone().reshaped(&shape).unwrap());
            }
            Op::Conv2d { x, w, geom, cols } => {
                let (x, w, geom) = (*x, *w, *geom);
                let plane = geom.ho * geom.wo;
                let bhw = geom.batch * plane;
                let ckk = geom.in_ch * geom.kh * geom.kw;
                let mut gt = vec![0.0; geom.out_ch * bhw];
                for b in 0..geom.batch {
                    for o in 0..geom.out_ch {
                        let src = &g.data()[(b * geom.out_ch + o) * plane..(b * geom.out_ch + o + 1) * plane];
                        gt[o * bhw + b * plane..o * bhw + (b + 1) * plane].copy_from_slice(src);
                    }
                }
                if self.rg(w) {
                    let mut gw = vec![0.0; geom.out_ch * ckk];
                    gemm(
                        geom.out_ch,
                        bhw,
                        ckk,
                        MatRef::row_major(&gt, bhw),
                        MatRef::transposed(cols, bhw),
                        0.0,
                        &mut gw,
                    );
                    let shape = self.value(w).shape().to_vec();
                    self.acc(w, Tensor::from_vec(&shape, gw).unwrap());
                }
                if self.rg(x) {
                    let mut gcols = vec![0.0; ckk * bhw];
                    gemm(
                        ckk,
                        geom.out_ch,
                        bhw,
                        MatRef::transposed(self.value(w).data(), ckk),
                        MatRef::row_major(&gt, bhw),
                        0.0,
                        &mut gcols,
                    );
                    let gx = col2im(&gcols, &geom);
                    let shape = self.value(x).shape().to_vec();
                    self.acc(x, Tensor::from_vec(&shape, gx).unwrap());
                }
            }
            Op::LogSoftmax(a) => {
                let out = &self.nodes[i].value;
                let k = out.cols();
                let mut ga = g.clone();
                for (grow, orow) in ga.data_mut().chunks_mut(k).zip(out.data().chunks(k)) {
                    let s: f64 = grow.iter().sum();
                    for (gv, ov) in grow.iter_mut().zip(orow) {
                        *gv -= libm::exp(*ov) * s;
                    }
                }
                self.acc(*a, ga);
            }
            Op::Softmax(a) => {
                let out = &self.nodes[i].value;
                let k = out.cols();
                let mut ga = g.clone();
                for (grow, orow) in ga.data_mut().chunks_mut(k).zip(out.data().chunks(k)) {
                    let s: f64 = grow.iter().zip(orow).map(|(gv, ov)| gv * ov).sum();
                    for (gv, ov) in grow.iter_mut().zip(orow) {
                        *gv = ov * (*gv - s);
                    }
                }
                self.acc(*a, ga);
            }
            Op::ClampLog(a, floor) => {
                let floor = *floor;
                let ga = zip_map(g, self.value(*a), |gv, av| if av > floor { gv / av } else { 0.0 });
                self.acc(*a, ga);
            }
            Op::Gather(a, idx) => {
                let a = *a;
                self.acc_with(a, |av| {
                    let k = av.cols();
                    let mut ga = Tensor::zeros(av.shape());
                    for (r, &j) in idx.iter().enumerate() {
                        ga.data_mut()[r * k + j] += g.data()[r];
                    }
                    ga
                });
            }
            Op::SelectRows(a, idx) => {
                let a = *a;
                self.acc_with(a, |av| {
                    let c = av.cols();
                    let mut ga = Tensor::zeros(av.shape());
                    for (r, &src) in idx.iter().enumerate() {
                        for t in 0..c {
                            ga.data_mut()[src * c + t] += g.data()[r * c + t];
                        }
                    }
                    ga
                });
            }
            Op::Minimum(a, b) => {
                let (a, b) = (*a, *b);
                let (av, bv) = (self.value(a).clone(), self.value(b).clone());
                if self.rg(a) {
                    let mut ga = g.clone();
                    for ((gv, x), y) in ga.data_mut().iter_mut().zip(av.data()).zip(bv.data()) {
                        if y < x {
                            *gv = 0.0;
                        }
                    }
                    self.acc(a, ga);
                }
                if self.rg(b) {
                    let mut gb = g.clone();
                    for ((gv, x), y) in gb.data_mut().iter_mut().zip(av.data()).zip(bv.data()) {
                        if y >= x {
                            *gv = 0.0;
                        }
                    }
                    self.acc(b, gb);
                }
            }
            Op::Sum(a) => {
                let gv = g.item();
                self.acc_with(*a, |av| Tensor::full(av.shape(), gv));
            }
            Op::Mean(a) => {
                let gv = g.item();
                self.acc_with(*a, |av| Tensor::full(av.shape(), gv / av.len() as f64));
            }
            Op::ConcatCols(a, b) => {
                let (a, b) = (*a, *b);
                let ca = self.value(a).cols();
                let cb = self.value(b).cols();
                let rows = g.rows();
                if self.rg(a) {
                    let mut ga = Vec::with_capacity(rows * ca);
                    for r in 0..rows {
                        ga.extend_from_slice(&g.data()[r * (ca + cb)..r * (ca + cb) + ca]);
                    }
                    let shape = self.value(a).shape().to_vec();
                    self.acc(a, Tensor::from_vec(&shape, ga).unwrap());
                }
                if self.rg(b) {
                    let mut gb = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        gb.extend_from_slice(&g.data()[r * (ca + cb) + ca..(r + 1) * (ca + cb)]);
                    }
                    let shape = self.value(b).shape().to_vec();
                    self.acc(b, Tensor::from_vec(&shape, gb).unwrap());
                }
            }
            Op::Dot(a, w) => {
                let gv = g.item();
                self.acc_with(*a, |av| {
                    let data = w.iter().map(|wv| wv * gv).collect();
                    Tensor::from_vec(av.shape(), data).unwrap()
                });
            }
        }
        self.nodes[i].op = op;
    }

    /// Adds the gradient of every parameter leaf into `store`'s gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &self.grads[i]) {
                store.grad_mut(*id).add_assign(g);
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::from_vec(a.shape(), data).unwrap()
}

pub(crate) fn softmax_rows_in_place(data: &mut [f64], k: usize) {
    for row in data.chunks_mut(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - m);
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let plane = g.ho * g.wo;
    let bhw = g.batch * plane;
    let mut cols = vec![0.0; g.in_ch * g.kh * g.kw * bhw];
    for c in 0..g.in_ch {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst_row = &mut cols[row * bhw..(row + 1) * bhw];
                for b in 0..g.batch {
                    let src = &x[(b * g.in_ch + c) * g.h * g.w..(b * g.in_ch + c + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let base = b * plane + oy * g.wo;
                        let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[base + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let plane = g.ho * g.wo;
    let bhw = g.batch * plane;
    let mut x = vec![0.0; g.batch * g.in_ch * g.h * g.w];
    for c in 0..g.in_ch {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src_row = &cols[row * bhw..(row + 1) * bhw];
                for b in 0..g.batch {
                    let dst = &mut x[(b * g.in_ch + c) * g.h * g.w..(b * g.in_ch + c + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let base = b * plane + oy * g.wo;
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[iy as usize * g.w + ix as usize] += src_row[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central differences of `f` at `x` against the tape gradient.
    fn check(x0: Tensor, f: impl Fn(&mut Graph, Var) -> Var) {
        let mut g = Graph::new();
        let mut store = ParamStore::new();
        let id = store.add("x", x0.clone());
        let x = g.param(&store, id);
        let y = f(&mut g, x);
        g.backward(y);
        let analytic = g.grad(x).unwrap().clone();
        let h = 1e-5;
        for i in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xt = x0.clone();
                xt.data_mut()[i] += delta;
                let mut g = Graph::new();
                let v = g.constant(xt);
                let y = f(&mut g, v);
                g.value(y).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / (1e-8 + a.abs().max(numeric.abs()));
            assert!(
                err < 1e-5 || (a - numeric).abs() < 1e-8,
                "coord {i}: analytic {a} numeric {numeric}"
            );
        }
    }

    #[test]
    fn conv2d_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[2, 3, 5, 4], &mut rng);
        let w = random(&[4, 3, 3, 3], &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let wv = g.constant(w.clone());
        let y = g.conv2d(xv, wv, 2, 1);
        let out = g.value(y);
        assert_eq!(out.shape(), &[2, 4, 3, 2]);
        for b in 0..2 {
            for o in 0..4 {
                for oy in 0..3 {
                    for ox in 0..2 {
                        let mut s = 0.0;
                        for c in 0..3 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * 2 + ky) as isize - 1;
                                    let ix = (ox * 2 + kx) as isize - 1;
                                    if iy >= 0 && iy < 5 && ix >= 0 && ix < 4 {
                                        s += x.data()[((b * 3 + c) * 5 + iy as usize) * 4 + ix as usize]
                                            * w.data()[((o * 3 + c) * 3 + ky) * 3 + kx];
                                    }
                                }
                            }
                        }
                        let got = out.data()[((b * 4 + o) * 3 + oy) * 2 + ox];
                        assert!((got - s).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random(&[2, 2, 3, 3], &mut rng);
        let probe = random(&[2, 2, 2, 2], &mut rng);
        let x = random(&[2, 2, 4, 4], &mut rng);
        {
            let (w, probe) = (w.clone(), probe.clone());
            check(x.clone(), move |g, xv| {
                let wv = g.constant(w.clone());
                let y = g.conv2d(xv, wv, 2, 1);
                g.dot_const(y, probe.data())
            });
        }
        check(w, move |g, wv| {
            let xv = g.constant(x.clone());
            let y = g.conv2d(xv, wv, 2, 1);
            g.dot_const(y, probe.data())
        });
    }

    #[test]
    fn elementwise_and_reduction_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[3, 4], &mut rng);
        let other = random(&[3, 4], &mut rng);
        let m = random(&[4, 2], &mut rng);
        let probe = random(&[3, 2], &mut rng);
        check(x.clone(), |g, v| {
            let s = g.softmax(v);
            let l = g.clamp_log(s, 1e-12);
            g.mean(l)
        });
        check(x.clone(), |g, v| {
            let l = g.log_softmax(v);
            let p = g.gather(l, &[1, 3, 0]);
            g.sum(p)
        });
        {
            let other = other.clone();
            check(x.clone(), move |g, v| {
                let o = g.constant(other.clone());
                let mn = g.minimum(v, o);
                let r = g.relu(mn);
                let sel = g.select_rows(r, &[2, 0, 2]);
                g.sum(sel)
            });
        }
        {
            let (m, probe) = (m.clone(), probe.clone());
            check(x.clone(), move |g, v| {
                let mv = g.constant(m.clone());
                let y = g.matmul(v, mv);
                g.dot_const(y, probe.data())
            });
        }
        check(m, move |g, mv| {
            let xv = g.constant(x.clone());
            let y = g.matmul(xv, mv);
            let c = g.concat_cols(y, xv);
            let sq = g.mul(c, c);
            let sc = g.scale(sq, 0.5);
            g.mean(sc)
        });
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let mut g = Graph::new();
        let p = g.param(&store, id);
        let d = g.detach(p);
        let y = g.mul(d, d);
        let s = g.sum(y);
        g.backward(s);
        g.accumulate_into(&mut store);
        assert!(store.grad(id).data().iter().all(|v| *v == 0.0));
    }
}
