//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every op applied during a forward pass together with
//! its output value. [`Graph::backward`] walks the tape in reverse and fills
//! gradient buffers for every node that (transitively) depends on a value
//! with `requires_grad`. Parameters enter the tape through [`Graph::param`];
//! after backward their gradients are pushed into the owning
//! [`ParamStore`] with [`Graph::write_param_grads`].
//!
//! Gradient policy: a graph can be differentiated once. A second call to
//! `backward` fails until [`Graph::reset_grads`] clears the buffers.
//! Parameter gradients accumulate in the store and are zeroed explicitly by
//! the caller (the trainer does so every step).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{col2im, gemm_nn, gemm_nt, gemm_tn, im2col, ConvGeom};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Option<Var>, g: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, g: ConvGeom },
    LeakyRelu { x: Var, slope: T },
    ScaleShift { x: Var, scale: Var, shift: Var },
    Upsample { x: Var, fh: usize, fw: usize },
    MaxPool { x: Var, argmax: Vec<usize> },
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Concat(Var, Var),
    Narrow { x: Var, start: usize },
    Fit { x: Var },
    Reshape(Var),
    MeanAbs(Var),
    MeanSq(Var),
    Sum(Var),
}

#[derive(Clone, Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    differentiated: bool,
}

fn dims4(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::ShapeMismatch { op, expected: vec![0, 0, 0, 0], found: shape.to_vec() }),
    }
}

fn offset(from: usize, to: usize) -> isize {
    (from as isize - to as isize) / 2
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), differentiated: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node { shape, value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a tensor as a leaf; it is differentiated iff `t.requires_grad`.
    pub fn input(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad)
    }

    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    /// Records a parameter snapshot. Its gradient is routed back by [`Graph::write_param_grads`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let t = store.get(id);
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Param(id), t.requires_grad)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("graph node holds a consistent tensor")
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    // ── ops ──────────────────────────────────────────────────────────────

    /// Cross-correlation of `x (N,Cin,H,W)` with `w (Cout,Cin,kh,kw)` plus optional bias `(Cout)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, g: ConvGeom) -> Result<Var> {
        let (n, cin, h, wd) = dims4("conv2d", self.shape(x))?;
        let (cout, wcin, kh, kw) = dims4("conv2d", self.shape(w))?;
        if (kh, kw) != (g.kh, g.kw) {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                expected: vec![cout, wcin, g.kh, g.kw],
                found: self.shape(w).to_vec(),
            });
        }
        if wcin != cin {
            return Err(Error::ChannelMismatch { op: "conv2d", expected: wcin, found: cin });
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::ShapeMismatch { op: "conv2d", expected: vec![cout], found: self.shape(b).to_vec() });
            }
        }
        let (ho, wo) = g.conv_out(h, wd).ok_or(Error::EmptyOutput { op: "conv2d" })?;
        let (p, k) = (ho * wo, cin * kh * kw);
        let mut out = vec![T::zero(); n * cout * p];
        let mut cols = vec![T::zero(); k * p];
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        for s in 0..n {
            im2col(&xv[s * cin * h * wd..(s + 1) * cin * h * wd], (cin, h, wd), &g, (ho, wo), &mut cols);
            let o = &mut out[s * cout * p..(s + 1) * cout * p];
            if let Some(b) = b {
                let bv = &self.nodes[b.0].value;
                for (co, chunk) in o.chunks_mut(p).enumerate() {
                    chunk.iter_mut().for_each(|v| *v = bv[co]);
                }
            }
            gemm_nn(cout, p, k, wv, &cols, o);
        }
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.rg(&[b]));
        Ok(self.push(vec![n, cout, ho, wo], out, Op::Conv2d { x, w, b, g }, rg))
    }

    /// Transposed convolution of `x (N,Cin,H,W)` with `w (Cin,Cout,kh,kw)`.
    /// `extra` adds trailing output rows/cols (output padding), each `< stride`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        g: ConvGeom,
        extra: (usize, usize),
    ) -> Result<Var> {
        let (n, cin, h, wd) = dims4("conv_transpose2d", self.shape(x))?;
        let (wcin, cout, kh, kw) = dims4("conv_transpose2d", self.shape(w))?;
        if (kh, kw) != (g.kh, g.kw) {
            return Err(Error::ShapeMismatch {
                op: "conv_transpose2d",
                expected: vec![wcin, cout, g.kh, g.kw],
                found: self.shape(w).to_vec(),
            });
        }
        if wcin != cin {
            return Err(Error::ChannelMismatch { op: "conv_transpose2d", expected: wcin, found: cin });
        }
        if extra.0 >= g.sh.max(1) || extra.1 >= g.sw.max(1) {
            return Err(Error::InvalidConfig("output padding must be smaller than the stride".into()));
        }
        let (ho, wo) = g.transpose_out(h, wd, extra.0, extra.1).ok_or(Error::EmptyOutput { op: "conv_transpose2d" })?;
        debug_assert_eq!(g.conv_out(ho, wo), Some((h, wd)));
        let (pin, k) = (h * wd, cout * kh * kw);
        let mut out = vec![T::zero(); n * cout * ho * wo];
        let mut cols = vec![T::zero(); k * pin];
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        for s in 0..n {
            cols.iter_mut().for_each(|v| *v = T::zero());
            gemm_tn(k, pin, cin, wv, &xv[s * cin * pin..(s + 1) * cin * pin], &mut cols);
            let o = &mut out[s * cout * ho * wo..(s + 1) * cout * ho * wo];
            col2im(&cols, (cout, ho, wo), &g, (h, wd), o);
            if let Some(b) = b {
                let bv = &self.nodes[b.0].value;
                for (co, chunk) in o.chunks_mut(ho * wo).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bv[co]);
                }
            }
        }
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.rg(&[b]));
        Ok(self.push(vec![n, cout, ho, wo], out, Op::ConvTranspose2d { x, w, b, g }, rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = self.value(x).iter().map(|&v| if v > T::zero() { v } else { v * slope }).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::LeakyRelu { x, slope }, rg)
    }

    /// Per-channel affine map `x·scale[c] + shift[c]` on `(N,C,H,W)`.
    pub fn scale_shift(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let (_, c, h, w) = dims4("scale_shift", self.shape(x))?;
        for v in [scale, shift] {
            if self.shape(v) != [c] {
                return Err(Error::ShapeMismatch { op: "scale_shift", expected: vec![c], found: self.shape(v).to_vec() });
            }
        }
        let hw = h * w;
        let (sv, tv) = (self.value(scale), self.value(shift));
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / hw) % c;
                v * sv[ch] + tv[ch]
            })
            .collect();
        let rg = self.rg(&[x, scale, shift]);
        Ok(self.push(self.shape(x).to_vec(), out, Op::ScaleShift { x, scale, shift }, rg))
    }

    /// Nearest-neighbour upsampling by integer factors.
    pub fn upsample(&mut self, x: Var, fh: usize, fw: usize) -> Result<Var> {
        let (n, c, h, w) = dims4("upsample", self.shape(x))?;
        if fh == 0 || fw == 0 {
            return Err(Error::EmptyOutput { op: "upsample" });
        }
        let (ho, wo) = (h * fh, w * fw);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in xv.chunks(h * w) {
            for oy in 0..ho {
                let row = &plane[(oy / fh) * w..(oy / fh + 1) * w];
                for ox in 0..wo {
                    out.push(row[ox / fw]);
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![n, c, ho, wo], out, Op::Upsample { x, fh, fw }, rg))
    }

    /// Max pooling with a square window `k` and stride `k` (trailing cells dropped).
    pub fn max_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let (n, c, h, w) = dims4("max_pool", self.shape(x))?;
        if k == 0 || h < k || w < k {
            return Err(Error::EmptyOutput { op: "max_pool" });
        }
        let (ho, wo) = (h / k, w / k);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for (pi, plane) in xv.chunks(h * w).enumerate() {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = oy * k * w + ox * k;
                    for dy in 0..k {
                        for dx in 0..k {
                            let idx = (oy * k + dy) * w + ox * k + dx;
                            if plane[idx] > plane[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(plane[best]);
                    argmax.push(pi * h * w + best);
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![n, c, ho, wo], out, Op::MaxPool { x, argmax }, rg))
    }

    /// `x (N,in) · wᵀ + b` with `w (out,in)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, din) = match *self.shape(x) {
            [n, d] => (n, d),
            _ => return Err(Error::ShapeMismatch { op: "linear", expected: vec![0, 0], found: self.shape(x).to_vec() }),
        };
        let (dout, win) = match *self.shape(w) {
            [o, i] => (o, i),
            _ => return Err(Error::ShapeMismatch { op: "linear", expected: vec![0, din], found: self.shape(w).to_vec() }),
        };
        if win != din {
            return Err(Error::ChannelMismatch { op: "linear", expected: win, found: din });
        }
        let mut out = vec![T::zero(); n * dout];
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::ShapeMismatch { op: "linear", expected: vec![dout], found: self.shape(b).to_vec() });
            }
            let bv = self.value(b);
            out.chunks_mut(dout).for_each(|row| row.copy_from_slice(bv));
        }
        gemm_nt(n, dout, din, self.value(x), self.value(w), &mut out);
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.rg(&[b]));
        Ok(self.push(vec![n, dout], out, Op::Linear { x, w, b }, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch { op, expected: self.shape(a).to_vec(), found: self.shape(b).to_vec() });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Sub(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).iter().map(|&x| x * c).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, c), rg)
    }

    /// Channel-axis concatenation of two `(N,·,H,W)` tensors.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = dims4("concat", self.shape(a))?;
        let (nb, cb, hb, wb) = dims4("concat", self.shape(b))?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::ShapeMismatch { op: "concat", expected: vec![n, cb, h, w], found: self.shape(b).to_vec() });
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for s in 0..n {
            out.extend_from_slice(&self.value(a)[s * ca * hw..(s + 1) * ca * hw]);
            out.extend_from_slice(&self.value(b)[s * cb * hw..(s + 1) * cb * hw]);
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![n, ca + cb, h, w], out, Op::Concat(a, b), rg))
    }

    /// Channels `start..start+len` of a `(N,C,H,W)` tensor.
    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c, h, w) = dims4("narrow", self.shape(x))?;
        if len == 0 || start + len > c {
            return Err(Error::EmptyOutput { op: "narrow" });
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * len * hw);
        for s in 0..n {
            out.extend_from_slice(&self.value(x)[(s * c + start) * hw..(s * c + start + len) * hw]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![n, len, h, w], out, Op::Narrow { x, start }, rg))
    }

    /// Centre-crops or zero-pads the spatial axes to `(h, w)`.
    pub fn fit(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (n, c, hi, wi) = dims4("fit", self.shape(x))?;
        if h == 0 || w == 0 {
            return Err(Error::EmptyOutput { op: "fit" });
        }
        if (h, w) == (hi, wi) {
            let v = self.value(x).to_vec();
            let rg = self.rg(&[x]);
            return Ok(self.push(vec![n, c, h, w], v, Op::Fit { x }, rg));
        }
        let (oy, ox) = (offset(hi, h), offset(wi, w));
        let xv = self.value(x);
        let mut out = vec![T::zero(); n * c * h * w];
        for (plane, dst) in xv.chunks(hi * wi).zip(out.chunks_mut(h * w)) {
            for r in 0..h {
                let sr = r as isize + oy;
                if sr < 0 || sr >= hi as isize {
                    continue;
                }
                for q in 0..w {
                    let sq = q as isize + ox;
                    if sq >= 0 && sq < wi as isize {
                        dst[r * w + q] = plane[sr as usize * wi + sq as usize];
                    }
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![n, c, h, w], out, Op::Fit { x }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() {
            return Err(Error::ShapeMismatch { op: "reshape", expected: shape.to_vec(), found: self.shape(x).to_vec() });
        }
        let v = self.value(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(shape.to_vec(), v, Op::Reshape(x), rg))
    }

    fn mean_of(&self, x: Var, f: impl Fn(T) -> T) -> T {
        let v = self.value(x);
        let s: f64 = v.iter().map(|&a| f(a).as_f64()).sum();
        T::of(s / v.len() as f64)
    }

    /// Mean absolute value over all elements (accumulated in f64).
    pub fn mean_abs(&mut self, x: Var) -> Var {
        let m = self.mean_of(x, |a| a.abs());
        let rg = self.rg(&[x]);
        self.push(Vec::new(), vec![m], Op::MeanAbs(x), rg)
    }

    /// Mean square over all elements (accumulated in f64).
    pub fn mean_sq(&mut self, x: Var) -> Var {
        let m = self.mean_of(x, |a| a * a);
        let rg = self.rg(&[x]);
        self.push(Vec::new(), vec![m], Op::MeanSq(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).iter().map(|a| a.as_f64()).sum();
        let rg = self.rg(&[x]);
        self.push(Vec::new(), vec![T::of(s)], Op::Sum(x), rg)
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Clears every gradient buffer so the graph can be differentiated again.
    pub fn reset_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.differentiated = false;
    }

    fn grad_buf(&mut self, v: Var) -> Option<&mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if let Some(buf) = self.grad_buf(v) {
            f(buf);
        }
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.differentiated {
            return Err(Error::AlreadyBackpropagated);
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NotScalar(self.shape(loss).to_vec()));
        }
        self.differentiated = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g);
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[T]) {
        let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d { x, w, b, g: geom } => self.conv2d_backward(i, *x, *w, *b, geom, g),
            Op::ConvTranspose2d { x, w, b, g: geom } => self.conv_t_backward(i, *x, *w, *b, geom, g),
            Op::LeakyRelu { x, slope } => {
                let xv = self.nodes[x.0].value.clone();
                let slope = *slope;
                self.accumulate(*x, |d| {
                    for ((d, &gv), &v) in d.iter_mut().zip(g).zip(&xv) {
                        *d += if v > T::zero() { gv } else { gv * slope };
                    }
                });
            }
            Op::ScaleShift { x, scale, shift } => {
                let (_, c, h, w) = dims4("scale_shift", &self.nodes[x.0].shape).unwrap();
                let hw = h * w;
                let xv = self.nodes[x.0].value.clone();
                let sv = self.nodes[scale.0].value.clone();
                self.accumulate(*x, |d| {
                    for (k, (d, &gv)) in d.iter_mut().zip(g).enumerate() {
                        *d += gv * sv[(k / hw) % c];
                    }
                });
                self.accumulate(*scale, |d| {
                    for (k, (&gv, &v)) in g.iter().zip(&xv).enumerate() {
                        d[(k / hw) % c] += gv * v;
                    }
                });
                self.accumulate(*shift, |d| {
                    for (k, &gv) in g.iter().enumerate() {
                        d[(k / hw) % c] += gv;
                    }
                });
            }
            Op::Upsample { x, fh, fw } => {
                let (_, _, h, w) = dims4("upsample", &self.nodes[x.0].shape).unwrap();
                let (fh, fw) = (*fh, *fw);
                let (ho, wo) = (h * fh, w * fw);
                self.accumulate(*x, |d| {
                    for (plane, gp) in d.chunks_mut(h * w).zip(g.chunks(ho * wo)) {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                plane[(oy / fh) * w + ox / fw] += gp[oy * wo + ox];
                            }
                        }
                    }
                });
            }
            Op::MaxPool { x, argmax } => {
                self.accumulate(*x, |d| {
                    for (&src, &gv) in argmax.iter().zip(g) {
                        d[src] += gv;
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let (n, din) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                let dout = self.nodes[w.0].shape[0];
                if self.nodes[x.0].requires_grad {
                    let wv = self.nodes[w.0].value.clone();
                    self.accumulate(*x, |d| gemm_nn(n, din, dout, g, &wv, d));
                }
                if self.nodes[w.0].requires_grad {
                    let xv = self.nodes[x.0].value.clone();
                    self.accumulate(*w, |d| gemm_tn(dout, din, n, g, &xv, d));
                }
                if let Some(b) = b {
                    self.accumulate(*b, |d| {
                        for row in g.chunks(dout) {
                            d.iter_mut().zip(row).for_each(|(a, &r)| *a += r);
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, |d| d.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
                self.accumulate(*b, |d| d.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, |d| d.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
                self.accumulate(*b, |d| d.iter_mut().zip(g).for_each(|(x, &y)| *x -= y));
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(*a, |d| d.iter_mut().zip(g).for_each(|(x, &y)| *x += y * c));
            }
            Op::Concat(a, b) => {
                let (n, ca, h, w) = dims4("concat", &self.nodes[a.0].shape).unwrap();
                let cb = self.nodes[b.0].shape[1];
                let hw = h * w;
                let stride = (ca + cb) * hw;
                self.accumulate(*a, |d| {
                    for s in 0..n {
                        let src = &g[s * stride..s * stride + ca * hw];
                        d[s * ca * hw..(s + 1) * ca * hw].iter_mut().zip(src).for_each(|(x, &y)| *x += y);
                    }
                });
                self.accumulate(*b, |d| {
                    for s in 0..n {
                        let src = &g[s * stride + ca * hw..(s + 1) * stride];
                        d[s * cb * hw..(s + 1) * cb * hw].iter_mut().zip(src).for_each(|(x, &y)| *x += y);
                    }
                });
            }
            Op::Narrow { x, start } => {
                let (n, c, h, w) = dims4("narrow", &self.nodes[x.0].shape).unwrap();
                let len = self.nodes[i].shape[1];
                let hw = h * w;
                let start = *start;
                self.accumulate(*x, |d| {
                    for s in 0..n {
                        let dst = &mut d[(s * c + start) * hw..(s * c + start + len) * hw];
                        dst.iter_mut().zip(&g[s * len * hw..(s + 1) * len * hw]).for_each(|(x, &y)| *x += y);
                    }
                });
            }
            Op::Fit { x } => {
                let (_, _, hi, wi) = dims4("fit", &self.nodes[x.0].shape).unwrap();
                let (h, w) = (self.nodes[i].shape[2], self.nodes[i].shape[3]);
                let (oy, ox) = (offset(hi, h), offset(wi, w));
                self.accumulate(*x, |d| {
                    for (plane, gp) in d.chunks_mut(hi * wi).zip(g.chunks(h * w)) {
                        for r in 0..h {
                            let sr = r as isize + oy;
                            if sr < 0 || sr >= hi as isize {
                                continue;
                            }
                            for q in 0..w {
                                let sq = q as isize + ox;
                                if sq >= 0 && sq < wi as isize {
                                    plane[sr as usize * wi + sq as usize] += gp[r * w + q];
                                }
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                self.accumulate(*x, |d| d.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
            }
            Op::MeanAbs(x) => {
                let xv = self.nodes[x.0].value.clone();
                let scale = g[0] / T::of(xv.len() as f64);
                self.accumulate(*x, |d| {
                    for (d, &v) in d.iter_mut().zip(&xv) {
                        if v > T::zero() {
                            *d += scale;
                        } else if v < T::zero() {
                            *d -= scale;
                        }
                    }
                });
            }
            Op::MeanSq(x) => {
                let xv = self.nodes[x.0].value.clone();
                let scale = g[0] * T::of(2.0) / T::of(xv.len() as f64);
                self.accumulate(*x, |d| d.iter_mut().zip(&xv).for_each(|(d, &v)| *d += scale * v));
            }
            Op::Sum(x) => {
                let g0 = g[0];
                self.accumulate(*x, |d| d.iter_mut().for_each(|d| *d += g0));
            }
        }
        self.nodes[i].op = op;
    }

    fn conv2d_backward(&mut self, i: usize, x: Var, w: Var, b: Option<Var>, geom: &ConvGeom, g: &[T]) {
        let (n, cin, h, wd) = dims4("conv2d", &self.nodes[x.0].shape).unwrap();
        let cout = self.nodes[w.0].shape[0];
        let (ho, wo) = (self.nodes[i].shape[2], self.nodes[i].shape[3]);
        let (p, k) = (ho * wo, cin * geom.kh * geom.kw);
        let need_x = self.nodes[x.0].requires_grad;
        let need_w = self.nodes[w.0].requires_grad;
        let mut cols = vec![T::zero(); k * p];
        let mut dw = if need_w { vec![T::zero(); cout * k] } else { Vec::new() };
        let mut dx = if need_x { vec![T::zero(); n * cin * h * wd] } else { Vec::new() };
        {
            let xv = &self.nodes[x.0].value;
            let wv = &self.nodes[w.0].value;
            for s in 0..n {
                let gs = &g[s * cout * p..(s + 1) * cout * p];
                if need_w {
                    im2col(&xv[s * cin * h * wd..(s + 1) * cin * h * wd], (cin, h, wd), geom, (ho, wo), &mut cols);
                    gemm_nt(cout, k, p, gs, &cols, &mut dw);
                }
                if need_x {
                    cols.iter_mut().for_each(|v| *v = T::zero());
                    gemm_tn(k, p, cout, wv, gs, &mut cols);
                    col2im(&cols, (cin, h, wd), geom, (ho, wo), &mut dx[s * cin * h * wd..(s + 1) * cin * h * wd]);
                }
            }
        }
        if need_w {
            self.accumulate(w, |d| d.iter_mut().zip(&dw).for_each(|(a, &b)| *a += b));
        }
        if need_x {
            self.accumulate(x, |d| d.iter_mut().zip(&dx).for_each(|(a, &b)| *a += b));
        }
        if let Some(b) = b {
            self.accumulate(b, |d| {
                for (c, chunk) in g.chunks(p).enumerate() {
                    d[c % cout] += chunk.iter().copied().sum::<T>();
                }
            });
        }
    }

    fn conv_t_backward(&mut self, i: usize, x: Var, w: Var, b: Option<Var>, geom: &ConvGeom, g: &[T]) {
        let (n, cin, h, wd) = dims4("conv_transpose2d", &self.nodes[x.0].shape).unwrap();
        let cout = self.nodes[w.0].shape[1];
        let (ho, wo) = (self.nodes[i].shape[2], self.nodes[i].shape[3]);
        let (pin, k) = (h * wd, cout * geom.kh * geom.kw);
        let need_x = self.nodes[x.0].requires_grad;
        let need_w = self.nodes[w.0].requires_grad;
        let mut cols = vec![T::zero(); k * pin];
        let mut dw = if need_w { vec![T::zero(); cin * k] } else { Vec::new() };
        let mut dx = if need_x { vec![T::zero(); n * cin * pin] } else { Vec::new() };
        {
            let xv = &self.nodes[x.0].value;
            let wv = &self.nodes[w.0].value;
            for s in 0..n {
                let gs = &g[s * cout * ho * wo..(s + 1) * cout * ho * wo];
                im2col(gs, (cout, ho, wo), geom, (h, wd), &mut cols);
                if need_x {
                    gemm_nn(cin, pin, k, wv, &cols, &mut dx[s * cin * pin..(s + 1) * cin * pin]);
                }
                if need_w {
                    gemm_nt(cin, k, pin, &xv[s * cin * pin..(s + 1) * cin * pin], &cols, &mut dw);
                }
            }
        }
        if need_w {
            self.accumulate(w, |d| d.iter_mut().zip(&dw).for_each(|(a, &b)| *a += b));
        }
        if need_x {
            self.accumulate(x, |d| d.iter_mut().zip(&dx).for_each(|(a, &b)| *a += b));
        }
        if let Some(b) = b {
            self.accumulate(b, |d| {
                for (c, chunk) in g.chunks(ho * wo).enumerate() {
                    d[c % cout] += chunk.iter().copied().sum::<T>();
                }
            });
        }
    }

    /// Adds the gradient of every parameter leaf into its store entry.
    /// Parameters with `requires_grad == false` are skipped.
    pub fn write_param_grads(&self, store: &mut ParamStore<T>) {
        for (node, grad) in self.nodes.iter().zip(&self.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, grad) {
                let t = store.get_mut(*id);
                if t.requires_grad {
                    t.accumulate_grad(g);
                }
            }
        }
    }
}
