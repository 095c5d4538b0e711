//! Layers built on the autodiff graph.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::kernels::ConvGeom;
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

pub const DEFAULT_NEGATIVE_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// Weight `(out, in, kh, kw)`, bias `(out)`.
    Conv2d { weight: ParamId, bias: ParamId, geom: ConvGeom },
    /// Weight `(in, out, kh, kw)`, bias `(out)`.
    ConvTranspose2d { weight: ParamId, bias: ParamId, geom: ConvGeom, extra: (usize, usize) },
    LeakyRelu { slope: f64 },
    /// Per-channel `x·scale + shift`.
    ScaleShift { scale: ParamId, shift: ParamId },
    Upsample { fh: usize, fw: usize },
    MaxPool { k: usize },
    /// Weight `(out, in)`, bias `(out)`.
    Linear { weight: ParamId, bias: ParamId },
    /// Centre crop / zero pad of the spatial axes.
    Fit { h: usize, w: usize },
}

/// Uniform initialisation in `±√(1/fan_in)`.
pub fn uniform_init<T: Real, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = libm::sqrt(1.0 / fan_in.max(1) as f64);
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..=bound)))
}

impl Layer {
    pub fn conv2d<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
    ) -> Self {
        let fan_in = cin * geom.kh * geom.kw;
        let weight = store.add(format!("{name}.weight"), uniform_init(rng, &[cout, cin, geom.kh, geom.kw], fan_in));
        let bias = store.add(format!("{name}.bias"), uniform_init(rng, &[cout], fan_in));
        Layer::Conv2d { weight, bias, geom }
    }

    /// Conv layer whose weights and bias start at zero.
    pub fn conv2d_zeros<T: Real>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, geom: ConvGeom) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(&[cout, cin, geom.kh, geom.kw]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Layer::Conv2d { weight, bias, geom }
    }

    pub fn conv_transpose2d<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
        extra: (usize, usize),
    ) -> Self {
        let fan_in = cin * geom.kh.div_ceil(geom.sh) * geom.kw.div_ceil(geom.sw);
        let weight = store.add(format!("{name}.weight"), uniform_init(rng, &[cin, cout, geom.kh, geom.kw], fan_in));
        let bias = store.add(format!("{name}.bias"), uniform_init(rng, &[cout], fan_in));
        Layer::ConvTranspose2d { weight, bias, geom, extra }
    }

    pub fn linear<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, din: usize, dout: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), uniform_init(rng, &[dout, din], din));
        let bias = store.add(format!("{name}.bias"), uniform_init(rng, &[dout], din));
        Layer::Linear { weight, bias }
    }

    pub fn scale_shift<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let scale = store.add(format!("{name}.scale"), Tensor::full(&[channels], T::one()));
        let shift = store.add(format!("{name}.shift"), Tensor::zeros(&[channels]));
        Layer::ScaleShift { scale, shift }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match *self {
            Layer::Conv2d { weight, bias, .. }
            | Layer::ConvTranspose2d { weight, bias, .. }
            | Layer::Linear { weight, bias } => alloc::vec![weight, bias],
            Layer::ScaleShift { scale, shift } => alloc::vec![scale, shift],
            _ => Vec::new(),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        match *self {
            Layer::Conv2d { weight, bias, geom } => {
                let w = g.param(store, weight);
                let b = g.param(store, bias);
                g.conv2d(x, w, Some(b), geom)
            }
            Layer::ConvTranspose2d { weight, bias, geom, extra } => {
                let w = g.param(store, weight);
                let b = g.param(store, bias);
                g.conv_transpose2d(x, w, Some(b), geom, extra)
            }
            Layer::LeakyRelu { slope } => Ok(g.leaky_relu(x, T::of(slope))),
            Layer::ScaleShift { scale, shift } => {
                let s = g.param(store, scale);
                let t = g.param(store, shift);
                g.scale_shift(x, s, t)
            }
            Layer::Upsample { fh, fw } => g.upsample(x, fh, fw),
            Layer::MaxPool { k } => g.max_pool(x, k),
            Layer::Linear { weight, bias } => {
                let w = g.param(store, weight);
                let b = g.param(store, bias);
                g.linear(x, w, Some(b))
            }
            Layer::Fit { h, w } => g.fit(x, h, w),
        }
    }

    /// Evaluates the layer on a concrete tensor without recording gradients.
    pub fn apply<T: Real>(&self, store: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(input);
        let y = self.forward(&mut g, store, x)?;
        Ok(g.tensor(y))
    }
}

/// Layers applied in order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new() -> Self {
        Sequential { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, mut x: Var) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(g, store, x)?;
        }
        Ok(x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Layer::params).collect()
    }
}
