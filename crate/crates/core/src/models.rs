//! Encoder/decoder pairs, latent translators and the composed forward/inverse model.
//!
//! `predict_forward = D_p ∘ L(v→p) ∘ E_v` and `predict_inverse = D_v ∘ L(p→v) ∘ E_p`.
//! Both pairs map into a latent of the same `(C, h, w)` shape, so every
//! translator kind can sit between them.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::ConvGeom;
use crate::nn::{Layer, Sequential, DEFAULT_NEGATIVE_SLOPE};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

pub type Shape3 = [usize; 3];

/// Largest weight matrix a linear translator may allocate.
pub const LINEAR_MAX_WEIGHTS: usize = 1 << 26;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Velocity,
    Waveform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Velocity to waveform (the forward problem).
    #[serde(rename = "forward")]
    Forward,
    /// Waveform to velocity (the inverse problem).
    #[serde(rename = "inverse")]
    Inverse,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Inverse => "inverse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "forward" | "v2p" => Some(Direction::Forward),
            "inverse" | "p2v" => Some(Direction::Inverse),
            _ => None,
        }
    }

    /// Domain of the prediction target.
    pub fn target(self) -> Domain {
        match self {
            Direction::Forward => Domain::Waveform,
            Direction::Inverse => Domain::Velocity,
        }
    }

    pub fn source(self) -> Domain {
        match self {
            Direction::Forward => Domain::Velocity,
            Direction::Inverse => Domain::Waveform,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    ForwardOnly,
    InverseOnly,
    /// Separate translators for each direction.
    Disjoint,
    /// One shared coupling translator serving both directions.
    Joint,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::ForwardOnly => "forward-only",
            Mode::InverseOnly => "inverse-only",
            Mode::Disjoint => "disjoint",
            Mode::Joint => "joint",
        }
    }

    pub fn supports(self, d: Direction) -> bool {
        !matches!((self, d), (Mode::ForwardOnly, Direction::Inverse) | (Mode::InverseOnly, Direction::Forward))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TranslatorSpec {
    Identity,
    Linear,
    Unet { depth: usize, base_channels: usize, skip_connections: bool },
    Coupling { n_blocks: usize, hidden_channels: usize, zero_init: bool },
}

/// Channel plan of the encoder/decoder convolution stacks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSpec {
    pub base_channels: usize,
    pub max_channels: usize,
}

impl PairSpec {
    fn channels(&self, stage: usize) -> usize {
        (self.base_channels << stage.min(16)).min(self.max_channels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    InversionNet,
    AutoLinear,
    LatentUnetSmall,
    LatentUnetLarge,
    InvertibleXnet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::InversionNet,
        ModelKind::AutoLinear,
        ModelKind::LatentUnetSmall,
        ModelKind::LatentUnetLarge,
        ModelKind::InvertibleXnet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::InversionNet => "inversion-net",
            ModelKind::AutoLinear => "auto-linear",
            ModelKind::LatentUnetSmall => "latent-unet-small",
            ModelKind::LatentUnetLarge => "latent-unet-large",
            ModelKind::InvertibleXnet => "invertible-xnet",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Desk,
    Full,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "desk" => Some(Preset::Desk),
            "full" => Some(Preset::Full),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub velocity_shape: Shape3,
    pub waveform_shape: Shape3,
    pub latent: Shape3,
    pub pair: PairSpec,
    pub translator: TranslatorSpec,
    pub mode: Mode,
    pub seed: u64,
}

impl ModelConfig {
    pub fn preset(kind: ModelKind, preset: Preset, mode: Mode, seed: u64) -> Self {
        let (velocity_shape, waveform_shape, mut latent, pair) = match preset {
            Preset::Desk => ([1, 32, 32], [3, 250, 32], [16, 8, 8], PairSpec { base_channels: 8, max_channels: 16 }),
            Preset::Full => ([1, 70, 70], [5, 1000, 70], [128, 70, 70], PairSpec { base_channels: 16, max_channels: 64 }),
        };
        let wide = preset == Preset::Full;
        let translator = match kind {
            ModelKind::InversionNet => TranslatorSpec::Identity,
            ModelKind::AutoLinear => {
                if wide {
                    latent = [16, 16, 16];
                }
                TranslatorSpec::Linear
            }
            ModelKind::LatentUnetSmall => {
                TranslatorSpec::Unet { depth: 2, base_channels: if wide { 32 } else { 16 }, skip_connections: true }
            }
            ModelKind::LatentUnetLarge => {
                TranslatorSpec::Unet { depth: 2, base_channels: if wide { 64 } else { 32 }, skip_connections: true }
            }
            ModelKind::InvertibleXnet => TranslatorSpec::Coupling {
                n_blocks: 4,
                hidden_channels: if wide { 128 } else { 32 },
                zero_init: false,
            },
        };
        ModelConfig { kind, velocity_shape, waveform_shape, latent, pair, translator, mode, seed }
    }

    pub fn domain_shape(&self, d: Domain) -> Shape3 {
        match d {
            Domain::Velocity => self.velocity_shape,
            Domain::Waveform => self.waveform_shape,
        }
    }
}

fn lrelu() -> Layer {
    Layer::LeakyRelu { slope: DEFAULT_NEGATIVE_SLOPE }
}

fn halvings(mut from: usize, to: usize) -> usize {
    let mut n = 0;
    while from > to {
        from = from.div_ceil(2);
        n += 1;
    }
    n
}

fn doublings(mut from: usize, to: usize) -> usize {
    let mut n = 0;
    while from < to {
        from *= 2;
        n += 1;
    }
    n
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderDecoderPair {
    pub domain: Domain,
    pub shape: Shape3,
    pub latent: Shape3,
    pub encoder: Sequential,
    pub decoder: Sequential,
}

impl EncoderDecoderPair {
    /// Strided 3×3 convolutions halve an axis until it reaches the latent size
    /// (waveforms get more halvings along time). Decoding mirrors this with
    /// 4×4 stride-2 transposed convolutions, then crops to the domain shape.
    pub fn build<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        domain: Domain,
        shape: Shape3,
        latent: Shape3,
        spec: PairSpec,
    ) -> Result<Self> {
        if shape.contains(&0) || latent.contains(&0) || spec.base_channels == 0 || spec.max_channels == 0 {
            return Err(Error::InvalidConfig(format!("{prefix}: empty shape or channel count")));
        }
        let [c_in, h, w] = shape;
        let [c_lat, lh, lw] = latent;

        let mut encoder = Sequential::new();
        let (nh, nw) = (halvings(h, lh), halvings(w, lw));
        let stages = nh.max(nw).max(1);
        let (mut ch, mut cur) = (c_in, (h, w));
        for i in 0..stages {
            let (sh, sw) = (if i < nh { 2 } else { 1 }, if i < nw { 2 } else { 1 });
            let geom = ConvGeom { kh: 3, kw: 3, sh, sw, ph: 1, pw: 1 };
            let out = spec.channels(i);
            encoder.push(Layer::conv2d(store, rng, &format!("{prefix}.enc{i}"), ch, out, geom));
            encoder.push(lrelu());
            cur = geom.conv_out(cur.0, cur.1).ok_or(Error::EmptyOutput { op: "encoder" })?;
            ch = out;
        }
        if cur != (lh, lw) {
            encoder.push(Layer::Fit { h: lh, w: lw });
        }
        encoder.push(Layer::conv2d(store, rng, &format!("{prefix}.enc_out"), ch, c_lat, ConvGeom::square(3, 1, 1)));

        let mut decoder = Sequential::new();
        let (nh, nw) = (doublings(lh, h), doublings(lw, w));
        let stages = nh.max(nw).max(1);
        let mut ch = spec.channels(stages - 1);
        let mut cur = (lh, lw);
        decoder.push(Layer::conv2d(store, rng, &format!("{prefix}.dec_in"), c_lat, ch, ConvGeom::square(3, 1, 1)));
        decoder.push(lrelu());
        for i in 0..stages {
            let up = |on: bool| if on { (4, 2) } else { (3, 1) };
            let ((kh, sh), (kw, sw)) = (up(i < nh), up(i < nw));
            let geom = ConvGeom { kh, kw, sh, sw, ph: 1, pw: 1 };
            let out = spec.channels((stages - 1 - i).saturating_sub(1));
            decoder.push(Layer::conv_transpose2d(store, rng, &format!("{prefix}.dec{i}"), ch, out, geom, (0, 0)));
            decoder.push(lrelu());
            cur = geom.transpose_out(cur.0, cur.1, 0, 0).ok_or(Error::EmptyOutput { op: "decoder" })?;
            ch = out;
        }
        if cur != (h, w) {
            decoder.push(Layer::Fit { h, w });
        }
        decoder.push(Layer::conv2d(store, rng, &format!("{prefix}.dec_out"), ch, c_in, ConvGeom::square(3, 1, 1)));
        Ok(EncoderDecoderPair { domain, shape, latent, encoder, decoder })
    }

    pub fn encode<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        check_batch(g, x, self.shape, "encode")?;
        self.encoder.forward(g, store, x)
    }

    pub fn decode<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, z: Var) -> Result<Var> {
        check_batch(g, z, self.latent, "decode")?;
        self.decoder.forward(g, store, z)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }
}

fn check_batch<T: Real>(g: &Graph<T>, x: Var, shape: Shape3, op: &'static str) -> Result<()> {
    let s = g.shape(x);
    if s.len() != 4 || s[1..] != shape || s[0] == 0 {
        let n = s.first().copied().unwrap_or(0);
        return Err(Error::ShapeMismatch { op, expected: vec![n, shape[0], shape[1], shape[2]], found: s.to_vec() });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Unet {
    stem: Layer,
    down: Vec<Layer>,
    up: Vec<Layer>,
    out: Layer,
    /// Spatial size at each level, finest first.
    sizes: Vec<(usize, usize)>,
    skip_connections: bool,
}

impl Unet {
    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, z: Var) -> Result<Var> {
        let slope = T::of(DEFAULT_NEGATIVE_SLOPE);
        let x = self.stem.forward(g, store, z)?;
        let mut x = g.leaky_relu(x, slope);
        let mut levels = vec![x];
        for conv in &self.down {
            x = g.max_pool(x, 2)?;
            x = conv.forward(g, store, x)?;
            x = g.leaky_relu(x, slope);
            levels.push(x);
        }
        for (i, conv) in self.up.iter().enumerate().rev() {
            let (h, w) = self.sizes[i];
            x = g.upsample(x, 2, 2)?;
            x = g.fit(x, h, w)?;
            if self.skip_connections {
                x = g.concat_channels(x, levels[i])?;
            }
            x = conv.forward(g, store, x)?;
            x = g.leaky_relu(x, slope);
        }
        self.out.forward(g, store, x)
    }
}

/// Additive coupling: `a' = a + s1(b)`, `b' = b + s2(a')` on the two channel halves.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingBlock {
    s1: Sequential,
    s2: Sequential,
    half: usize,
}

impl CouplingBlock {
    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, z: Var) -> Result<Var> {
        let a = g.narrow_channels(z, 0, self.half)?;
        let b = g.narrow_channels(z, self.half, self.half)?;
        let t = self.s1.forward(g, store, b)?;
        let a = g.add(a, t)?;
        let t = self.s2.forward(g, store, a)?;
        let b = g.add(b, t)?;
        g.concat_channels(a, b)
    }

    fn inverse<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, z: Var) -> Result<Var> {
        let a = g.narrow_channels(z, 0, self.half)?;
        let b = g.narrow_channels(z, self.half, self.half)?;
        let t = self.s2.forward(g, store, a)?;
        let b = g.sub(b, t)?;
        let t = self.s1.forward(g, store, b)?;
        let a = g.sub(a, t)?;
        g.concat_channels(a, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TranslatorNet {
    Identity,
    Linear(Layer),
    Unet(Unet),
    Coupling(Vec<CouplingBlock>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Translator {
    pub spec: TranslatorSpec,
    /// `None` for a coupling translator serving both directions.
    pub direction: Option<Direction>,
    pub latent: Shape3,
    pub net: TranslatorNet,
}

impl Translator {
    pub fn build<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        spec: &TranslatorSpec,
        latent: Shape3,
        direction: Option<Direction>,
    ) -> Result<Self> {
        let [c, h, w] = latent;
        let conv3 = ConvGeom::square(3, 1, 1);
        let net = match *spec {
            TranslatorSpec::Identity => TranslatorNet::Identity,
            TranslatorSpec::Linear => {
                let d = c * h * w;
                if d.saturating_mul(d) > LINEAR_MAX_WEIGHTS {
                    return Err(Error::InvalidConfig(format!(
                        "linear translator over {d} latent values needs {d}x{d} weights; the limit is {LINEAR_MAX_WEIGHTS}"
                    )));
                }
                TranslatorNet::Linear(Layer::linear(store, rng, &format!("{prefix}.linear"), d, d))
            }
            TranslatorSpec::Unet { depth, base_channels: b, skip_connections } => {
                if b == 0 || (b << depth) == 0 || h >> depth == 0 || w >> depth == 0 {
                    return Err(Error::InvalidConfig(format!(
                        "U-Net of depth {depth} does not fit a {h}x{w} latent with {b} base channels"
                    )));
                }
                let stem = Layer::conv2d(store, rng, &format!("{prefix}.stem"), c, b, conv3);
                let mut sizes = vec![(h, w)];
                let mut down = Vec::with_capacity(depth);
                for i in 0..depth {
                    let (ph, pw) = sizes[i];
                    sizes.push((ph / 2, pw / 2));
                    down.push(Layer::conv2d(store, rng, &format!("{prefix}.down{i}"), b << i, b << (i + 1), conv3));
                }
                let mut up = Vec::with_capacity(depth);
                for i in 0..depth {
                    let cin = (b << (i + 1)) + if skip_connections { b << i } else { 0 };
                    up.push(Layer::conv2d(store, rng, &format!("{prefix}.up{i}"), cin, b << i, conv3));
                }
                let out = Layer::conv2d(store, rng, &format!("{prefix}.out"), b, c, conv3);
                TranslatorNet::Unet(Unet { stem, down, up, out, sizes, skip_connections })
            }
            TranslatorSpec::Coupling { n_blocks, hidden_channels, zero_init } => {
                if c % 2 != 0 {
                    return Err(Error::OddChannels(c));
                }
                if n_blocks == 0 || hidden_channels == 0 {
                    return Err(Error::InvalidConfig("coupling needs at least one block and one hidden channel".into()));
                }
                let half = c / 2;
                let mut subnet = |name: String| {
                    let mut s = Sequential::new();
                    s.push(Layer::conv2d(store, rng, &format!("{name}.0"), half, hidden_channels, conv3));
                    s.push(lrelu());
                    s.push(if zero_init {
                        Layer::conv2d_zeros(store, &format!("{name}.1"), hidden_channels, half, conv3)
                    } else {
                        Layer::conv2d(store, rng, &format!("{name}.1"), hidden_channels, half, conv3)
                    });
                    s
                };
                let blocks = (0..n_blocks)
                    .map(|k| CouplingBlock { s1: subnet(format!("{prefix}.block{k}.s1")), s2: subnet(format!("{prefix}.block{k}.s2")), half })
                    .collect();
                TranslatorNet::Coupling(blocks)
            }
        };
        let direction = match net {
            TranslatorNet::Coupling(_) => direction,
            _ => Some(direction.ok_or_else(|| Error::InvalidConfig("one-way translator needs a direction".into()))?),
        };
        Ok(Translator { spec: spec.clone(), direction, latent, net })
    }

    pub fn supports(&self, d: Direction) -> bool {
        self.direction.map_or(true, |own| own == d)
    }

    pub fn translate<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, z: Var, d: Direction) -> Result<Var> {
        if !self.supports(d) {
            return Err(Error::ModeMismatch { mode: "one-way translator", requested: d.name() });
        }
        check_batch(g, z, self.latent, "translate")?;
        match &self.net {
            TranslatorNet::Identity => Ok(z),
            TranslatorNet::Linear(layer) => {
                let shape = g.shape(z).to_vec();
                let flat = g.reshape(z, &[shape[0], shape[1] * shape[2] * shape[3]])?;
                let y = layer.forward(g, store, flat)?;
                g.reshape(y, &shape)
            }
            TranslatorNet::Unet(u) => u.forward(g, store, z),
            TranslatorNet::Coupling(_) => match d {
                Direction::Forward => self.coupling_forward_var(g, store, z),
                Direction::Inverse => self.coupling_inverse_var(g, store, z),
            },
        }
    }

    fn blocks(&self) -> Result<&[CouplingBlock]> {
        match &self.net {
            TranslatorNet::Coupling(b) => Ok(b),
            _ => Err(Error::InvalidConfig("not a coupling translator".into())),
        }
    }

    pub fn coupling_forward_var<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, mut z: Var) -> Result<Var> {
        check_batch(g, z, self.latent, "coupling_forward")?;
        for b in self.blocks()? {
            z = b.forward(g, store, z)?;
        }
        Ok(z)
    }

    pub fn coupling_inverse_var<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, mut z: Var) -> Result<Var> {
        check_batch(g, z, self.latent, "coupling_inverse")?;
        for b in self.blocks()?.iter().rev() {
            z = b.inverse(g, store, z)?;
        }
        Ok(z)
    }

    pub fn coupling_forward<T: Real>(&self, store: &ParamStore<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        eval_batched(z, self.latent, |g, v| self.coupling_forward_var(g, store, v))
    }

    pub fn coupling_inverse<T: Real>(&self, store: &ParamStore<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        eval_batched(z, self.latent, |g, v| self.coupling_inverse_var(g, store, v))
    }

    pub fn translate_tensor<T: Real>(&self, store: &ParamStore<T>, z: &Tensor<T>, d: Direction) -> Result<Tensor<T>> {
        eval_batched(z, self.latent, |g, v| self.translate(g, store, v, d))
    }
}

/// Runs `f` without gradient tracking on a `(N,…)` batch or a single unbatched sample.
fn eval_batched<T: Real>(
    x: &Tensor<T>,
    shape: Shape3,
    f: impl FnOnce(&mut Graph<T>, Var) -> Result<Var>,
) -> Result<Tensor<T>> {
    let single = x.ndim() == 3;
    if single && x.shape() != shape {
        return Err(Error::ShapeMismatch { op: "predict", expected: shape.to_vec(), found: x.shape().to_vec() });
    }
    let input = if single { x.clone().reshape(&[1, shape[0], shape[1], shape[2]])? } else { x.clone() };
    let mut g = Graph::new();
    let v = g.constant(&input);
    let y = f(&mut g, v)?;
    let out = g.tensor(y);
    if single {
        let s = out.shape()[1..].to_vec();
        out.reshape(&s)
    } else {
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Translators {
    /// A single coupling translator used in both directions.
    Shared(Translator),
    Separate { forward: Option<Translator>, inverse: Option<Translator> },
}

/// The composed model. Parameters live in `store`; the layer structs hold ids into it.
#[derive(Clone, Debug, PartialEq)]
pub struct GfiModel<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub pair_v: EncoderDecoderPair,
    pub pair_p: EncoderDecoderPair,
    pub translators: Translators,
}

impl<T: Real> GfiModel<T> {
    /// Builds the architecture and draws initial weights from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let pair_v =
            EncoderDecoderPair::build(&mut store, &mut rng, "v", Domain::Velocity, config.velocity_shape, config.latent, config.pair)?;
        let pair_p =
            EncoderDecoderPair::build(&mut store, &mut rng, "p", Domain::Waveform, config.waveform_shape, config.latent, config.pair)?;
        let spec = &config.translator;
        let mut one = |name: &str, d: Direction| Translator::build(&mut store, &mut rng, name, spec, config.latent, Some(d));
        let translators = match config.mode {
            Mode::Joint => {
                if !matches!(spec, TranslatorSpec::Coupling { .. }) {
                    return Err(Error::InvalidConfig("joint mode needs a coupling translator".into()));
                }
                Translators::Shared(Translator::build(&mut store, &mut rng, "t", spec, config.latent, None)?)
            }
            Mode::ForwardOnly => Translators::Separate { forward: Some(one("t_fwd", Direction::Forward)?), inverse: None },
            Mode::InverseOnly => Translators::Separate { forward: None, inverse: Some(one("t_inv", Direction::Inverse)?) },
            Mode::Disjoint => {
                let forward = Some(one("t_fwd", Direction::Forward)?);
                Translators::Separate { forward, inverse: Some(one("t_inv", Direction::Inverse)?) }
            }
        };
        Ok(GfiModel { config, store, pair_v, pair_p, translators })
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn pair(&self, d: Domain) -> &EncoderDecoderPair {
        match d {
            Domain::Velocity => &self.pair_v,
            Domain::Waveform => &self.pair_p,
        }
    }

    pub fn translator(&self, d: Direction) -> Result<&Translator> {
        let t = match &self.translators {
            Translators::Shared(t) => Some(t),
            Translators::Separate { forward, inverse } => match d {
                Direction::Forward => forward.as_ref(),
                Direction::Inverse => inverse.as_ref(),
            },
        };
        t.ok_or(Error::ModeMismatch { mode: self.config.mode.name(), requested: d.name() })
    }

    pub fn supports(&self, d: Direction) -> bool {
        self.translator(d).is_ok()
    }

    pub fn encode(&self, g: &mut Graph<T>, d: Domain, x: Var) -> Result<Var> {
        self.pair(d).encode(g, &self.store, x)
    }

    pub fn decode(&self, g: &mut Graph<T>, d: Domain, z: Var) -> Result<Var> {
        self.pair(d).decode(g, &self.store, z)
    }

    pub fn translate(&self, g: &mut Graph<T>, z: Var, d: Direction) -> Result<Var> {
        self.translator(d)?.translate(g, &self.store, z, d)
    }

    /// `decode(encode(x))` within one domain.
    pub fn reconstruct(&self, g: &mut Graph<T>, d: Domain, x: Var) -> Result<Var> {
        let z = self.encode(g, d, x)?;
        self.decode(g, d, z)
    }

    /// Full composition for one direction on a recorded batch.
    pub fn predict_var(&self, g: &mut Graph<T>, x: Var, d: Direction) -> Result<Var> {
        let t = self.translator(d)?;
        let z = self.encode(g, d.source(), x)?;
        let z = t.translate(g, &self.store, z, d)?;
        self.decode(g, d.target(), z)
    }

    pub fn predict(&self, x: &Tensor<T>, d: Direction) -> Result<Tensor<T>> {
        self.translator(d)?;
        eval_batched(x, self.config.domain_shape(d.source()), |g, v| self.predict_var(g, v, d))
    }

    /// Velocity `(1,H,W)` or `(N,1,H,W)` to waveform.
    pub fn predict_forward(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        self.predict(v, Direction::Forward)
    }

    /// Waveform `(S,T,R)` or `(N,S,T,R)` to velocity.
    pub fn predict_inverse(&self, p: &Tensor<T>) -> Result<Tensor<T>> {
        self.predict(p, Direction::Inverse)
    }

    pub fn encode_tensor(&self, d: Domain, x: &Tensor<T>) -> Result<Tensor<T>> {
        eval_batched(x, self.config.domain_shape(d), |g, v| self.encode(g, d, v))
    }

    pub fn decode_tensor(&self, d: Domain, z: &Tensor<T>) -> Result<Tensor<T>> {
        eval_batched(z, self.config.latent, |g, v| self.decode(g, d, v))
    }

    pub fn reconstruct_tensor(&self, d: Domain, x: &Tensor<T>) -> Result<Tensor<T>> {
        eval_batched(x, self.config.domain_shape(d), |g, v| self.reconstruct(g, d, v))
    }

    /// Parameters of the encoder/decoder pairs (everything outside the translators).
    pub fn is_pair_param(name: &str) -> bool {
        name.starts_with("v.") || name.starts_with("p.")
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    /// Scalar count per group: velocity pair, waveform pair, translators.
    pub fn param_breakdown(&self) -> (usize, usize, usize) {
        let (mut v, mut p, mut t) = (0, 0, 0);
        for (_, name, tensor) in self.store.iter() {
            let slot = if name.starts_with("v.") {
                &mut v
            } else if name.starts_with("p.") {
                &mut p
            } else {
                &mut t
            };
            *slot += tensor.len();
        }
        (v, p, t)
    }

    /// Converts every parameter to another precision, keeping the architecture.
    pub fn cast<U: Real>(&self) -> GfiModel<U> {
        let mut store = ParamStore::new();
        for (_, name, t) in self.store.iter() {
            store.add(name, t.cast::<U>());
        }
        GfiModel {
            config: self.config.clone(),
            store,
            pair_v: self.pair_v.clone(),
            pair_p: self.pair_p.clone(),
            translators: self.translators.clone(),
        }
    }
}
