//! Losses, the step learning-rate schedule and the training loop for every mode.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::datagen::{normalize, unnormalize, Norms, PairedData, Summary};
use crate::error::{Error, Result};
use crate::eval::{mae, mse, ssim_channels};
use crate::models::{Direction, Domain, GfiModel, Mode, ModelKind};
use crate::optim::{adam_step, AdamState};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossSpec {
    Mae,
    Mse,
    Elastic { w_mae: f64, w_mse: f64 },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        if let LossSpec::Elastic { w_mae, w_mse } = *self {
            if !(w_mae >= 0.0 && w_mse >= 0.0) || w_mae + w_mse == 0.0 {
                return Err(Error::InvalidConfig(format!("elastic weights must be >= 0 and not both zero, got {w_mae}, {w_mse}")));
            }
        }
        Ok(())
    }
}

pub fn loss_var<T: Real>(g: &mut Graph<T>, pred: Var, target: Var, spec: &LossSpec) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        return Err(Error::ShapeMismatch { op: "loss", expected: g.shape(target).to_vec(), found: g.shape(pred).to_vec() });
    }
    let d = g.sub(pred, target)?;
    Ok(match *spec {
        LossSpec::Mae => g.mean_abs(d),
        LossSpec::Mse => g.mean_sq(d),
        LossSpec::Elastic { w_mae, w_mse } => {
            let a = g.mean_abs(d);
            let a = g.scale(a, T::of(w_mae));
            let b = g.mean_sq(d);
            let b = g.scale(b, T::of(w_mse));
            g.add(a, b)?
        }
    })
}

/// Loss value between two tensors, without gradients.
pub fn loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, spec: &LossSpec) -> Result<f64> {
    spec.validate()?;
    let mut g = Graph::new();
    let p = g.constant(pred);
    let t = g.constant(target);
    let l = loss_var(&mut g, p, t, spec)?;
    Ok(g.scalar(l).as_f64())
}

/// `(total, L_forward, L_inverse)` with `total = L_forward + L_inverse` in one graph.
pub fn xnet_loss<T: Real>(g: &mut Graph<T>, m: &GfiModel<T>, v: Var, p: Var, spec: &LossSpec) -> Result<(Var, Var, Var)> {
    if m.mode() != Mode::Joint {
        return Err(Error::ModeMismatch { mode: m.mode().name(), requested: "joint loss" });
    }
    let p_hat = m.predict_var(g, v, Direction::Forward)?;
    let lf = loss_var(g, p_hat, p, spec)?;
    let v_hat = m.predict_var(g, p, Direction::Inverse)?;
    let li = loss_var(g, v_hat, v, spec)?;
    Ok((g.add(lf, li)?, lf, li))
}

/// `L(p, F(I(p))) + L(v, I(F(v)))`; a missing side drops its term.
pub fn cycle_loss<T: Real>(g: &mut Graph<T>, m: &GfiModel<T>, v: Option<Var>, p: Option<Var>, spec: &LossSpec) -> Result<Var> {
    for d in [Direction::Forward, Direction::Inverse] {
        m.translator(d)?;
    }
    let mut terms = Vec::with_capacity(2);
    if let Some(p) = p {
        let v_hat = m.predict_var(g, p, Direction::Inverse)?;
        let p_cyc = m.predict_var(g, v_hat, Direction::Forward)?;
        terms.push(loss_var(g, p_cyc, p, spec)?);
    }
    if let Some(v) = v {
        let p_hat = m.predict_var(g, v, Direction::Forward)?;
        let v_cyc = m.predict_var(g, p_hat, Direction::Inverse)?;
        terms.push(loss_var(g, v_cyc, v, spec)?);
    }
    match terms[..] {
        [] => Err(Error::EmptyBatch),
        [a] => Ok(a),
        [a, b] => g.add(a, b),
        _ => unreachable!(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Forward,
    Inverse,
    Joint,
    JointCycle,
    ReconstructThenTranslate,
}

impl TrainMode {
    pub const ALL: [TrainMode; 5] =
        [TrainMode::Forward, TrainMode::Inverse, TrainMode::Joint, TrainMode::JointCycle, TrainMode::ReconstructThenTranslate];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Forward => "forward",
            TrainMode::Inverse => "inverse",
            TrainMode::Joint => "joint",
            TrainMode::JointCycle => "joint-cycle",
            TrainMode::ReconstructThenTranslate => "reconstruct-then-translate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s == "joint+cycle" {
            return Some(TrainMode::JointCycle);
        }
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// The model mode that training in this mode builds for `kind`.
    pub fn model_mode(self, kind: ModelKind) -> Mode {
        match self {
            TrainMode::Forward => Mode::ForwardOnly,
            TrainMode::Inverse => Mode::InverseOnly,
            TrainMode::Joint | TrainMode::JointCycle => Mode::Joint,
            TrainMode::ReconstructThenTranslate if kind == ModelKind::InvertibleXnet => Mode::Joint,
            TrainMode::ReconstructThenTranslate => Mode::Disjoint,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub step_interval: usize,
    pub decay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub schedule: Schedule,
    pub loss: LossSpec,
    pub mode: TrainMode,
    pub seed: u64,
    /// Reconstruction-only epochs before translator training (two-stage mode only).
    pub stage1_epochs: usize,
    /// Share of paired training samples held out for validation (none below 10 samples).
    pub val_fraction: f64,
    /// Joint+cycle only: drop supervised terms and draw velocity and waveform batches independently.
    pub pure_unpaired: bool,
}

impl TrainConfig {
    pub fn desk(mode: TrainMode) -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 16,
            lr0: 2e-3,
            schedule: Schedule { step_interval: 100, decay: 0.5 },
            loss: LossSpec::Mae,
            mode,
            seed: 0,
            stage1_epochs: 100,
            val_fraction: 0.1,
            pure_unpaired: false,
        }
    }

    pub fn full(mode: TrainMode) -> Self {
        TrainConfig {
            epochs: 450,
            batch_size: 64,
            schedule: Schedule { step_interval: 150, decay: 0.5 },
            stage1_epochs: 150,
            ..Self::desk(mode)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be at least 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.schedule.decay > 0.0 && self.schedule.decay <= 1.0) || self.schedule.step_interval == 0 {
            return bad(format!("need 0 < decay <= 1 and interval >= 1, got {:?}", self.schedule));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("validation fraction must be in [0, 1), got {}", self.val_fraction));
        }
        if self.mode == TrainMode::ReconstructThenTranslate && (self.stage1_epochs == 0 || self.stage1_epochs >= self.epochs) {
            return bad(format!("two-stage training needs 1 <= stage1_epochs < epochs, got {} of {}", self.stage1_epochs, self.epochs));
        }
        if self.pure_unpaired && self.mode != TrainMode::JointCycle {
            return bad("pure unpaired training is only defined for joint-cycle mode".into());
        }
        self.loss.validate()
    }
}

/// `lr0 · decay^⌊epoch / interval⌋`.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    let k = epoch / cfg.schedule.step_interval.max(1);
    cfg.lr0 * libm::pow(cfg.schedule.decay, k as f64)
}

/// Normalized training tensors. When `paired` is false, `velocity[i]` and
/// `waveform[i]` are unrelated and the counts may differ.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainData {
    pub velocity: Tensor<f32>,
    pub waveform: Tensor<f32>,
    pub paired: bool,
    pub norms: Norms,
    /// Raw min/max per domain, used to rescale images for SSIM.
    pub range_v: (f64, f64),
    pub range_p: (f64, f64),
}

impl TrainData {
    pub fn paired(raw: &PairedData, norms: Norms) -> Result<Self> {
        Self::build(&raw.velocity, &raw.waveform, norms, true)
    }

    pub fn unpaired(velocity: &Tensor<f32>, waveform: &Tensor<f32>, norms: Norms) -> Result<Self> {
        Self::build(velocity, waveform, norms, false)
    }

    fn build(velocity: &Tensor<f32>, waveform: &Tensor<f32>, norms: Norms, paired: bool) -> Result<Self> {
        if velocity.ndim() != 4 || waveform.ndim() != 4 {
            return Err(Error::ShapeMismatch { op: "train data", expected: alloc::vec![0; 4], found: velocity.shape().to_vec() });
        }
        if paired && velocity.shape()[0] != waveform.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "train data",
                expected: alloc::vec![velocity.shape()[0]],
                found: alloc::vec![waveform.shape()[0]],
            });
        }
        let (sv, sp) = (Summary::of(velocity.data()), Summary::of(waveform.data()));
        Ok(TrainData {
            velocity: normalize(velocity, &norms.velocity)?,
            waveform: normalize(waveform, &norms.waveform)?,
            paired,
            norms,
            range_v: (sv.min, sv.max),
            range_p: (sp.min, sp.max),
        })
    }

    pub fn len_v(&self) -> usize {
        self.velocity.shape()[0]
    }

    pub fn len_p(&self) -> usize {
        self.waveform.shape()[0]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub mae: f64,
    pub mse: f64,
    pub ssim: f64,
}

/// Loss components of one optimizer step, as computed in the model's precision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub total: f64,
    pub forward: Option<f64>,
    pub inverse: Option<f64>,
    pub cycle: Option<f64>,
    pub reconstruction: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// 1 or 2 in two-stage training, 0 otherwise.
    pub stage: u8,
    pub lr: f64,
    pub total: f64,
    pub forward: Option<f64>,
    pub inverse: Option<f64>,
    pub cycle: Option<f64>,
    pub reconstruction: Option<f64>,
    pub val_forward: Option<ValMetrics>,
    pub val_inverse: Option<ValMetrics>,
}

impl EpochRecord {
    /// Validation MAE used to pick the best checkpoint: inverse when available.
    pub fn val_mae(&self) -> Option<f64> {
        self.val_inverse.or(self.val_forward).map(|m| m.mae)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome<T> {
    pub history: TrainHistory,
    /// Parameters at the epoch with the lowest validation MAE.
    pub best: Option<(usize, ParamStore<T>)>,
    /// Parameters at the end of stage 1 (two-stage mode only).
    pub stage1: Option<ParamStore<T>>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Supervised,
    Reconstruction,
    Translation,
}

struct StepVars {
    total: Var,
    forward: Option<Var>,
    inverse: Option<Var>,
    cycle: Option<Var>,
    reconstruction: Option<Var>,
}

fn sum_vars<T: Real>(g: &mut Graph<T>, vars: &[Option<Var>]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for v in vars.iter().flatten() {
        acc = Some(match acc {
            None => *v,
            Some(a) => g.add(a, *v)?,
        });
    }
    acc.ok_or(Error::EmptyBatch)
}

fn step_graph<T: Real>(
    g: &mut Graph<T>,
    m: &GfiModel<T>,
    v: Option<Var>,
    p: Option<Var>,
    cfg: &TrainConfig,
    phase: Phase,
    paired: bool,
) -> Result<StepVars> {
    let spec = &cfg.loss;
    let sup = |g: &mut Graph<T>, d: Direction| -> Result<Var> {
        let (x, y) = match d {
            Direction::Forward => (v, p),
            Direction::Inverse => (p, v),
        };
        let (x, y) = (x.ok_or(Error::EmptyBatch)?, y.ok_or(Error::EmptyBatch)?);
        let pred = m.predict_var(g, x, d)?;
        loss_var(g, pred, y, spec)
    };
    let (mut forward, mut inverse, mut cycle, mut reconstruction) = (None, None, None, None);
    match phase {
        Phase::Reconstruction => {
            let mut terms = Vec::new();
            for (x, d) in [(v, Domain::Velocity), (p, Domain::Waveform)] {
                if let Some(x) = x {
                    let r = m.reconstruct(g, d, x)?;
                    terms.push(Some(loss_var(g, r, x, spec)?));
                }
            }
            reconstruction = Some(sum_vars(g, &terms)?);
        }
        Phase::Translation => {
            if m.supports(Direction::Forward) {
                forward = Some(sup(g, Direction::Forward)?);
            }
            if m.supports(Direction::Inverse) {
                inverse = Some(sup(g, Direction::Inverse)?);
            }
        }
        Phase::Supervised => match cfg.mode {
            TrainMode::Forward => forward = Some(sup(g, Direction::Forward)?),
            TrainMode::Inverse => inverse = Some(sup(g, Direction::Inverse)?),
            TrainMode::Joint => {
                let (v, p) = (v.ok_or(Error::EmptyBatch)?, p.ok_or(Error::EmptyBatch)?);
                let (_, lf, li) = xnet_loss(g, m, v, p, spec)?;
                forward = Some(lf);
                inverse = Some(li);
            }
            TrainMode::JointCycle => {
                if paired {
                    let (v, p) = (v.ok_or(Error::EmptyBatch)?, p.ok_or(Error::EmptyBatch)?);
                    let (_, lf, li) = xnet_loss(g, m, v, p, spec)?;
                    forward = Some(lf);
                    inverse = Some(li);
                }
                cycle = Some(cycle_loss(g, m, v, p, spec)?);
            }
            TrainMode::ReconstructThenTranslate => unreachable!("two-stage mode uses explicit phases"),
        },
    }
    let total = sum_vars(g, &[forward, inverse, cycle, reconstruction])?;
    Ok(StepVars { total, forward, inverse, cycle, reconstruction })
}

fn check_compatible<T: Real>(m: &GfiModel<T>, cfg: &TrainConfig) -> Result<()> {
    let need: &[Direction] = match cfg.mode {
        TrainMode::Forward => &[Direction::Forward],
        TrainMode::Inverse => &[Direction::Inverse],
        TrainMode::Joint | TrainMode::JointCycle => {
            if m.mode() != Mode::Joint {
                return Err(Error::ModeMismatch { mode: m.mode().name(), requested: cfg.mode.name() });
            }
            &[]
        }
        TrainMode::ReconstructThenTranslate => &[],
    };
    for &d in need {
        m.translator(d)?;
    }
    Ok(())
}

/// Byte image of every encoder/decoder parameter.
pub fn pair_bytes<T: Real>(store: &ParamStore<T>) -> Vec<(usize, Vec<u8>)> {
    store
        .iter()
        .filter(|(_, name, _)| GfiModel::<T>::is_pair_param(name))
        .map(|(id, _, t)| {
            let mut b = Vec::with_capacity(t.len() * T::DTYPE.size());
            t.data().iter().for_each(|v| v.write_le(&mut b));
            (id.index(), b)
        })
        .collect()
}

/// Splits `0..n` into (train, validation) with a seeded permutation.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let n_val = if n < 10 { 0 } else { libm::floor(n as f64 * fraction) as usize };
    if n_val == 0 {
        return (idx, Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a11_da7e);
    idx.shuffle(&mut rng);
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

fn batch<T: Real>(t: &Tensor<f32>, idx: &[usize]) -> Tensor<T> {
    t.gather(idx).cast()
}

fn val_metrics<T: Real>(m: &GfiModel<T>, data: &TrainData, idx: &[usize], d: Direction) -> Result<Option<ValMetrics>> {
    if idx.is_empty() || !m.supports(d) {
        return Ok(None);
    }
    let (src, dst, range) = match d {
        Direction::Forward => (&data.velocity, &data.waveform, data.range_p),
        Direction::Inverse => (&data.waveform, &data.velocity, data.range_v),
    };
    let stats = data.norms.get(d.target());
    let mut acc = ValMetrics::default();
    for chunk in idx.chunks(16) {
        let pred = unnormalize(&m.predict(&batch::<T>(src, chunk), d)?, stats)?.cast::<f64>();
        let target = unnormalize(&dst.gather(chunk).cast::<f64>(), stats)?;
        for k in 0..chunk.len() {
            let (p, t) = (pred.item(k), target.item(k));
            acc.mae += mae(&p, &t)?;
            acc.mse += mse(&p, &t)?;
            acc.ssim += ssim_channels(&p, &t, range)?;
        }
    }
    let n = idx.len() as f64;
    Ok(Some(ValMetrics { mae: acc.mae / n, mse: acc.mse / n, ssim: acc.ssim / n }))
}

#[derive(Default)]
struct Accum {
    weight: f64,
    total: f64,
    parts: [(f64, bool); 4],
}

impl Accum {
    fn add(&mut self, w: f64, r: &StepRecord) {
        self.weight += w;
        self.total += w * r.total;
        for (slot, v) in self.parts.iter_mut().zip([r.forward, r.inverse, r.cycle, r.reconstruction]) {
            if let Some(v) = v {
                *slot = (slot.0 + w * v, true);
            }
        }
    }

    fn mean(&self, k: usize) -> Option<f64> {
        let (s, seen) = self.parts[k];
        seen.then(|| s / self.weight)
    }
}

/// Trains `model` in place. Validation is held out from paired data only.
pub fn train<T: Real>(model: &mut GfiModel<T>, data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    check_compatible(model, cfg)?;
    let unpaired = !data.paired || cfg.pure_unpaired;
    if unpaired && !matches!(cfg.mode, TrainMode::JointCycle | TrainMode::ReconstructThenTranslate) {
        return Err(Error::InvalidConfig(format!("{} training needs paired data", cfg.mode.name())));
    }
    if unpaired && cfg.mode == TrainMode::ReconstructThenTranslate {
        return Err(Error::InvalidConfig("translator stage needs paired data".into()));
    }
    let (train_v, val) = if data.paired {
        split_indices(data.len_v(), cfg.val_fraction, cfg.seed)
    } else {
        ((0..data.len_v()).collect(), Vec::new())
    };
    let train_p: Vec<usize> = if data.paired { train_v.clone() } else { (0..data.len_p()).collect() };
    if train_v.is_empty() || train_p.is_empty() {
        return Err(Error::EmptyBatch);
    }

    let mut adam = AdamState::new(&model.store, cfg.lr0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = TrainHistory::default();
    let mut best: Option<(usize, f64, ParamStore<T>)> = None;
    let mut stage1 = None;
    let mut frozen: Option<Vec<(usize, Vec<u8>)>> = None;
    let two_stage = cfg.mode == TrainMode::ReconstructThenTranslate;

    for epoch in 0..cfg.epochs {
        let (phase, stage) = match (two_stage, epoch < cfg.stage1_epochs) {
            (false, _) => (Phase::Supervised, 0),
            (true, true) => (Phase::Reconstruction, 1),
            (true, false) => (Phase::Translation, 2),
        };
        if two_stage && epoch == cfg.stage1_epochs {
            stage1 = Some(model.store.clone());
            model.store.set_trainable(GfiModel::<T>::is_pair_param, false);
            model.store.set_trainable(|n| !GfiModel::<T>::is_pair_param(n), true);
            frozen = Some(pair_bytes(&model.store));
            adam = AdamState::new(&model.store, cfg.lr0)?;
        } else if two_stage && epoch == 0 {
            model.store.set_trainable(|n| !GfiModel::<T>::is_pair_param(n), false);
        }
        let lr = lr_at(cfg, epoch);
        adam.lr = lr;

        let mut order_v = train_v.clone();
        order_v.shuffle(&mut rng);
        let mut order_p = if unpaired {
            let mut o = train_p.clone();
            o.shuffle(&mut rng);
            o
        } else {
            order_v.clone()
        };
        let n = order_v.len().max(order_p.len());
        let steps = n.div_ceil(cfg.batch_size);
        // The shorter side wraps around so every step sees a full pair of batches.
        let wrap = |o: &mut Vec<usize>| {
            let base = o.clone();
            while o.len() < n {
                o.push(base[o.len() % base.len()]);
            }
        };
        wrap(&mut order_v);
        wrap(&mut order_p);

        let mut acc = Accum::default();
        for step in 0..steps {
            let range = step * cfg.batch_size..((step + 1) * cfg.batch_size).min(n);
            let (iv, ip) = (&order_v[range.clone()], &order_p[range]);
            let mut g = Graph::new();
            let v = g.constant(&batch::<T>(&data.velocity, iv));
            let p = g.constant(&batch::<T>(&data.waveform, ip));
            let vars = step_graph(&mut g, model, Some(v), Some(p), cfg, phase, !unpaired)?;
            let get = |x: Option<Var>| x.map(|x| g.scalar(x).as_f64());
            let rec = StepRecord {
                epoch,
                step,
                total: g.scalar(vars.total).as_f64(),
                forward: get(vars.forward),
                inverse: get(vars.inverse),
                cycle: get(vars.cycle),
                reconstruction: get(vars.reconstruction),
            };
            if !rec.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            g.backward(vars.total)?;
            model.store.zero_grads();
            g.write_param_grads(&mut model.store);
            adam_step(&mut model.store, &mut adam)?;
            acc.add(iv.len() as f64, &rec);
            history.steps.push(rec);
        }

        if let Some(snapshot) = &frozen {
            for (now, before) in pair_bytes(&model.store).iter().zip(snapshot) {
                if now != before {
                    let name = model.store.iter().nth(now.0).map(|(_, n, _)| n.to_string()).unwrap_or_default();
                    return Err(Error::FrozenParameterMutated(name));
                }
            }
        }

        let record = EpochRecord {
            epoch,
            stage,
            lr,
            total: acc.total / acc.weight,
            forward: acc.mean(0),
            inverse: acc.mean(1),
            cycle: acc.mean(2),
            reconstruction: acc.mean(3),
            val_forward: val_metrics(model, data, &val, Direction::Forward)?,
            val_inverse: val_metrics(model, data, &val, Direction::Inverse)?,
        };
        if stage != 1 {
            if let Some(v) = record.val_mae() {
                if best.as_ref().map_or(true, |b| v < b.1) {
                    best = Some((epoch, v, model.store.clone()));
                }
            }
        }
        history.epochs.push(record);
    }
    model.store.set_trainable(|_| true, true);
    Ok(TrainOutcome {
        history,
        best: best.map(|(e, _, mut s)| {
            s.set_trainable(|_| true, true);
            (e, s)
        }),
        stage1: stage1.map(|mut s| {
            s.set_trainable(|_| true, true);
            s
        }),
        train_indices: train_v,
        val_indices: val,
    })
}

/// Norm of the gradient of one direction's supervised loss with respect to translator parameters.
pub fn translator_gradient_norm<T: Real>(
    m: &GfiModel<T>,
    v: &Tensor<T>,
    p: &Tensor<T>,
    spec: &LossSpec,
    d: Direction,
) -> Result<f64> {
    let mut g = Graph::new();
    let (vv, pv) = (g.constant(v), g.constant(p));
    let (x, y) = match d {
        Direction::Forward => (vv, pv),
        Direction::Inverse => (pv, vv),
    };
    let pred = m.predict_var(&mut g, x, d)?;
    let l = loss_var(&mut g, pred, y, spec)?;
    g.backward(l)?;
    let mut store = m.store.clone();
    store.zero_grads();
    g.write_param_grads(&mut store);
    let sq: f64 = store
        .iter()
        .filter(|(_, name, _)| !GfiModel::<T>::is_pair_param(name))
        .filter_map(|(_, _, t)| t.grad.as_ref())
        .flat_map(|g| g.iter().map(|x| x.as_f64() * x.as_f64()))
        .sum();
    Ok(libm::sqrt(sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn loss_examples() {
        let a = t(&[1.0, -2.0, 3.0]);
        let b = a.map(|x| x + 0.5);
        for spec in [LossSpec::Mae, LossSpec::Mse, LossSpec::Elastic { w_mae: 1.0, w_mse: 1.0 }] {
            assert_eq!(loss(&a, &a, &spec).unwrap(), 0.0);
        }
        assert_eq!(loss(&a, &b, &LossSpec::Mae).unwrap(), 0.5);
        assert_eq!(loss(&a, &b, &LossSpec::Mse).unwrap(), 0.25);
        let c = t(&[0.3, 1.0, -4.0]);
        let e = loss(&a, &c, &LossSpec::Elastic { w_mae: 1.0, w_mse: 1.0 }).unwrap();
        let sum = loss(&a, &c, &LossSpec::Mae).unwrap() + loss(&a, &c, &LossSpec::Mse).unwrap();
        assert!((e - sum).abs() < 1e-14);
        assert!(loss(&a, &t(&[1.0]), &LossSpec::Mae).is_err());
        assert!(LossSpec::Elastic { w_mae: 0.0, w_mse: 0.0 }.validate().is_err());
        assert!(LossSpec::Elastic { w_mae: -1.0, w_mse: 1.0 }.validate().is_err());
    }

    #[test]
    fn schedule_examples() {
        let mut cfg = TrainConfig::full(TrainMode::Inverse);
        assert_eq!(lr_at(&cfg, 0), 2e-3);
        assert_eq!(lr_at(&cfg, 149), 2e-3);
        assert_eq!(lr_at(&cfg, 150), 1e-3);
        assert_eq!(lr_at(&cfg, 300), 5e-4);
        cfg.schedule.decay = 1.0;
        assert_eq!(lr_at(&cfg, 10_000), 2e-3);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::desk(TrainMode::Inverse);
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..ok.clone() },
            TrainConfig { lr0: 0.0, ..ok.clone() },
            TrainConfig { schedule: Schedule { step_interval: 10, decay: 1.5 }, ..ok.clone() },
            TrainConfig { schedule: Schedule { step_interval: 10, decay: 0.0 }, ..ok.clone() },
            TrainConfig { mode: TrainMode::ReconstructThenTranslate, stage1_epochs: 300, ..ok.clone() },
            TrainConfig { pure_unpaired: true, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn split_rules() {
        assert_eq!(split_indices(8, 0.1, 0), ((0..8).collect(), vec![]));
        let (tr, va) = split_indices(64, 0.1, 3);
        assert_eq!((tr.len(), va.len()), (58, 6));
        assert_eq!(split_indices(64, 0.1, 3), (tr.clone(), va.clone()));
        let mut all: Vec<usize> = tr.into_iter().chain(va).collect();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn mode_names_roundtrip() {
        for m in TrainMode::ALL {
            assert_eq!(TrainMode::parse(m.name()), Some(m));
        }
        assert_eq!(TrainMode::parse("joint+cycle"), Some(TrainMode::JointCycle));
    }
}
