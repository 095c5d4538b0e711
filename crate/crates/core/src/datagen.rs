//! Procedural velocity models, paired sample generation and normalization.
//!
//! Four families mirror the layered/curved/faulted structure of common FWI
//! benchmarks: flat layers, curved layers, and a faulted variant of each.
//! A fault variant re-uses the exact layer draw of its parent and then
//! displaces one block, so the two only differ inside that block.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Domain;
use crate::real::Real;
use crate::tensor::Tensor;
use crate::wave::{simulate_survey, SimConfig, VelocityMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Flat,
    Curve,
    FlatFault,
    CurveFault,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Flat, Family::Curve, Family::FlatFault, Family::CurveFault];

    pub fn name(self) -> &'static str {
        match self {
            Family::Flat => "flat",
            Family::Curve => "curve",
            Family::FlatFault => "flat-fault",
            Family::CurveFault => "curve-fault",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }

    /// The unfaulted family a fault family is derived from.
    pub fn parent(self) -> Family {
        match self {
            Family::Flat | Family::FlatFault => Family::Flat,
            Family::Curve | Family::CurveFault => Family::Curve,
        }
    }

    pub fn is_faulted(self) -> bool {
        matches!(self, Family::FlatFault | Family::CurveFault)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Complexity {
    A,
    B,
}

impl Complexity {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "A" | "a" => Some(Complexity::A),
            "B" | "b" => Some(Complexity::B),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: Family,
    pub complexity: Complexity,
    pub nz: usize,
    pub nx: usize,
    /// Inclusive range of layer counts.
    pub n_layers: (usize, usize),
    /// Velocity bounds in m/s.
    pub velocity_range: (f64, f64),
    /// Peak interface displacement of curved layers, in cells.
    pub curvature_amplitude: f64,
    /// Inclusive range of fault throw, in cells.
    pub fault_throw: (usize, usize),
    pub seed: u64,
}

impl FamilySpec {
    /// Family defaults for an `nz × nx` grid; lengths scale with `nz / 32`.
    pub fn preset(family: Family, complexity: Complexity, nz: usize, nx: usize, seed: u64) -> Self {
        let scale = nz as f64 / 32.0;
        let cells = |c: f64| libm::round(c * scale).max(1.0) as usize;
        let (n_layers, velocity_range, curvature, throw) = match complexity {
            Complexity::A => ((2, 4), (1500.0, 4000.0), 2.0, (cells(2.0), cells(4.0))),
            Complexity::B => ((3, 6), (1500.0, 4500.0), 4.0, (cells(3.0), cells(8.0))),
        };
        FamilySpec {
            family,
            complexity,
            nz,
            nx,
            n_layers,
            velocity_range,
            curvature_amplitude: curvature * scale,
            fault_throw: throw,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.velocity_range;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::InvalidConfig(format!("velocity range must be positive and increasing, got {lo}..{hi}")));
        }
        if self.n_layers.0 < 2 || self.n_layers.1 < self.n_layers.0 {
            return Err(Error::InvalidConfig(format!("need 2 <= min layers <= max layers, got {:?}", self.n_layers)));
        }
        if self.n_layers.1 * MIN_THICKNESS > self.nz {
            return Err(Error::InvalidConfig(format!(
                "cannot pack {} layers of at least {MIN_THICKNESS} rows into {} rows",
                self.n_layers.1, self.nz
            )));
        }
        if self.fault_throw.1 < self.fault_throw.0 || !(self.curvature_amplitude >= 0.0) {
            return Err(Error::InvalidConfig("invalid fault throw or curvature".into()));
        }
        Ok(())
    }

    fn rng(&self, index: usize, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng.set_word_pos(index as u128 * 1024);
        rng
    }
}

const MIN_THICKNESS: usize = 2;
const LAYER_STREAM: u64 = 1;
const FAULT_STREAM: u64 = 2;

/// A dipping plane `x = x0 + slope·z`; cells right of it form the displaced block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaultPlane {
    pub x0: f64,
    pub slope: f64,
    /// Downward displacement of the block, in cells.
    pub throw: usize,
}

impl FaultPlane {
    pub fn in_block(&self, z: usize, x: usize) -> bool {
        x as f64 > self.x0 + self.slope * z as f64
    }
}

/// The fault applied to sample `index`, or `None` for unfaulted families.
pub fn fault_plane(spec: &FamilySpec, index: usize) -> Option<FaultPlane> {
    if !spec.family.is_faulted() {
        return None;
    }
    let mut rng = spec.rng(index, FAULT_STREAM);
    let nx = spec.nx as f64;
    let x0 = rng.gen_range(0.3 * nx..0.7 * nx);
    let slope = rng.gen_range(-0.6..0.6);
    let throw = rng.gen_range(spec.fault_throw.0..=spec.fault_throw.1);
    Some(FaultPlane { x0, slope, throw })
}

/// Interface depth (row) per layer boundary and column.
fn interfaces(spec: &FamilySpec, rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<usize>> {
    // Thicknesses: the minimum plus a random share of the spare rows.
    let spare = spec.nz - n * MIN_THICKNESS;
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut depth = 0usize;
    let mut bases = Vec::with_capacity(n - 1);
    for w in &weights[..n - 1] {
        depth += MIN_THICKNESS + libm::floor(spare as f64 * w / total) as usize;
        bases.push(depth);
    }
    let curve = match spec.family.parent() {
        Family::Flat => None,
        _ => {
            let cycles = rng.gen_range(0.5..1.5);
            let phase = rng.gen_range(0.0..core::f64::consts::TAU);
            let amps: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(0.5..1.0) * spec.curvature_amplitude).collect();
            Some((cycles, phase, amps))
        }
    };
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(n - 1);
    for (k, &base) in bases.iter().enumerate() {
        let row: Vec<usize> = (0..spec.nx)
            .map(|x| {
                let shift = match &curve {
                    None => 0.0,
                    Some((cycles, phase, amps)) => {
                        let arg = core::f64::consts::TAU * cycles * x as f64 / spec.nx as f64 + phase;
                        amps[k] * libm::sin(arg)
                    }
                };
                let lo = match out.last() {
                    Some(prev) => prev[x] + 1,
                    None => 1,
                };
                let d = libm::round(base as f64 + shift).max(0.0) as usize;
                d.max(lo).min(spec.nz - 1)
            })
            .collect();
        out.push(row);
    }
    out
}

fn layered_map(spec: &FamilySpec, index: usize) -> Vec<f64> {
    let mut rng = spec.rng(index, LAYER_STREAM);
    let n = rng.gen_range(spec.n_layers.0..=spec.n_layers.1);
    let (lo, hi) = spec.velocity_range;
    let mut velocities: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..=hi)).collect();
    velocities.sort_by(f64::total_cmp);
    let ifaces = interfaces(spec, &mut rng, n);
    let mut map = vec![0.0; spec.nz * spec.nx];
    for x in 0..spec.nx {
        for z in 0..spec.nz {
            let layer = ifaces.iter().filter(|row| row[x] <= z).count();
            map[z * spec.nx + x] = velocities[layer];
        }
    }
    map
}

/// Deterministic velocity map for `(spec, index)`.
pub fn gen_velocity(spec: &FamilySpec, index: usize) -> Result<VelocityMap> {
    spec.validate()?;
    let mut map = layered_map(spec, index);
    if let Some(plane) = fault_plane(spec, index) {
        let parent = map.clone();
        for z in 0..spec.nz {
            for x in 0..spec.nx {
                if plane.in_block(z, x) {
                    map[z * spec.nx + x] = parent[z.saturating_sub(plane.throw) * spec.nx + x];
                }
            }
        }
    }
    VelocityMap::new(Tensor::new(&[1, spec.nz, spec.nx], map)?)
}

/// Velocity map and simulated survey for one sample, both as `f32`.
pub fn generate_sample(spec: &FamilySpec, sim: &SimConfig, index: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if (spec.nz, spec.nx) != (sim.nz, sim.nx) {
        return Err(Error::InvalidConfig(format!(
            "family grid {}x{} does not match simulation grid {}x{}",
            spec.nz, spec.nx, sim.nz, sim.nx
        )));
    }
    let vmap = gen_velocity(spec, index)?;
    let cube = simulate_survey(&vmap, sim).map_err(|e| Error::Sample { index, inner: e.into() })?;
    Ok((vmap.tensor().cast(), cube.values.cast()))
}

/// Batched velocity `(N,1,H,W)` and waveform `(N,S,T,R)` tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedData {
    pub velocity: Tensor<f32>,
    pub waveform: Tensor<f32>,
}

impl PairedData {
    pub fn new(velocity: Tensor<f32>, waveform: Tensor<f32>) -> Result<Self> {
        if velocity.ndim() != 4 || waveform.ndim() != 4 || velocity.shape()[0] != waveform.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "paired data",
                expected: velocity.shape().to_vec(),
                found: waveform.shape().to_vec(),
            });
        }
        Ok(PairedData { velocity, waveform })
    }

    pub fn len(&self) -> usize {
        self.velocity.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, indices: &[usize]) -> PairedData {
        PairedData { velocity: self.velocity.gather(indices), waveform: self.waveform.gather(indices) }
    }
}

// ── normalization ───────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormScheme {
    Minmax,
    Standardize,
    LogsignMinmax,
}

impl NormScheme {
    pub fn name(self) -> &'static str {
        match self {
            NormScheme::Minmax => "minmax",
            NormScheme::Standardize => "standardize",
            NormScheme::LogsignMinmax => "logsign-minmax",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [NormScheme::Minmax, NormScheme::Standardize, NormScheme::LogsignMinmax].into_iter().find(|n| n.name() == s)
    }
}

/// Statistics for one normalization scheme. `LogsignMinmax` bounds live in
/// the `sign(x)·ln(1+|x|)` domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum NormStats {
    Minmax { min: f64, max: f64 },
    Standardize { mean: f64, std: f64 },
    LogsignMinmax { min: f64, max: f64 },
}

/// Summary statistics of a data set from which every scheme's stats derive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
    pub logsign_min: f64,
    pub logsign_max: f64,
}

fn logsign(x: f64) -> f64 {
    libm::copysign(libm::log1p(x.abs()), x)
}

fn logsign_inv(y: f64) -> f64 {
    libm::copysign(libm::expm1(y.abs()), y)
}

impl Summary {
    /// Population statistics, accumulated in `f64` in index order.
    pub fn of<T: Real>(data: &[T]) -> Self {
        let n = data.len().max(1) as f64;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &x in data {
            let x = x.as_f64();
            min = min.min(x);
            max = max.max(x);
            sum += x;
        }
        let mean = sum / n;
        let var = data.iter().map(|&x| (x.as_f64() - mean) * (x.as_f64() - mean)).sum::<f64>() / n;
        Summary {
            count: data.len(),
            min,
            max,
            mean,
            std: libm::sqrt(var),
            logsign_min: logsign(min),
            logsign_max: logsign(max),
        }
    }

    pub fn stats(&self, scheme: NormScheme) -> Result<NormStats> {
        let stats = match scheme {
            NormScheme::Minmax => NormStats::Minmax { min: self.min, max: self.max },
            NormScheme::Standardize => NormStats::Standardize { mean: self.mean, std: self.std },
            NormScheme::LogsignMinmax => NormStats::LogsignMinmax { min: self.logsign_min, max: self.logsign_max },
        };
        stats.validate()?;
        Ok(stats)
    }
}

impl NormStats {
    pub fn scheme(&self) -> NormScheme {
        match self {
            NormStats::Minmax { .. } => NormScheme::Minmax,
            NormStats::Standardize { .. } => NormScheme::Standardize,
            NormStats::LogsignMinmax { .. } => NormScheme::LogsignMinmax,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NormStats::Minmax { min, max } | NormStats::LogsignMinmax { min, max } => {
                if !(max > min) || !min.is_finite() || !max.is_finite() {
                    return Err(Error::DegenerateStats(self.scheme().name()));
                }
            }
            NormStats::Standardize { mean, std } => {
                if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
                    return Err(Error::DegenerateStats(self.scheme().name()));
                }
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: f64) -> f64 {
        match *self {
            NormStats::Minmax { min, max } => (x - min) / (max - min),
            NormStats::Standardize { mean, std } => (x - mean) / std,
            NormStats::LogsignMinmax { min, max } => (logsign(x) - min) / (max - min),
        }
    }

    pub fn inverse(&self, y: f64) -> f64 {
        match *self {
            NormStats::Minmax { min, max } => y * (max - min) + min,
            NormStats::Standardize { mean, std } => y * std + mean,
            NormStats::LogsignMinmax { min, max } => logsign_inv(y * (max - min) + min),
        }
    }
}

/// Normalization of both domains, as stored in manifests and checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub velocity: NormStats,
    pub waveform: NormStats,
}

impl Norms {
    pub fn get(&self, d: Domain) -> &NormStats {
        match d {
            Domain::Velocity => &self.velocity,
            Domain::Waveform => &self.waveform,
        }
    }
}

pub fn normalize<T: Real>(x: &Tensor<T>, stats: &NormStats) -> Result<Tensor<T>> {
    stats.validate()?;
    Ok(x.map(|v| T::of(stats.forward(v.as_f64()))))
}

pub fn unnormalize<T: Real>(y: &Tensor<T>, stats: &NormStats) -> Result<Tensor<T>> {
    stats.validate()?;
    Ok(y.map(|v| T::of(stats.inverse(v.as_f64()))))
}
