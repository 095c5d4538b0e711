//! Explicit finite-difference solver for the 2-D constant-density acoustic
//! wave equation `∇²p − v⁻² ∂²p/∂t² = s`.
//!
//! Second order in time, fourth order in space. The top edge is a free
//! surface (`p = 0` with antisymmetric ghost rows); the left, right and
//! bottom edges are padded with a damping sponge. Damping enters the
//! equation as a first-order term `v⁻²·η·∂p/∂t`, which keeps the discrete
//! operator symmetric so source/receiver reciprocity holds to rounding.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stability limit of `vmax·dt·√2/dx` for the 4th-order-space / 2nd-order-time stencil.
/// The von Neumann bound is `√(3/4) ≈ 0.866`.
pub const CFL_LIMIT: f64 = 0.85;

const C0: f64 = -5.0 / 2.0;
const C1: f64 = 4.0 / 3.0;
const C2: f64 = -1.0 / 12.0;

/// Ricker wavelet `(1 − 2π²f0²τ²)·exp(−π²f0²τ²)` with `τ = t − t0`.
pub fn ricker(f0: f64, t0: f64, t: f64) -> f64 {
    let a = PI * PI * f0 * f0 * (t - t0) * (t - t0);
    (1.0 - 2.0 * a) * libm::exp(-a)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub nx: usize,
    pub nz: usize,
    /// Grid spacing in metres (both axes).
    pub dx: f64,
    /// Time step in seconds; also the recording interval.
    pub dt: f64,
    pub nt: usize,
    /// Ricker peak frequency in Hz.
    pub f0: f64,
    /// Ricker delay in seconds.
    pub t0: f64,
    #[serde(default = "default_amplitude")]
    pub source_amplitude: f64,
    pub source_depth: usize,
    pub receiver_depth: usize,
    pub source_positions: Vec<usize>,
    pub receiver_positions: Vec<usize>,
    pub sponge_width: usize,
    pub sponge_strength: f64,
}

fn default_amplitude() -> f64 {
    1.0
}

/// Column indices spreading `count` points uniformly over `0..width`.
pub fn uniform_positions(count: usize, width: usize) -> Vec<usize> {
    match count {
        0 => Vec::new(),
        1 => vec![width / 2],
        _ => (0..count).map(|i| (i * (width - 1) + (count - 1) / 2) / (count - 1)).collect(),
    }
}

impl SimConfig {
    /// Surface acquisition over an `nx × nz` grid with the default source and sponge.
    pub fn surface(nx: usize, nz: usize, nt: usize, sources: usize, receivers: usize) -> Self {
        let f0 = 15.0;
        SimConfig {
            nx,
            nz,
            dx: 10.0,
            dt: 1e-3,
            nt,
            f0,
            t0: 1.2 / f0,
            source_amplitude: 1.0,
            source_depth: 1,
            receiver_depth: 1,
            source_positions: uniform_positions(sources, nx),
            receiver_positions: uniform_positions(receivers, nx),
            sponge_width: 20,
            sponge_strength: 0.0035,
        }
    }

    /// 32 × 32 grid, 3 sources, 32 receivers, 250 samples.
    pub fn desk() -> Self {
        Self::surface(32, 32, 250, 3, 32)
    }

    /// 70 × 70 grid, 5 sources, 70 receivers, 1000 samples at 1 ms.
    pub fn full() -> Self {
        Self::surface(70, 70, 1000, 5, 70)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if !(self.dx > 0.0 && self.dt > 0.0 && self.f0 > 0.0) {
            return bad(format!("dx, dt and f0 must be positive (dx={}, dt={}, f0={})", self.dx, self.dt, self.f0));
        }
        if self.nt == 0 || self.nx == 0 || self.nz == 0 {
            return bad("nx, nz and nt must be at least 1".into());
        }
        if self.source_depth >= self.nz || self.receiver_depth >= self.nz {
            return bad(format!("source/receiver depth must be below {}", self.nz));
        }
        if let Some(&p) = self.source_positions.iter().chain(&self.receiver_positions).find(|&&p| p >= self.nx) {
            return bad(format!("position {p} outside a grid of width {}", self.nx));
        }
        if self.receiver_positions.is_empty() {
            return bad("at least one receiver is required".into());
        }
        if !(self.sponge_strength >= 0.0) {
            return bad("sponge strength must be non-negative".into());
        }
        Ok(())
    }

    pub fn cfl_number(&self, vmax: f64) -> f64 {
        vmax * self.dt * core::f64::consts::SQRT_2 / self.dx
    }
}

/// Accepts `cfg` iff `vmax·dt·√2/dx ≤` [`CFL_LIMIT`].
pub fn check_cfl(cfg: &SimConfig, vmax: f64) -> Result<()> {
    if !(vmax > 0.0) || !vmax.is_finite() {
        return Err(Error::InvalidConfig(format!("maximum velocity must be positive, got {vmax}")));
    }
    let cfl = cfg.cfl_number(vmax);
    if cfl > CFL_LIMIT {
        return Err(Error::CflViolation { cfl, limit: CFL_LIMIT });
    }
    Ok(())
}

/// Subsurface velocity field in m/s, stored as a `(1, nz, nx)` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityMap {
    values: Tensor<f64>,
}

impl VelocityMap {
    pub fn new(values: Tensor<f64>) -> Result<Self> {
        let shape = values.shape();
        if shape.len() != 3 || shape[0] != 1 {
            return Err(Error::ShapeMismatch { op: "velocity map", expected: vec![1, 0, 0], found: shape.to_vec() });
        }
        if values.data().iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig("velocities must be positive and finite".into()));
        }
        Ok(VelocityMap { values })
    }

    /// Constant-velocity `nz × nx` map.
    pub fn homogeneous(nz: usize, nx: usize, v: f64) -> Result<Self> {
        Self::new(Tensor::full(&[1, nz, nx], v))
    }

    pub fn nz(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn nx(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn at(&self, z: usize, x: usize) -> f64 {
        self.values.data()[z * self.nx() + x]
    }

    pub fn max(&self) -> f64 {
        self.values.max_value()
    }

    pub fn tensor(&self) -> &Tensor<f64> {
        &self.values
    }
}

/// Recorded survey `(sources, time samples, receivers)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveformCube {
    pub values: Tensor<f64>,
    pub dt_record: f64,
}

/// Padded computational grid: physical rows start at the free surface;
/// the sponge sits left, right and below. Two extra halo cells on every
/// side hold ghost values for the 4th-order stencil.
struct Grid {
    width: usize,
    height: usize,
    /// Stride of the halo-padded arrays.
    stride: usize,
    /// `dt²v²/dx²` per cell.
    courant2: Vec<f64>,
    /// `η·dt/2` per cell.
    damp: Vec<f64>,
}

const HALO: usize = 2;

impl Grid {
    fn build(vmap: &VelocityMap, cfg: &SimConfig) -> Self {
        let sw = cfg.sponge_width;
        let width = vmap.nx() + 2 * sw;
        let height = vmap.nz() + sw;
        let stride = width + 2 * HALO;
        let mut courant2 = vec![0.0; width * height];
        let mut damp = vec![0.0; width * height];
        let r = cfg.dt / cfg.dx;
        for z in 0..height {
            let mz = z.min(vmap.nz() - 1);
            for x in 0..width {
                let mx = x.saturating_sub(sw).min(vmap.nx() - 1);
                let v = vmap.at(mz, mx);
                courant2[z * width + x] = r * r * v * v;
                let depth_x = if x < sw { sw - x } else if x >= sw + vmap.nx() { x - (sw + vmap.nx()) + 1 } else { 0 };
                let depth_z = if z >= vmap.nz() { z - vmap.nz() + 1 } else { 0 };
                damp[z * width + x] = sponge_profile(depth_x, cfg) + sponge_profile(depth_z, cfg);
            }
        }
        Grid { width, height, stride, courant2, damp }
    }

    #[inline]
    fn idx(&self, z: usize, x: usize) -> usize {
        (z + HALO) * self.stride + x + HALO
    }
}

/// `η·dt/2` at `depth` cells into the sponge: a quadratic ramp reaching `strength·width` at the outer edge.
fn sponge_profile(depth: usize, cfg: &SimConfig) -> f64 {
    if depth == 0 {
        return 0.0;
    }
    let d = depth as f64;
    cfg.sponge_strength * d * d / cfg.sponge_width as f64
}

/// Simulates one shot and returns the `(nt, receivers)` pressure panel.
pub fn simulate_shot(vmap: &VelocityMap, source_index: usize, cfg: &SimConfig) -> Result<Tensor<f64>> {
    run_shot(vmap, source_index, cfg).map(|(panel, _)| panel)
}

/// Largest `|p|` reached anywhere on the grid during one shot.
pub fn shot_field_peak(vmap: &VelocityMap, source_index: usize, cfg: &SimConfig) -> Result<f64> {
    run_shot(vmap, source_index, cfg).map(|(_, peak)| peak)
}

fn run_shot(vmap: &VelocityMap, source_index: usize, cfg: &SimConfig) -> Result<(Tensor<f64>, f64)> {
    cfg.validate()?;
    if vmap.nx() != cfg.nx || vmap.nz() != cfg.nz {
        return Err(Error::ShapeMismatch {
            op: "simulate_shot",
            expected: vec![1, cfg.nz, cfg.nx],
            found: vmap.tensor().shape().to_vec(),
        });
    }
    check_cfl(cfg, vmap.max())?;
    let sx = *cfg.source_positions.get(source_index).ok_or_else(|| {
        Error::InvalidConfig(format!("source index {source_index} out of {} sources", cfg.source_positions.len()))
    })?;
    let grid = Grid::build(vmap, cfg);
    let sw = cfg.sponge_width;
    let total = grid.stride * (grid.height + 2 * HALO);
    let mut prev = vec![0.0f64; total];
    let mut cur = vec![0.0f64; total];
    let mut next = vec![0.0f64; total];
    let src = grid.idx(cfg.source_depth, sx + sw);
    let src_cell = cfg.source_depth * grid.width + sx + sw;
    let receivers: Vec<usize> = cfg.receiver_positions.iter().map(|&x| grid.idx(cfg.receiver_depth, x + sw)).collect();
    let nr = receivers.len();
    let mut panel = vec![0.0; cfg.nt * nr];
    let s = grid.stride;
    let mut peak = 0.0f64;

    for n in 0..cfg.nt {
        // Record the field at time n·dt.
        for (r, &ri) in receivers.iter().enumerate() {
            panel[n * nr + r] = cur[ri];
        }
        // Free surface: p = 0 on row 0, antisymmetric ghosts above it.
        for x in 0..grid.width {
            let top = grid.idx(0, x);
            cur[top] = 0.0;
            cur[top - s] = -cur[top + s];
            cur[top - 2 * s] = -cur[top + 2 * s];
        }
        for z in 1..grid.height {
            let row = z * grid.width;
            for x in 0..grid.width {
                let i = grid.idx(z, x);
                let lap = 2.0 * C0 * cur[i]
                    + C1 * (cur[i - 1] + cur[i + 1] + cur[i - s] + cur[i + s])
                    + C2 * (cur[i - 2] + cur[i + 2] + cur[i - 2 * s] + cur[i + 2 * s]);
                let d = grid.damp[row + x];
                next[i] = (2.0 * cur[i] - (1.0 - d) * prev[i] + grid.courant2[row + x] * lap) / (1.0 + d);
            }
        }
        let amp = cfg.source_amplitude * ricker(cfg.f0, cfg.t0, n as f64 * cfg.dt);
        next[src] += grid.courant2[src_cell] * amp / (1.0 + grid.damp[src_cell]);
        let step_peak = next.iter().fold(0.0f64, |m, &v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY });
        if !step_peak.is_finite() {
            return Err(Error::Instability { step: n });
        }
        peak = peak.max(step_peak);
        core::mem::swap(&mut prev, &mut cur);
        core::mem::swap(&mut cur, &mut next);
    }
    Ok((Tensor::new(&[cfg.nt, nr], panel)?, peak))
}

/// Runs every configured shot and stacks the panels into `(S, T, R)`.
pub fn simulate_survey(vmap: &VelocityMap, cfg: &SimConfig) -> Result<WaveformCube> {
    let mut panels = Vec::with_capacity(cfg.source_positions.len());
    for s in 0..cfg.source_positions.len() {
        let panel = simulate_shot(vmap, s, cfg).map_err(|e| Error::Shot { source_index: s, inner: e.into() })?;
        panels.push(panel);
    }
    Ok(WaveformCube { values: Tensor::stack(&panels)?, dt_record: cfg.dt })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ricker_peak_and_symmetry() {
        assert_eq!(ricker(15.0, 0.08, 0.08), 1.0);
        for d in [0.001, 0.013, 0.05] {
            assert_eq!(ricker(15.0, 0.08, 0.08 + d), ricker(15.0, 0.08, 0.08 - d));
        }
    }

    #[test]
    fn ricker_integrates_to_zero() {
        // Composite Simpson over ±5/f0.
        let (f0, t0) = (15.0, 0.2);
        let (a, b) = (t0 - 5.0 / f0, t0 + 5.0 / f0);
        let n = 4000;
        let h = (b - a) / n as f64;
        let mut s = ricker(f0, t0, a) + ricker(f0, t0, b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * ricker(f0, t0, a + i as f64 * h);
        }
        let integral = s * h / 3.0;
        assert!(integral.abs() < 1e-6 * (b - a));
    }

    #[test]
    fn cfl_examples() {
        let mut cfg = SimConfig::desk();
        cfg.dt = 1e-3;
        cfg.dx = 10.0;
        assert!((cfg.cfl_number(4500.0) - 0.6364).abs() < 1e-4);
        assert!(check_cfl(&cfg, 4500.0).is_ok());
        match check_cfl(&cfg, 8000.0) {
            Err(Error::CflViolation { cfl, .. }) => assert!((cfl - 1.1314).abs() < 1e-4),
            other => panic!("expected a CFL violation, got {other:?}"),
        }
        assert!(matches!(check_cfl(&cfg, 0.0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn zero_source_gives_silence() {
        let mut cfg = SimConfig::desk();
        cfg.source_amplitude = 0.0;
        let vmap = VelocityMap::homogeneous(32, 32, 2000.0).unwrap();
        let panel = simulate_shot(&vmap, 0, &cfg).unwrap();
        assert!(panel.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn survey_shapes() {
        let vmap = VelocityMap::homogeneous(32, 32, 2000.0).unwrap();
        let cube = simulate_survey(&vmap, &SimConfig::desk()).unwrap();
        assert_eq!(cube.values.shape(), &[3, 250, 32]);
    }

    #[test]
    fn uniform_positions_span_the_grid() {
        assert_eq!(uniform_positions(3, 32), vec![0, 16, 31]);
        assert_eq!(uniform_positions(5, 70), vec![0, 17, 35, 52, 69]);
        assert_eq!(uniform_positions(32, 32), (0..32).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_out_of_grid_positions() {
        let mut cfg = SimConfig::desk();
        cfg.receiver_positions.push(40);
        assert!(cfg.validate().is_err());
    }
}
