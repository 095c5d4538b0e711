//! MAE/MSE/SSIM in unnormalized space, dataset reports and zero-shot grids.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datagen::{normalize, unnormalize, Norms, PairedData, Summary};
use crate::error::{Error, Result};
use crate::models::{Direction, Domain, GfiModel};
use crate::real::Real;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

const EVAL_BATCH: usize = 16;

fn check_same(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch { op, expected: a.to_vec(), found: b.to_vec() });
    }
    Ok(())
}

pub fn mae<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check_same("mae", target.shape(), pred.shape())?;
    let s: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).sum();
    Ok(s / pred.len() as f64)
}

pub fn mse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check_same("mse", target.shape(), pred.shape())?;
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum();
    Ok(s / pred.len() as f64)
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Valid-mode separable Gaussian filter of an `h × w` image.
fn filter(img: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ho, wo) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = g.iter().enumerate().map(|(k, gk)| gk * img[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = g.iter().enumerate().map(|(k, gk)| gk * rows[(y + k) * wo + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully-contained 11×11 Gaussian windows.
pub fn ssim(a: &[f64], b: &[f64], h: usize, w: usize, dynamic_range: f64) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::ShapeMismatch { op: "ssim", expected: vec![h, w], found: vec![a.len(), b.len()] });
    }
    if !(dynamic_range > 0.0) {
        return Err(Error::InvalidConfig(format!("SSIM dynamic range must be positive, got {dynamic_range}")));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall { h, w, window: SSIM_WINDOW });
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * dynamic_range) * (SSIM_K1 * dynamic_range);
    let c2 = (SSIM_K2 * dynamic_range) * (SSIM_K2 * dynamic_range);
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter(a, h, w, &g);
    let mu_b = filter(b, h, w, &g);
    let aa = filter(&prod(|x, _| x * x), h, w, &g);
    let bb = filter(&prod(|_, y| y * y), h, w, &g);
    let ab = filter(&prod(|x, y| x * y), h, w, &g);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

/// SSIM of `(C,H,W)` images averaged over channels, after rescaling by `range` to `[0,1]`.
pub fn ssim_channels<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, range: (f64, f64)) -> Result<f64> {
    check_same("ssim", target.shape(), pred.shape())?;
    let &[c, h, w] = pred.shape() else {
        return Err(Error::ShapeMismatch { op: "ssim", expected: vec![0, 0, 0], found: pred.shape().to_vec() });
    };
    let span = range.1 - range.0;
    if !(span > 0.0) {
        return Err(Error::DegenerateStats("ssim range"));
    }
    let scale = |t: &[T]| -> Vec<f64> { t.iter().map(|v| (v.as_f64() - range.0) / span).collect() };
    let mut total = 0.0;
    for ch in 0..c {
        let sl = ch * h * w..(ch + 1) * h * w;
        total += ssim(&scale(&pred.data()[sl.clone()]), &scale(&target.data()[sl]), h, w, 1.0)?;
    }
    Ok(total / c as f64)
}

/// Raw (unnormalized) paired samples plus the manifest statistics of their dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub name: String,
    pub data: PairedData,
    pub norms: Norms,
    pub summary_v: Summary,
    pub summary_p: Summary,
}

impl EvalSet {
    pub fn range(&self, d: Domain) -> (f64, f64) {
        let s = match d {
            Domain::Velocity => &self.summary_v,
            Domain::Waveform => &self.summary_p,
        };
        (s.min, s.max)
    }

    pub fn tensor(&self, d: Domain) -> &Tensor<f32> {
        match d {
            Domain::Velocity => &self.data.velocity,
            Domain::Waveform => &self.data.waveform,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub index: usize,
    pub mae: f64,
    pub mse: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub direction: Direction,
    pub dataset: String,
    pub checkpoint: String,
    pub samples: Vec<SampleMetrics>,
    pub mae: f64,
    pub mse: f64,
    pub ssim: f64,
}

impl MetricReport {
    /// Aggregates are plain means of the per-sample values.
    pub fn from_samples(direction: Direction, dataset: &str, checkpoint: &str, samples: Vec<SampleMetrics>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = samples.len() as f64;
        let mean = |f: fn(&SampleMetrics) -> f64| samples.iter().map(f).sum::<f64>() / n;
        Ok(MetricReport {
            direction,
            dataset: dataset.to_string(),
            checkpoint: checkpoint.to_string(),
            mae: mean(|s| s.mae),
            mse: mean(|s| s.mse),
            ssim: mean(|s| s.ssim),
            samples,
        })
    }

    /// One-line summary; velocity errors are in m/s.
    pub fn summary_line(&self) -> String {
        let unit = if self.direction.target() == Domain::Velocity { " m/s" } else { "" };
        format!(
            "{} on {} ({}): MAE {:.2}{unit}  MSE {:.2}  SSIM {:.4}",
            self.checkpoint,
            self.dataset,
            self.direction.name(),
            self.mae,
            self.mse,
            self.ssim
        )
    }
}

/// Scheme names must agree between checkpoint and dataset; the values may differ.
pub fn check_norms(model: &Norms, data: &Norms) -> Result<()> {
    for (what, a, b) in [("velocity", model.velocity, data.velocity), ("waveform", model.waveform, data.waveform)] {
        if a.scheme() != b.scheme() {
            return Err(Error::StatsMismatch(format!(
                "{what}: checkpoint uses {}, dataset uses {}",
                a.scheme().name(),
                b.scheme().name()
            )));
        }
    }
    Ok(())
}

/// Metrics for the given sample indices, in the order given.
pub fn evaluate_indices<T: Real>(
    model: &GfiModel<T>,
    norms: &Norms,
    set: &EvalSet,
    direction: Direction,
    indices: &[usize],
) -> Result<Vec<SampleMetrics>> {
    check_norms(norms, &set.norms)?;
    model.translator(direction)?;
    let (src, dst) = (direction.source(), direction.target());
    let range = set.range(dst);
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let x = normalize(&set.tensor(src).gather(chunk), norms.get(src))?.cast::<T>();
        let pred = unnormalize(&model.predict(&x, direction)?, norms.get(dst))?;
        for (k, &index) in chunk.iter().enumerate() {
            let p = pred.item(k).cast::<f64>();
            let t = set.tensor(dst).item(index).cast::<f64>();
            out.push(SampleMetrics { index, mae: mae(&p, &t)?, mse: mse(&p, &t)?, ssim: ssim_channels(&p, &t, range)? });
        }
    }
    Ok(out)
}

pub fn evaluate<T: Real>(
    model: &GfiModel<T>,
    norms: &Norms,
    set: &EvalSet,
    direction: Direction,
    checkpoint: &str,
) -> Result<MetricReport> {
    let indices: Vec<usize> = (0..set.data.len()).collect();
    let samples = evaluate_indices(model, norms, set, direction, &indices)?;
    MetricReport::from_samples(direction, &set.name, checkpoint, samples)
}

/// Row-major grid of aggregate metrics: rows are checkpoints (labelled by their
/// training dataset), columns are evaluation datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub direction: Direction,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub mae: Vec<f64>,
    pub mse: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl Grid {
    pub fn from_reports(direction: Direction, rows: Vec<String>, cols: Vec<String>, reports: &[MetricReport]) -> Result<Self> {
        if reports.len() != rows.len() * cols.len() {
            return Err(Error::ShapeMismatch {
                op: "grid",
                expected: vec![rows.len(), cols.len()],
                found: vec![reports.len()],
            });
        }
        Ok(Grid {
            direction,
            mae: reports.iter().map(|r| r.mae).collect(),
            mse: reports.iter().map(|r| r.mse).collect(),
            ssim: reports.iter().map(|r| r.ssim).collect(),
            rows,
            cols,
        })
    }

    pub fn cell(&self, row: usize, col: usize) -> (f64, f64, f64) {
        let i = row * self.cols.len() + col;
        (self.mae[i], self.mse[i], self.ssim[i])
    }

    /// Element-wise `self − other`; both grids must share labels and direction.
    pub fn difference(&self, other: &Grid) -> Result<Grid> {
        if self.rows != other.rows || self.cols != other.cols || self.direction != other.direction {
            return Err(Error::InvalidConfig("difference needs grids over the same datasets and direction".into()));
        }
        let sub = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect();
        Ok(Grid {
            direction: self.direction,
            rows: self.rows.clone(),
            cols: self.cols.clone(),
            mae: sub(&self.mae, &other.mae),
            mse: sub(&self.mse, &other.mse),
            ssim: sub(&self.ssim, &other.ssim),
        })
    }
}

/// A trained model with the normalization it was trained under.
pub struct GridEntry<'a, T> {
    /// Training dataset name, used as the row label.
    pub trained_on: String,
    pub checkpoint: String,
    pub model: &'a GfiModel<T>,
    pub norms: &'a Norms,
}

pub fn zero_shot_grid<T: Real>(entries: &[GridEntry<'_, T>], sets: &[EvalSet], direction: Direction) -> Result<Grid> {
    if entries.is_empty() || sets.is_empty() {
        return Err(Error::InvalidConfig("zero-shot grid needs at least one checkpoint and one dataset".into()));
    }
    let mut reports = Vec::with_capacity(entries.len() * sets.len());
    for e in entries {
        for s in sets {
            reports.push(evaluate(e.model, e.norms, s, direction, &e.checkpoint)?);
        }
    }
    let rows = entries.iter().map(|e| e.trained_on.clone()).collect();
    let cols = sets.iter().map(|s| s.name.clone()).collect();
    Grid::from_reports(direction, rows, cols, &reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        let a = Tensor::new(&[4], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let b = a.map(|v| v + 0.5);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert_eq!(mae(&a, &b).unwrap(), 0.5);
        assert_eq!(mse(&a, &b).unwrap(), 0.25);
        let c = Tensor::new(&[2, 2], vec![0.0; 4]).unwrap();
        assert!(mae(&a, &c).is_err());
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let g = gaussian_window();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(g[i], g[SSIM_WINDOW - 1 - i]);
        }
    }

    #[test]
    fn constant_images_closed_form() {
        let (a, b) = (0.3, 0.7);
        let s = ssim(&[a; 144], &[b; 144], 12, 12, 1.0).unwrap();
        let c1 = 0.01f64 * 0.01;
        let expect = (2.0 * a * b + c1) / (a * a + b * b + c1);
        assert!((s - expect).abs() < 1e-12, "{s} vs {expect}");
    }

    #[test]
    fn ssim_errors() {
        assert_eq!(ssim(&[0.0; 100], &[0.0; 100], 10, 10, 1.0), Err(Error::ImageTooSmall { h: 10, w: 10, window: 11 }));
        assert!(ssim(&[0.0; 121], &[0.0; 121], 11, 11, 0.0).is_err());
        assert!(ssim(&[0.0; 121], &[0.0; 120], 11, 11, 1.0).is_err());
    }

    #[test]
    fn velocity_summary_prints_two_decimals() {
        let s = SampleMetrics { index: 0, mae: 9.0071, mse: 200.0, ssim: 0.9 };
        let r = MetricReport::from_samples(Direction::Inverse, "flat-A", "unet", vec![s]).unwrap();
        assert!(r.summary_line().contains("MAE 9.01 m/s"), "{}", r.summary_line());
    }
}
