//! Portable-anymap images of velocity maps and shot gathers.

use gfi_core::Tensor;

use crate::error::{CliError, Result};

// Jet-like ramp: blue (slow) → cyan → yellow → red (fast).
const STOPS: [(f64, [f64; 3]); 5] = [
    (0.0, [0.0, 0.0, 0.5]),
    (0.25, [0.0, 0.5, 1.0]),
    (0.5, [0.5, 1.0, 0.5]),
    (0.75, [1.0, 0.75, 0.0]),
    (1.0, [0.5, 0.0, 0.0]),
];

pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.5 };
    let k = STOPS.iter().position(|s| s.0 >= t).unwrap_or(STOPS.len() - 1).max(1);
    let ((t0, c0), (t1, c1)) = (STOPS[k - 1], STOPS[k]);
    let a = (t - t0) / (t1 - t0);
    let mut out = [0u8; 3];
    for i in 0..3 {
        out[i] = ((c0[i] + a * (c1[i] - c0[i])) * 255.0).round() as u8;
    }
    out
}

/// `(1,H,W)` or `(H,W)` velocity map → P6 image. `range` defaults to the map's own min/max.
pub fn velocity_ppm(v: &Tensor<f32>, range: Option<(f64, f64)>) -> Result<Vec<u8>> {
    let (h, w) = match *v.shape() {
        [1, h, w] | [h, w] => (h, w),
        ref s => return Err(CliError::Usage(format!("velocity render needs a (1,H,W) map, got {s:?}"))),
    };
    let (lo, hi) = range.unwrap_or((v.min_value() as f64, v.max_value() as f64));
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for &x in v.data() {
        let t = if hi > lo { (x as f64 - lo) / (hi - lo) } else { 0.5 };
        out.extend_from_slice(&colormap(t));
    }
    Ok(out)
}

/// Nearest-rank percentile of `|x|`.
pub fn abs_percentile(xs: &[f32], q: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut a: Vec<f32> = xs.iter().map(|x| x.abs()).collect();
    let rank = ((q * a.len() as f64).ceil() as usize).clamp(1, a.len()) - 1;
    let (_, v, _) = a.select_nth_unstable_by(rank, f32::total_cmp);
    *v as f64
}

/// Gray level of amplitude `x` clipped symmetrically at `clip`; zero maps to 128.
pub fn gray(x: f32, clip: f64) -> u8 {
    if clip > 0.0 {
        (127.5 + 127.5 * (x as f64 / clip).clamp(-1.0, 1.0)).round() as u8
    } else {
        128
    }
}

/// `(S,T,R)` survey → one P5 image of the S panels side by side (time down, receivers across).
pub fn waveform_pgm(p: &Tensor<f32>) -> Result<Vec<u8>> {
    let [s, t, r] = *p.shape() else {
        return Err(CliError::Usage(format!("waveform render needs an (S,T,R) survey, got {:?}", p.shape())));
    };
    let clip = abs_percentile(p.data(), 0.99);
    let mut out = format!("P5\n{} {t}\n255\n", s * r).into_bytes();
    let d = p.data();
    for it in 0..t {
        for is in 0..s {
            let row = &d[(is * t + it) * r..][..r];
            out.extend(row.iter().map(|&x| gray(x, clip)));
        }
    }
    Ok(out)
}
