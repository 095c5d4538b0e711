//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//!
//! Run with `cargo test -p gfi --test acceptance`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use gfi::checkpoint::{self, Meta};
use gfi::dataset::{Dataset, Part};
use gfi_core::datagen::{
    generate_sample, normalize, unnormalize, Complexity, Family, FamilySpec, NormScheme, NormStats, Norms, PairedData,
    Summary,
};
use gfi_core::error::Error;
use gfi_core::eval::{evaluate, ssim};
use gfi_core::gradcheck::{finite_difference_grad, max_relative_error};
use gfi_core::kernels::ConvGeom;
use gfi_core::models::{Direction, GfiModel, ModelConfig, ModelKind, Preset, Translator, TranslatorSpec};
use gfi_core::nn::Layer;
use gfi_core::training::{
    pair_bytes, train, translator_gradient_norm, LossSpec, TrainConfig, TrainData, TrainMode,
};
use gfi_core::wave::{ricker, simulate_shot, simulate_survey, SimConfig, VelocityMap};
use gfi_core::{Graph, ParamStore, Real, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

// ---------------------------------------------------------------------------
// shared fixtures

fn flat_data(n: usize, seed: u64) -> PairedData {
    let spec = FamilySpec::preset(Family::Flat, Complexity::A, 32, 32, seed);
    let sim = SimConfig::desk();
    let (vs, ps): (Vec<_>, Vec<_>) = (0..n).map(|i| generate_sample(&spec, &sim, i).unwrap()).unzip();
    PairedData::new(Tensor::stack(&vs).unwrap(), Tensor::stack(&ps).unwrap()).unwrap()
}

fn flat64() -> &'static PairedData {
    static D: OnceLock<PairedData> = OnceLock::new();
    D.get_or_init(|| flat_data(64, 1))
}

fn default_norms(d: &PairedData) -> Norms {
    Norms {
        velocity: Summary::of(d.velocity.data()).stats(NormScheme::Minmax).unwrap(),
        waveform: Summary::of(d.waveform.data()).stats(NormScheme::Standardize).unwrap(),
    }
}

fn desk_model(kind: ModelKind, mode: TrainMode) -> GfiModel<f32> {
    GfiModel::new(ModelConfig::preset(kind, Preset::Desk, mode.model_mode(kind), 0)).unwrap()
}

fn drop_ratio(first: f64, last: f64) -> f64 {
    1.0 - last / first
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_gfi")
}

fn gfi(cwd: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin())
        .current_dir(cwd)
        .env("GFI_DETERMINISTIC", "1")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .map_err(|e| format!("spawn gfi: {e}"))?;
    if !out.status.success() {
        return Err(format!("gfi {} exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn csv_rows(path: &Path) -> Result<Vec<BTreeMap<String, String>>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| format!("{}: {e}", path.display()))
}

fn num(row: &BTreeMap<String, String>, k: &str) -> f64 {
    row[k].parse().unwrap_or(f64::NAN)
}

// ---------------------------------------------------------------------------
// 1. gradcheck

const FD_STEP: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-3;

fn distinct_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut levels: Vec<f64> = (0..n).map(|i| 0.05 + 0.95 * i as f64 / n.max(2) as f64).collect();
    for i in (1..n).rev() {
        levels.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape, levels.into_iter().map(|v| if rng.gen_bool(0.5) { v } else { -v }).collect()).unwrap()
}

/// Largest relative error between autodiff and central differences, over the input and all parameters.
fn grad_error<F>(store: &ParamStore<f64>, x: &Tensor<f64>, rng: &mut ChaCha8Rng, forward: F) -> f64
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, Var) -> gfi_core::Result<Var>,
{
    let objective = |g: &mut Graph<f64>, y: Var, r: &Tensor<f64>| -> gfi_core::Result<Var> {
        let r = g.constant(r);
        let d = g.sub(y, r)?;
        let a = g.mean_sq(d);
        let b = g.mean_abs(d);
        g.add(a, b)
    };
    let shape = {
        let mut g = Graph::new();
        let xv = g.constant(x);
        let y = forward(&mut g, store, xv).unwrap();
        g.shape(y).to_vec()
    };
    let target = Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0));
    let eval = |x: &Tensor<f64>, s: &ParamStore<f64>| -> gfi_core::Result<f64> {
        let mut g = Graph::new();
        let xv = g.constant(x);
        let y = forward(&mut g, s, xv)?;
        let l = objective(&mut g, y, &target)?;
        Ok(g.scalar(l))
    };
    let mut g = Graph::new();
    let xv = g.input(&x.clone().with_requires_grad(true));
    let y = forward(&mut g, store, xv).unwrap();
    let l = objective(&mut g, y, &target).unwrap();
    g.backward(l).unwrap();
    let mut grads = store.clone();
    grads.zero_grads();
    g.write_param_grads(&mut grads);

    let fd = finite_difference_grad(|t| eval(t, store), x, FD_STEP).unwrap();
    let ad = g.grad(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]);
    let mut worst = max_relative_error(&ad, fd.data(), FD_FLOOR);
    for id in store.ids() {
        let fd = finite_difference_grad(
            |t| {
                let mut s = store.clone();
                s.get_mut(id).data_mut().copy_from_slice(t.data());
                eval(x, &s)
            },
            store.get(id),
            FD_STEP,
        )
        .unwrap();
        let ad = grads.get(id).grad.clone().unwrap_or_else(|| vec![0.0; fd.len()]);
        worst = worst.max(max_relative_error(&ad, fd.data(), FD_FLOOR));
    }
    worst
}

fn c1_gradcheck() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |k: &'static str, e: f64| {
        let w = worst.entry(k).or_insert(0.0);
        *w = w.max(e);
    };
    const CONFIGS: usize = 20;
    for _ in 0..CONFIGS {
        let (cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let geom = ConvGeom {
            kh: rng.gen_range(1..4),
            kw: rng.gen_range(1..4),
            sh: rng.gen_range(1..3),
            sw: rng.gen_range(1..3),
            ph: rng.gen_range(0..2),
            pw: rng.gen_range(0..2),
        };
        let (h, w) = (rng.gen_range(geom.kh..7), rng.gen_range(geom.kw..7));
        let mut s = ParamStore::new();
        let l = Layer::conv2d(&mut s, &mut rng, "c", cin, cout, geom);
        let x = distinct_input(&mut rng, &[2, cin, h, w]);
        note("conv2d", grad_error(&s, &x, &mut rng, |g, s, v| l.forward(g, s, v)));

        let geom = ConvGeom { kh: rng.gen_range(2..5), pw: 0, ..geom };
        let extra = (rng.gen_range(0..geom.sh), rng.gen_range(0..geom.sw));
        let mut s = ParamStore::new();
        let l = Layer::conv_transpose2d(&mut s, &mut rng, "t", cin, cout, geom, extra);
        let (h, w) = (rng.gen_range(2..5), rng.gen_range(2..5));
        let x = distinct_input(&mut rng, &[2, cin, h, w]);
        note("conv_transpose2d", grad_error(&s, &x, &mut rng, |g, s, v| l.forward(g, s, v)));

        let c = rng.gen_range(1..4);
        let (h, w) = (rng.gen_range(2..7), rng.gen_range(2..7));
        let x = distinct_input(&mut rng, &[2, c, h, w]);
        let empty = ParamStore::new();
        let l = Layer::LeakyRelu { slope: rng.gen_range(0.0..0.5) };
        note("leaky_relu", grad_error(&empty, &x, &mut rng, |g, s, v| l.forward(g, s, v)));
        let l = Layer::Upsample { fh: rng.gen_range(1..3), fw: rng.gen_range(1..3) };
        note("upsample", grad_error(&empty, &x, &mut rng, |g, s, v| l.forward(g, s, v)));
        let l = Layer::MaxPool { k: rng.gen_range(1..=h.min(w).min(3)) };
        note("max_pool", grad_error(&empty, &x, &mut rng, |g, s, v| l.forward(g, s, v)));
        let l = Layer::Fit { h: rng.gen_range(1..9), w: rng.gen_range(1..9) };
        note("fit", grad_error(&empty, &x, &mut rng, |g, s, v| l.forward(g, s, v)));
        let mut s = ParamStore::new();
        let l = Layer::scale_shift(&mut s, "n", c);
        for t in s.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
        }
        note("scale_shift", grad_error(&s, &x, &mut rng, |g, s, v| l.forward(g, s, v)));

        let (din, dout) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let mut s = ParamStore::new();
        let l = Layer::linear(&mut s, &mut rng, "l", din, dout);
        let x = distinct_input(&mut rng, &[3, din]);
        note("linear", grad_error(&s, &x, &mut rng, |g, s, v| l.forward(g, s, v)));

        // split / transform / add / concat, the building block of a coupling layer
        let half = rng.gen_range(1..3);
        let (h, w) = (rng.gen_range(2..5), rng.gen_range(2..5));
        let x = distinct_input(&mut rng, &[2, 2 * half, h, w]);
        let mut s = ParamStore::new();
        let conv = Layer::conv2d(&mut s, &mut rng, "s", half, half, ConvGeom::square(3, 1, 1));
        note(
            "coupling",
            grad_error(&s, &x, &mut rng, |g, s, v| {
                let a = g.narrow_channels(v, 0, half)?;
                let b = g.narrow_channels(v, half, half)?;
                let t = conv.forward(g, s, a)?;
                let b = g.add(b, t)?;
                g.concat_channels(a, b)
            }),
        );
    }
    let max = worst.values().copied().fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    let kinds: Vec<String> = worst.iter().map(|(k, e)| format!("{k} {e:.1e}")).collect();
    ensure!(max < 1e-6, "max relative error {max:e} ({})", kinds.join(", "));
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!("{} layer kinds x {CONFIGS} configs, max rel err {max:.1e}, {secs:.1} s", worst.len()))
}

// ---------------------------------------------------------------------------
// 2. invertibility

fn coupling<T: Real>(n_blocks: usize, zero_init: bool, seed: u64) -> (Translator, ParamStore<T>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = TranslatorSpec::Coupling { n_blocks, hidden_channels: 16, zero_init };
    let t = Translator::build(&mut store, &mut rng, "t", &spec, [16, 8, 8], None).unwrap();
    (t, store)
}

fn roundtrip<T: Real>(n_blocks: usize) -> f64 {
    let (t, s) = coupling::<T>(n_blocks, false, 40 + n_blocks as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let z = Tensor::<T>::from_fn(&[100, 16, 8, 8], |_| T::of(rng.gen_range(-3.0..3.0)));
    let back = t.coupling_inverse(&s, &t.coupling_forward(&s, &z).unwrap()).unwrap();
    z.data().iter().zip(back.data()).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).fold(0.0, f64::max)
}

fn c2_invertibility() -> Outcome {
    let mut worst = (0.0f64, 0.0f64);
    for n in [1, 2, 4, 8] {
        let (a, b) = (roundtrip::<f32>(n), roundtrip::<f64>(n));
        ensure!(a < 1e-5, "{n} blocks f32: {a:e}");
        ensure!(b < 1e-10, "{n} blocks f64: {b:e}");
        worst = (worst.0.max(a), worst.1.max(b));
        let (t, s) = coupling::<f32>(n, true, 1);
        let z = Tensor::<f32>::from_fn(&[4, 16, 8, 8], |i| (i as f32 * 0.37).sin());
        ensure!(t.coupling_forward(&s, &z).unwrap() == z, "{n} zero-init blocks are not the identity");
    }
    Ok(format!("max |z - inv(fwd(z))|: f32 {:.1e}, f64 {:.1e}; zero-init exact identity", worst.0, worst.1))
}

// ---------------------------------------------------------------------------
// 3. physics

/// Ricker pulse convolved with the 2-D Green's function, arriving at `r/v`.
fn analytic_trace(r: f64, v: f64, f0: f64, t0: f64, t: f64) -> f64 {
    let tau = r / v;
    let umax = (t - tau).max(0.0).sqrt();
    if umax == 0.0 {
        return 0.0;
    }
    let n = 2000;
    let h = umax / n as f64;
    let f = |u: f64| 2.0 * ricker(f0, t0, t - tau - u * u) / (2.0 * tau + u * u).sqrt();
    let mut s = f(0.0) + f(umax);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

fn peak_time(trace: &[f64], dt: f64) -> f64 {
    let i = (1..trace.len() - 1).max_by(|&a, &b| trace[a].total_cmp(&trace[b])).unwrap();
    let (a, b, c) = (trace[i - 1], trace[i], trace[i + 1]);
    (i as f64 + 0.5 * (a - c) / (a - 2.0 * b + c)) * dt
}

fn c3_physics() -> Outcome {
    let t = Instant::now();
    let v = 2000.0;
    let mut cfg = SimConfig::surface(140, 100, 450, 1, 1);
    cfg.source_depth = 50;
    cfg.receiver_depth = 50;
    cfg.source_positions = vec![20];
    cfg.receiver_positions = (1..=5).map(|k| 20 + 10 * k).collect();
    let panel = simulate_shot(&VelocityMap::homogeneous(100, 140, v).unwrap(), 0, &cfg).unwrap();
    let nr = cfg.receiver_positions.len();
    let mut worst_arrival = 0.0f64;
    for (r, &x) in cfg.receiver_positions.iter().enumerate() {
        let d = (x - 20) as f64 * cfg.dx;
        let trace: Vec<f64> = panel.data().iter().skip(r).step_by(nr).copied().collect();
        let analytic: Vec<f64> = (0..cfg.nt).map(|n| analytic_trace(d, v, cfg.f0, cfg.t0, n as f64 * cfg.dt)).collect();
        let err = (peak_time(&trace, cfg.dt) - peak_time(&analytic, cfg.dt)).abs();
        ensure!(err <= 2.0 * cfg.dt, "offset {d} m: arrival off by {err:.5} s");
        worst_arrival = worst_arrival.max(err / cfg.dt);
    }

    let layered = VelocityMap::new(Tensor::from_fn(&[1, 32, 32], |i| {
        let (z, x) = (i / 32, i % 32);
        1800.0 + 40.0 * z as f64 + if z > 18 + x / 8 { 900.0 } else { 0.0 }
    }))
    .unwrap();
    let mut a = SimConfig::desk();
    (a.source_depth, a.receiver_depth) = (3, 3);
    (a.source_positions, a.receiver_positions) = (vec![4], vec![27]);
    let mut b = a.clone();
    (b.source_positions, b.receiver_positions) = (vec![27], vec![4]);
    let (ta, tb) = (simulate_shot(&layered, 0, &a).unwrap(), simulate_shot(&layered, 0, &b).unwrap());
    let scale = ta.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let recip = ta.data().iter().zip(tb.data()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale;
    ensure!(recip < 1e-4, "reciprocity error {recip:e}");

    let base = SimConfig::desk();
    let mut loud = base.clone();
    loud.source_amplitude = 2.0;
    let (p1, p2) = (simulate_survey(&layered, &base).unwrap(), simulate_survey(&layered, &loud).unwrap());
    ensure!(p1.values.data().iter().zip(p2.values.data()).all(|(x, y)| 2.0 * x == *y), "doubling the source does not double the panel");

    let fast = VelocityMap::homogeneous(32, 32, 8000.0).unwrap();
    ensure!(
        matches!(simulate_shot(&fast, 0, &base), Err(Error::CflViolation { .. })),
        "CFL-violating configuration was not rejected"
    );
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "took {secs:.1} s");
    Ok(format!(
        "arrivals within {worst_arrival:.2} dt at 5 offsets, reciprocity {recip:.1e}, linearity exact, CFL rejected, {secs:.1} s"
    ))
}

// ---------------------------------------------------------------------------
// 4. normalization

fn c4_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let n = rng.gen_range(2..400);
        let scale = 10f64.powi(rng.gen_range(-3..4));
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        ensure!(data.iter().any(|&v| v < 0.0), "trial {trial} drew no negative values");
        let t = Tensor::new(&[n], data.clone()).unwrap();
        for scheme in [NormScheme::Minmax, NormScheme::Standardize, NormScheme::LogsignMinmax] {
            let stats = Summary::of(&data).stats(scheme).map_err(|e| e.to_string())?;
            let back = unnormalize(&normalize(&t, &stats).unwrap(), &stats).unwrap();
            for (a, b) in data.iter().zip(back.data()) {
                let rel = (a - b).abs() / a.abs().max(1e-12);
                ensure!(rel <= 1e-6, "{} trial {trial}: {a} came back as {b}", scheme.name());
                worst = worst.max(rel);
            }
        }
    }
    let flat = Summary::of(&[2.5f64; 8]);
    for scheme in [NormScheme::Minmax, NormScheme::Standardize, NormScheme::LogsignMinmax] {
        ensure!(matches!(flat.stats(scheme), Err(Error::DegenerateStats(_))), "{} accepted constant data", scheme.name());
    }
    let x = Tensor::new(&[1], vec![1.0f64]).unwrap();
    ensure!(normalize(&x, &NormStats::Standardize { mean: 0.0, std: 0.0 }).is_err(), "zero std accepted");
    ensure!(unnormalize(&x, &NormStats::Minmax { min: 1.0, max: 1.0 }).is_err(), "empty range accepted");
    Ok(format!("3 schemes x 50 signed sets, max rel err {worst:.1e}; degenerate stats rejected"))
}

// ---------------------------------------------------------------------------
// 5. SSIM

/// Per-window SSIM with explicit 2-D Gaussian weights and two-pass moments.
fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let k = 11;
    let mut wts = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            wts[i * k + j] = (-(di * di + dj * dj) / 4.5).exp();
        }
    }
    let total: f64 = wts.iter().sum();
    wts.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (1e-4, 9e-4);
    let (mut acc, mut count) = (0.0, 0);
    for y in 0..=h - k {
        for x in 0..=w - k {
            let px = |img: &[f64], i: usize, j: usize| img[(y + i) * w + x + j];
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    ma += wts[i * k + j] * px(a, i, j);
                    mb += wts[i * k + j] * px(b, i, j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let (da, db) = (px(a, i, j) - ma, px(b, i, j) - mb);
                    va += wts[i * k + j] * da * da;
                    vb += wts[i * k + j] * db * db;
                    cov += wts[i * k + j] * da * db;
                }
            }
            acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

fn c5_ssim() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst, mut asym) = (0.0f64, 0.0f64);
    for pair in 0..20 {
        let a: Vec<f64> = (0..256).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mix = rng.gen_range(0.0..1.0);
        let b: Vec<f64> = a.iter().map(|&v| mix * v + (1.0 - mix) * rng.gen_range(0.0..1.0)).collect();
        let fast = ssim(&a, &b, 16, 16, 1.0).unwrap();
        let err = (fast - ssim_oracle(&a, &b, 16, 16)).abs();
        ensure!(err < 1e-6, "pair {pair}: off by {err:e}");
        worst = worst.max(err);
        asym = asym.max((fast - ssim(&b, &a, 16, 16, 1.0).unwrap()).abs());
        ensure!(ssim(&a, &a, 16, 16, 1.0).unwrap() == 1.0, "ssim(x, x) != 1 for pair {pair}");
    }
    ensure!(asym < 1e-12, "asymmetry {asym:e}");
    Ok(format!("20 pairs vs brute force, max err {worst:.1e}; ssim(x,x) = 1; asymmetry {asym:.1e}"))
}

// ---------------------------------------------------------------------------
// 6. overfit

fn c6_overfit() -> Outcome {
    let t = Instant::now();
    let d = flat64().subset(&[0, 1, 2, 3]);
    let mut m = desk_model(ModelKind::LatentUnetLarge, TrainMode::Inverse);
    let cfg = TrainConfig { epochs: 300, ..TrainConfig::desk(TrainMode::Inverse) };
    let h = train(&mut m, &TrainData::paired(&d, default_norms(&d)).unwrap(), &cfg).map_err(|e| e.to_string())?.history;
    let (first, last) = (h.epochs[0].total, h.epochs.last().unwrap().total);
    let secs = t.elapsed().as_secs_f64();
    ensure!(last < 0.1 * first, "train MAE {first:.4} -> {last:.4} ({:.1}% of epoch 1)", 100.0 * last / first);
    ensure!(secs < 600.0, "took {secs:.0} s");
    Ok(format!("latent-unet-large, 4 samples: train MAE {first:.4} -> {last:.4} ({:.1}% of epoch 1) in {secs:.1} s", 100.0 * last / first))
}

// ---------------------------------------------------------------------------
// 7. joint training

fn c7_joint() -> Outcome {
    let d = flat64();
    let data = TrainData::paired(d, default_norms(d)).unwrap();
    let mut m = desk_model(ModelKind::InvertibleXnet, TrainMode::Joint);
    let g = translator_gradient_norm(&m, &data.velocity, &data.waveform, &LossSpec::Mse, Direction::Forward)
        .map_err(|e| e.to_string())?;
    ensure!(g > 0.0 && g.is_finite(), "forward-loss gradient norm on the shared translator is {g}");
    let cfg = TrainConfig { epochs: 60, loss: LossSpec::Mse, ..TrainConfig::desk(TrainMode::Joint) };
    let h = train(&mut m, &data, &cfg).map_err(|e| e.to_string())?.history;
    let (e0, en) = (&h.epochs[0], h.epochs.last().unwrap());
    let df = drop_ratio(e0.forward.unwrap(), en.forward.unwrap());
    let di = drop_ratio(e0.inverse.unwrap(), en.inverse.unwrap());
    ensure!(df >= 0.3 && di >= 0.3, "forward loss dropped {:.0}%, inverse {:.0}%", 100.0 * df, 100.0 * di);

    // one saved checkpoint answers both directions
    let meta = Meta { train_mode: Some(TrainMode::Joint), norms: data.norms, dataset: "flat-A", epoch: Some(59) };
    let ck = checkpoint::decode(&checkpoint::encode(&m, &meta))?;
    let p = ck.model.predict_forward(&data.velocity.item(0)).map_err(|e| e.to_string())?;
    let v = ck.model.predict_inverse(&data.waveform.item(0)).map_err(|e| e.to_string())?;
    ensure!(p.shape() == [3, 250, 32] && v.shape() == [1, 32, 32], "prediction shapes {:?} / {:?}", p.shape(), v.shape());
    Ok(format!(
        "x-net, 64 samples, MSE: forward {:.3} -> {:.3} (-{:.0}%), inverse {:.3} -> {:.3} (-{:.0}%); init grad norm {g:.2e}; one checkpoint serves both",
        e0.forward.unwrap(),
        en.forward.unwrap(),
        100.0 * df,
        e0.inverse.unwrap(),
        en.inverse.unwrap(),
        100.0 * di
    ))
}

// ---------------------------------------------------------------------------
// 8. two-stage

fn c8_two_stage() -> Outcome {
    let d = flat64().subset(&(0..32).collect::<Vec<_>>());
    let data = TrainData::paired(&d, default_norms(&d)).unwrap();
    let mut m = desk_model(ModelKind::LatentUnetLarge, TrainMode::ReconstructThenTranslate);
    let cfg = TrainConfig { epochs: 50, stage1_epochs: 40, ..TrainConfig::desk(TrainMode::ReconstructThenTranslate) };
    let out = train(&mut m, &data, &cfg).map_err(|e| e.to_string())?;
    let stage1 = out.stage1.ok_or("no stage-1 snapshot")?;
    ensure!(pair_bytes(&stage1) == pair_bytes(&m.store), "encoder/decoder bytes changed during stage 2");
    let rec: Vec<f64> = out.history.epochs.iter().filter_map(|e| e.reconstruction).collect();
    ensure!(rec.len() == 40, "{} reconstruction epochs recorded", rec.len());
    let drop = drop_ratio(rec[0], rec[39]);
    ensure!(drop >= 0.5, "stage-1 reconstruction {:.4} -> {:.4} (-{:.0}%)", rec[0], rec[39], 100.0 * drop);
    let n_pair = pair_bytes(&m.store).len();
    Ok(format!(
        "{n_pair} encoder/decoder tensors byte-identical after stage 2; reconstruction {:.4} -> {:.4} (-{:.0}%)",
        rec[0],
        rec[39],
        100.0 * drop
    ))
}

// ---------------------------------------------------------------------------
// 9. cycle loss

fn c9_cycle() -> Outcome {
    let d = flat64();
    let nm = default_norms(d);
    let v_idx: Vec<usize> = (0..32).collect();
    let p_idx: Vec<usize> = (32..64).collect();
    let data = TrainData::unpaired(&d.velocity.gather(&v_idx), &d.waveform.gather(&p_idx), nm).unwrap();
    let mut m = desk_model(ModelKind::InvertibleXnet, TrainMode::JointCycle);
    let cfg = TrainConfig { epochs: 30, pure_unpaired: true, ..TrainConfig::desk(TrainMode::JointCycle) };
    let h = train(&mut m, &data, &cfg).map_err(|e| e.to_string())?.history;
    for s in &h.steps {
        ensure!(s.forward.is_none() && s.inverse.is_none(), "step {} of an unpaired run has supervised terms", s.step);
        ensure!(s.total == s.cycle.unwrap(), "unpaired step {}: combined {} vs cycle {:?}", s.step, s.total, s.cycle);
    }
    let (c0, cn) = (h.epochs[0].cycle.unwrap(), h.epochs.last().unwrap().cycle.unwrap());
    let drop = drop_ratio(c0, cn);
    ensure!(drop >= 0.3, "cycle term {c0:.4} -> {cn:.4} (-{:.0}%)", 100.0 * drop);

    // with pairs present all three terms are live and must add up exactly
    let small = d.subset(&(0..16).collect::<Vec<_>>());
    let paired = TrainData::paired(&small, nm).unwrap();
    let mut m = desk_model(ModelKind::InvertibleXnet, TrainMode::JointCycle);
    let cfg = TrainConfig { epochs: 3, ..TrainConfig::desk(TrainMode::JointCycle) };
    let hp = train(&mut m, &paired, &cfg).map_err(|e| e.to_string())?.history;
    for s in &hp.steps {
        let (f, i, c) = (s.forward.unwrap() as f32, s.inverse.unwrap() as f32, s.cycle.unwrap() as f32);
        ensure!(s.total as f32 == f + i + c, "step {}: combined {} != {f} + {i} + {c}", s.step, s.total);
    }
    Ok(format!(
        "disjoint 32 v / 32 p: cycle {c0:.4} -> {cn:.4} (-{:.0}%); combined == sum exactly on {} steps",
        100.0 * drop,
        h.steps.len() + hp.steps.len()
    ))
}

// ---------------------------------------------------------------------------
// CLI criteria

fn workdir() -> &'static Path {
    static W: OnceLock<tempfile::TempDir> = OnceLock::new();
    W.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

fn gen(cwd: &Path, family: &str, seed: &str, out: &str) -> Result<(), String> {
    gfi(cwd, &["gen-data", "--family", family, "--complexity", "A", "--train", "8", "--test", "4", "--seed", seed, "--out", out])
        .map(|_| ())
}

fn c10_ablation() -> Outcome {
    let w = workdir().join("ablate");
    std::fs::create_dir_all(&w).unwrap();
    gen(&w, "flat", "3", "data")?;
    gfi(&w, &["ablate-latent", "--data", "data", "--epochs", "3", "--out", "ablation.csv"])?;
    let rows = csv_rows(&w.join("ablation.csv"))?;
    let mut seen: Vec<(String, String)> = rows.iter().map(|r| (r["latent_size"].clone(), r["skip_connections"].clone())).collect();
    seen.sort();
    let mut want: Vec<(String, String)> =
        ["8", "16", "32"].iter().flat_map(|s| ["true", "false"].map(|k| (s.to_string(), k.to_string()))).collect();
    want.sort();
    ensure!(seen == want, "configurations {seen:?}");
    ensure!(rows.iter().all(|r| num(r, "test_mae").is_finite()), "non-finite metric in {rows:?}");
    let trend: Vec<String> = rows
        .iter()
        .map(|r| format!("{}{}:{:.0}", r["latent_size"], if r["skip_connections"] == "true" { "s" } else { "" }, num(r, "test_mae")))
        .collect();
    Ok(format!("6 rows; test MAE m/s by size (s = skip): {}", trend.join(" ")))
}

fn c11_zero_shot() -> Outcome {
    let w = workdir().join("zeroshot");
    std::fs::create_dir_all(&w).unwrap();
    gen(&w, "flat", "5", "flat")?;
    gen(&w, "curve", "6", "curve")?;
    for fam in ["flat", "curve"] {
        gfi(&w, &["train", "--model", "latent-unet-small", "--mode", "inverse", "--data", fam, "--epochs", "3", "--out", &format!("run-{fam}")])?;
    }
    let cks = ["run-flat/checkpoint.gfck", "run-curve/checkpoint.gfck"];
    gfi(&w, &[
        "zero-shot", "--checkpoint", cks[0], "--checkpoint", cks[1], "--compare", cks[0], "--compare", cks[1],
        "--data", "flat", "--data", "curve", "--out", "grid",
    ])?;
    let grid = csv_rows(&w.join("grid/grid.csv"))?;
    ensure!(grid.len() == 4, "{} grid cells", grid.len());
    let mut worst = 0.0f64;
    for (i, (ck, fam)) in cks.iter().zip(["flat", "curve"]).enumerate() {
        let c = checkpoint::load(&w.join(ck)).map_err(|e| e.to_string())?;
        let set = Dataset::load(&w.join(fam)).and_then(|d| d.eval_set(Part::Test)).map_err(|e| e.to_string())?;
        let r = evaluate(&c.model, &c.header.norms, &set, Direction::Inverse, ck).map_err(|e| e.to_string())?;
        let cell = &grid[i * 2 + i];
        ensure!(cell["trained_on"] == cell["evaluated_on"], "cell {i},{i} is {cell:?}");
        for (k, v) in [("mae", r.mae), ("mse", r.mse), ("ssim", r.ssim)] {
            let e = (num(cell, k) - v).abs() / v.abs().max(1.0);
            ensure!(e <= 1e-9, "diagonal {i} {k}: grid {} vs evaluate {v}", cell[k]);
            worst = worst.max(e);
        }
    }
    let diff = csv_rows(&w.join("grid/diff.csv"))?;
    ensure!(diff.len() == 4, "{} difference cells", diff.len());
    ensure!(
        diff.iter().all(|r| ["mae", "mse", "ssim"].iter().all(|k| num(r, k) == 0.0)),
        "self-difference grid is not zero: {diff:?}"
    );
    Ok(format!("2 checkpoints x 2 families; diagonal vs evaluate() max rel diff {worst:.1e}; self-difference exactly 0"))
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c12_determinism() -> Outcome {
    let mut trees = Vec::new();
    for k in 0..2 {
        let w = workdir().join(format!("det{k}"));
        std::fs::create_dir_all(&w).unwrap();
        gen(&w, "flat-fault", "9", "data")?;
        gfi(&w, &["train", "--model", "invertible-xnet", "--mode", "joint-cycle", "--data", "data", "--epochs", "2", "--out", "run"])?;
        gfi(&w, &["eval", "--checkpoint", "run/checkpoint.gfck", "--data", "data", "--out", "report.csv"])?;
        gfi(&w, &["eval", "--checkpoint", "run/checkpoint.gfck", "--data", "data", "--direction", "forward", "--out", "report_fwd.csv"])?;
        trees.push(tree_bytes(&w));
    }
    let names: Vec<String> = trees[0].keys().map(|p| p.display().to_string()).collect();
    ensure!(trees[0].keys().eq(trees[1].keys()), "file sets differ");
    for (p, bytes) in &trees[0] {
        ensure!(trees[1][p] == *bytes, "{} differs between runs", p.display());
    }
    Ok(format!("{} artifacts byte-identical across reruns ({})", names.len(), names.join(", ")))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("gradcheck suite", c1_gradcheck),
        ("coupling invertibility", c2_invertibility),
        ("physics oracle", c3_physics),
        ("normalization roundtrips", c4_normalization),
        ("SSIM oracle equivalence", c5_ssim),
        ("overfit smoke", c6_overfit),
        ("joint training", c7_joint),
        ("two-stage regime", c8_two_stage),
        ("cycle loss", c9_cycle),
        ("ablation harness", c10_ablation),
        ("zero-shot grid", c11_zero_shot),
        ("determinism", c12_determinism),
    ];
    let only: Option<usize> = std::env::var("GFI_CRITERION").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = fmt_secs(t.elapsed());
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{took}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{took}]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn fmt_secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}
