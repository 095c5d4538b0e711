use gfi_core::gradcheck::{finite_difference_grad, max_relative_error};
use gfi_core::kernels::ConvGeom;
use gfi_core::nn::Layer;
use gfi_core::{Graph, ParamStore, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;
const FLOOR: f64 = 1e-3;

/// Values in ±[0.05, 1] with no two entries closer than 1e-3, so kinks and
/// pooling ties stay far away from the probe step.
fn distinct_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut levels: Vec<f64> = (0..n).map(|i| 0.05 + 0.95 * i as f64 / n.max(2) as f64).collect();
    for i in (1..n).rev() {
        levels.swap(i, rng.gen_range(0..=i));
    }
    let data = levels.into_iter().map(|v| if rng.gen_bool(0.5) { v } else { -v }).collect();
    Tensor::new(shape, data).unwrap()
}

/// Objective `mean((f(x) - r)^2) + sum(f(x))/len` with a fixed random target `r`.
fn objective(g: &mut Graph<f64>, y: Var, target: &Tensor<f64>) -> Result<Var> {
    let r = g.constant(target);
    let d = g.sub(y, r)?;
    let sq = g.mean_sq(d);
    let s = g.sum(y);
    let s = g.scale(s, 1.0 / target.len() as f64);
    g.add(sq, s)
}

/// Compares autodiff against central differences for the input and every parameter.
fn check<F>(label: &str, store: &ParamStore<f64>, x: &Tensor<f64>, rng: &mut ChaCha8Rng, forward: F)
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, Var) -> Result<Var>,
{
    let out_shape = {
        let mut g = Graph::new();
        let xv = g.constant(x);
        let y = forward(&mut g, store, xv).unwrap();
        g.shape(y).to_vec()
    };
    let target = Tensor::from_fn(&out_shape, |_| rng.gen_range(-1.0..1.0));
    let eval = |x: &Tensor<f64>, store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.constant(x);
        let y = forward(&mut g, store, xv)?;
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

    let fd = finite_difference_grad(|t| eval(t, store), x, STEP).unwrap();
    let ad = g.grad(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]);
    let err = max_relative_error(&ad, fd.data(), FLOOR);
    assert!(err < TOL, "{label}: input gradient error {err:e}");

    for id in store.ids() {
        let fd = finite_difference_grad(
            |t| {
                let mut s = store.clone();
                s.get_mut(id).data_mut().copy_from_slice(t.data());
                eval(x, &s)
            },
            store.get(id),
            STEP,
        )
        .unwrap();
        let ad = grads.get(id).grad.clone().unwrap_or_else(|| vec![0.0; fd.len()]);
        let err = max_relative_error(&ad, fd.data(), FLOOR);
        assert!(err < TOL, "{label}: gradient of {} error {err:e}", store.name(id));
    }
}

fn layer_check(label: &str, layer: &Layer, store: &ParamStore<f64>, x: &Tensor<f64>, rng: &mut ChaCha8Rng) {
    check(label, store, x, rng, |g, s, v| layer.forward(g, s, v));
}

#[test]
fn conv2d_random_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..24 {
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
        let mut store = ParamStore::new();
        let layer = Layer::conv2d(&mut store, &mut rng, "c", cin, cout, geom);
        let x = distinct_input(&mut rng, &[2, cin, h, w]);
        layer_check(&format!("conv2d case {case} {geom:?}"), &layer, &store, &x, &mut rng);
    }
}

#[test]
fn conv_transpose2d_random_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..24 {
        let (cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let geom = ConvGeom {
            kh: rng.gen_range(2..5),
            kw: rng.gen_range(1..4),
            sh: rng.gen_range(1..3),
            sw: rng.gen_range(1..3),
            ph: rng.gen_range(0..2),
            pw: 0,
        };
        let extra = (rng.gen_range(0..geom.sh), rng.gen_range(0..geom.sw));
        let (h, w) = (rng.gen_range(2..5), rng.gen_range(2..5));
        let mut store = ParamStore::new();
        let layer = Layer::conv_transpose2d(&mut store, &mut rng, "t", cin, cout, geom, extra);
        let x = distinct_input(&mut rng, &[2, cin, h, w]);
        layer_check(&format!("convT case {case} {geom:?} {extra:?}"), &layer, &store, &x, &mut rng);
    }
}

#[test]
fn pointwise_and_resampling_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..24 {
        let c = rng.gen_range(1..4);
        let (h, w) = (rng.gen_range(2..7), rng.gen_range(2..7));
        let x = distinct_input(&mut rng, &[2, c, h, w]);
        let empty = ParamStore::new();

        let slope = rng.gen_range(0.0..0.5);
        layer_check(&format!("leaky_relu {case}"), &Layer::LeakyRelu { slope }, &empty, &x, &mut rng);

        let mut store = ParamStore::new();
        let ss = Layer::scale_shift(&mut store, "n", c);
        for t in store.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
        }
        layer_check(&format!("scale_shift {case}"), &ss, &store, &x, &mut rng);

        let up = Layer::Upsample { fh: rng.gen_range(1..3), fw: rng.gen_range(1..3) };
        layer_check(&format!("upsample {case}"), &up, &empty, &x, &mut rng);

        let k = rng.gen_range(1..=h.min(w).min(3));
        layer_check(&format!("max_pool {case}"), &Layer::MaxPool { k }, &empty, &x, &mut rng);

        let fit = Layer::Fit { h: rng.gen_range(1..9), w: rng.gen_range(1..9) };
        layer_check(&format!("fit {case}"), &fit, &empty, &x, &mut rng);
    }
}

#[test]
fn linear_random_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..24 {
        let (din, dout) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let mut store = ParamStore::new();
        let layer = Layer::linear(&mut store, &mut rng, "l", din, dout);
        let x = distinct_input(&mut rng, &[3, din]);
        layer_check(&format!("linear {case}"), &layer, &store, &x, &mut rng);
    }
}

#[test]
fn channel_and_reduction_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..20 {
        let c = 2 * rng.gen_range(1..3);
        let (h, w) = (rng.gen_range(2..5), rng.gen_range(2..5));
        let x = distinct_input(&mut rng, &[2, c, h, w]);
        let mut store = ParamStore::new();
        let conv = Layer::conv2d(&mut store, &mut rng, "s", c / 2, c / 2, ConvGeom::square(3, 1, 1));
        let half = c / 2;
        let coef = rng.gen_range(-2.0..2.0);
        // An additive-coupling-shaped graph: split, transform one half, shift the other, rejoin.
        check(&format!("coupling graph {case}"), &store, &x, &mut rng, |g, s, v| {
            let a = g.narrow_channels(v, 0, half)?;
            let b = g.narrow_channels(v, half, half)?;
            let t = conv.forward(g, s, a)?;
            let t = g.scale(t, coef);
            let b = g.add(b, t)?;
            let y = g.concat_channels(a, b)?;
            let flat = g.reshape(y, &[2, c * h * w])?;
            g.reshape(flat, &[2, c, h, w])
        });
    }
}

#[test]
fn mean_abs_matches_sign_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = distinct_input(&mut rng, &[2, 1, 3, 3]);
    let mut g = Graph::new();
    let v = g.input(&x.clone().with_requires_grad(true));
    let m = g.mean_abs(v);
    g.backward(m).unwrap();
    let fd = finite_difference_grad(
        |t| {
            let mut g = Graph::new();
            let v = g.constant(t);
            let m = g.mean_abs(v);
            Ok(g.scalar(m))
        },
        &x,
        STEP,
    )
    .unwrap();
    assert!(max_relative_error(g.grad(v).unwrap(), fd.data(), FLOOR) < TOL);
}
