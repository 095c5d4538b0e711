//! Adam with bias correction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    /// Zeroed moments mirroring the shapes in `store`.
    pub fn new(store: &ParamStore<T>, lr: f64) -> Result<Self> {
        Self::with_betas(store, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(store: &ParamStore<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || beta1 == 0.0 || !(0.0..1.0).contains(&beta2) || beta2 == 0.0 {
            return Err(Error::InvalidConfig(format!("betas must lie in (0, 1), got {beta1}, {beta2}")));
        }
        if !(eps > 0.0) || !(lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("need eps > 0 and lr >= 0, got eps={eps}, lr={lr}")));
        }
        let zeros = || store.iter().map(|(_, _, t)| vec![T::zero(); t.len()]).collect::<Vec<_>>();
        Ok(AdamState { step: 0, lr, beta1, beta2, eps, m: zeros(), v: zeros() })
    }

    pub fn first_moment(&self, index: usize) -> &[T] {
        &self.m[index]
    }
}

/// One Adam update over every trainable parameter holding a gradient.
///
/// Gradients are validated before anything is written, so a non-finite
/// gradient leaves both parameters and state untouched.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, state: &mut AdamState<T>) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::InvalidConfig("optimizer state does not match the parameter set".into()));
    }
    for (_, name, t) in store.iter() {
        if let (true, Some(g)) = (t.requires_grad, t.grad.as_ref()) {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(name.into()));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(state.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(state.beta2, t as f64);
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - state.beta1), T::of(1.0 - state.beta2));
    let step_size = T::of(state.lr / bc1);
    let inv_bc2 = T::of(1.0 / bc2);
    let eps = T::of(state.eps);
    for ((param, m), v) in store.tensors_mut().zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        if !param.requires_grad {
            continue;
        }
        let Some(grad) = param.grad.take() else { continue };
        for (((p, &g), mi), vi) in param.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + one_b1 * g;
            *vi = b2 * *vi + one_b2 * g * g;
            *p -= step_size * *mi / ((*vi * inv_bc2).sqrt() + eps);
        }
        param.grad = Some(grad);
    }
    Ok(())
}
