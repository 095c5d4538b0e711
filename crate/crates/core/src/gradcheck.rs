//! Central finite differences, used as the reference for autodiff gradients.

use alloc::format;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Estimates `∂f/∂x` element-wise as `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h`.
pub fn finite_difference_grad<T, F>(mut f: F, x: &Tensor<T>, h: T) -> Result<Tensor<T>>
where
    T: Real,
    F: FnMut(&Tensor<T>) -> Result<T>,
{
    if !(h > T::zero()) {
        return Err(Error::InvalidConfig(format!("step must be positive, got {h:?}")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("objective at element {i}")));
        }
        grad.data_mut()[i] = (up - down) / (h + h);
    }
    Ok(grad)
}

/// Largest element-wise relative difference, with `floor` guarding near-zero entries.
pub fn max_relative_error<T: Real>(a: &[T], b: &[T], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (x, y) = (x.as_f64(), y.as_f64());
            (x - y).abs() / x.abs().max(y.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}
