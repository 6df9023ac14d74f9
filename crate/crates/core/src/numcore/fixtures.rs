//! Random instances and finite-difference helpers shared by the unit tests
//! and the verification suite.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

#[cfg(test)]
use super::gradcheck::{numeric_gradient, relative_error};
use super::{Scalar, Tensor};
use crate::rng::Rng;

/// Standard-normal entries.
pub(crate) fn rand_tensor<T: Scalar>(rng: &mut Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(rng);
        T::lit(v)
    })
}

/// Entries uniform in `±[lo, hi)` with random sign, bounded away from zero.
pub(crate) fn rand_nonzero(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(lo..hi);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Central differences of a tensor-valued objective.
#[cfg(test)]
pub(crate) fn central_diff(
    at: &Tensor<f64>,
    eps: f64,
    mut f: impl FnMut(&Tensor<f64>) -> f64,
) -> Tensor<f64> {
    let shape = at.shape().to_vec();
    let g = numeric_gradient(
        |p| f(&Tensor::from_vec(&shape, p.to_vec()).expect("shape preserved")),
        at.data(),
        eps,
    )
    .expect("finite objective");
    Tensor::from_vec(&shape, g).expect("shape preserved")
}

/// Worst [`relative_error`] across two equally shaped tensors.
#[cfg(test)]
pub(crate) fn rel_err(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}
