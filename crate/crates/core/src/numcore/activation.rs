use rand::Rng as _;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Passes `grad_out` where `input > 0`; the subgradient at exactly zero is 0.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != input.shape() {
        return Err(Error::dim(
            "relu_backward",
            format!("{:?} vs {:?}", grad_out.shape(), input.shape()),
        ));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Output of [`dropout`]; `mask` holds the per-element multiplier applied in
/// training mode (0 or `1/(1−rate)`), and is `None` when dropout was a no-op.
#[derive(Debug, Clone)]
pub struct Dropped<T: Scalar> {
    pub output: Tensor<T>,
    pub mask: Option<Vec<T>>,
}

/// Inverted dropout.
pub fn dropout<T: Scalar>(
    input: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Dropped<T>> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(Dropped {
            output: input.clone(),
            mask: None,
        });
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let out = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok(Dropped {
        output: Tensor::from_vec(input.shape(), out)?,
        mask: Some(mask),
    })
}

pub fn dropout_backward<T: Scalar>(grad_out: &Tensor<T>, mask: Option<&[T]>) -> Result<Tensor<T>> {
    match mask {
        None => Ok(grad_out.clone()),
        Some(m) => {
            if m.len() != grad_out.len() {
                return Err(Error::dim(
                    "dropout_backward",
                    format!("mask of {} for gradient of {}", m.len(), grad_out.len()),
                ));
            }
            let data = grad_out.data().iter().zip(m).map(|(&g, &k)| g * k).collect();
            Tensor::from_vec(grad_out.shape(), data)
        }
    }
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}
