//! Valid, stride-1 temporal convolution over `[batch, time, channels]`.
//!
//! A window of `k` consecutive timesteps is contiguous in memory, so the
//! sliding patches form a matrix with row stride `ch_in` and `k·ch_in`
//! columns. Forward and kernel-gradient are single strided GEMMs per sample;
//! the input gradient is a GEMM followed by an overlap-add.

use rayon::prelude::*;

use super::scalar::{gemm, Strided};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Kernel, bias and (optionally) input gradient of one sample.
type SamplePartials<T> = (Vec<T>, Vec<T>, Option<Vec<T>>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub time: usize,
    pub ch_in: usize,
    pub k: usize,
    pub ch_out: usize,
}

impl ConvDims {
    pub fn out_time(&self) -> usize {
        self.time + 1 - self.k
    }

    fn patch(&self) -> Strided {
        Strided {
            rows: self.out_time(),
            cols: self.k * self.ch_in,
            rs: self.ch_in,
            cs: 1,
        }
    }

    fn kernel(&self) -> Strided {
        Strided::row_major(self.k * self.ch_in, self.ch_out)
    }

    fn out(&self) -> Strided {
        Strided::row_major(self.out_time(), self.ch_out)
    }
}

pub(crate) fn conv_dims<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<ConvDims> {
    const OP: &str = "conv1d";
    input.expect_rank(OP, 3)?;
    kernel.expect_rank(OP, 3)?;
    let (batch, time, ch_in) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (k, kc, ch_out) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    if kc != ch_in {
        return Err(Error::dim(
            OP,
            format!("input has {ch_in} channels but kernel expects {kc}"),
        ));
    }
    if k == 0 || time < k {
        return Err(Error::dim(
            OP,
            format!("time axis {time} shorter than kernel {k}"),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [ch_out] {
            return Err(Error::dim(
                OP,
                format!("bias shape {:?}, expected [{ch_out}]", b.shape()),
            ));
        }
    }
    Ok(ConvDims {
        batch,
        time,
        ch_in,
        k,
        ch_out,
    })
}

/// `out[b,t,o] = bias[o] + Σ_{τ<k, i<ch_in} input[b,t+τ,i]·kernel[τ,i,o]`.
pub fn conv1d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let d = conv_dims(input, kernel, Some(bias))?;
    let t_out = d.out_time();
    let mut out = Tensor::zeros(&[d.batch, t_out, d.ch_out]);
    if d.batch == 0 {
        return Ok(out);
    }
    let per_in = d.time * d.ch_in;
    let per_out = t_out * d.ch_out;
    out.data_mut()
        .par_chunks_mut(per_out)
        .zip(input.data().par_chunks(per_in))
        .for_each(|(o, x)| {
            for row in o.chunks_mut(d.ch_out) {
                row.copy_from_slice(bias.data());
            }
            gemm(x, d.patch(), kernel.data(), d.kernel(), T::one(), o, d.out());
        });
    Ok(out)
}

/// Gradients of [`conv1d_forward`].
#[derive(Debug, Clone)]
pub struct ConvGrads<T: Scalar> {
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Full backward pass: input, kernel and bias gradients.
pub fn conv1d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    conv1d_backward_opt(grad_out, input, kernel, true)
}

/// Backward pass that skips the input gradient when `need_input` is false
/// (first layer, or everything upstream frozen).
pub fn conv1d_backward_opt<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let d = conv_dims(input, kernel, None)?;
    let t_out = d.out_time();
    if grad_out.shape() != [d.batch, t_out, d.ch_out] {
        return Err(Error::dim(
            "conv1d_backward",
            format!(
                "grad_out shape {:?}, expected [{}, {t_out}, {}]",
                grad_out.shape(),
                d.batch,
                d.ch_out
            ),
        ));
    }
    let kk = d.k * d.ch_in;
    let per_in = d.time * d.ch_in;
    let per_out = t_out * d.ch_out;

    // Per-sample partials, reduced afterwards in sample order so the result
    // does not depend on the worker count.
    let partials: Vec<SamplePartials<T>> = (0..d.batch)
        .into_par_iter()
        .map(|b| {
            let x = &input.data()[b * per_in..(b + 1) * per_in];
            let g = &grad_out.data()[b * per_out..(b + 1) * per_out];

            let mut gb = vec![T::zero(); d.ch_out];
            for row in g.chunks(d.ch_out) {
                for (acc, &v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }

            let mut gk = vec![T::zero(); kk * d.ch_out];
            gemm(
                x,
                d.patch().transposed(),
                g,
                d.out(),
                T::zero(),
                &mut gk,
                d.kernel(),
            );

            let gi = need_input.then(|| {
                let mut cols = vec![T::zero(); t_out * kk];
                gemm(
                    g,
                    d.out(),
                    kernel.data(),
                    d.kernel().transposed(),
                    T::zero(),
                    &mut cols,
                    Strided::row_major(t_out, kk),
                );
                let mut gi = vec![T::zero(); per_in];
                for (t, patch) in cols.chunks(kk).enumerate() {
                    let dst = &mut gi[t * d.ch_in..t * d.ch_in + kk];
                    for (a, &v) in dst.iter_mut().zip(patch) {
                        *a += v;
                    }
                }
                gi
            });
            (gk, gb, gi)
        })
        .collect();

    let mut grad_kernel = Tensor::zeros(kernel.shape());
    let mut grad_bias = Tensor::zeros(&[d.ch_out]);
    let mut grad_input = need_input.then(|| Vec::with_capacity(d.batch * per_in));
    for (gk, gb, gi) in partials {
        for (a, v) in grad_kernel.data_mut().iter_mut().zip(gk) {
            *a += v;
        }
        for (a, v) in grad_bias.data_mut().iter_mut().zip(gb) {
            *a += v;
        }
        if let (Some(acc), Some(gi)) = (grad_input.as_mut(), gi) {
            acc.extend(gi);
        }
    }
    let input_grad = match grad_input {
        Some(v) => Some(Tensor::from_vec(input.shape(), v)?),
        None => None,
    };
    Ok(ConvGrads {
        input: input_grad,
        kernel: grad_kernel,
        bias: grad_bias,
    })
}
