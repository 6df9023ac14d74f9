use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Pooled values plus the winning time index for every `(batch, channel)`.
#[derive(Debug, Clone)]
pub struct Pooled<T: Scalar> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
    pub time: usize,
}

/// `out[b,c] = max_t input[b,t,c]`; ties resolve to the earliest timestep.
pub fn global_max_pool1d<T: Scalar>(input: &Tensor<T>) -> Result<Pooled<T>> {
    input.expect_rank("global_max_pool1d", 3)?;
    let (batch, time, ch) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if time == 0 {
        return Err(Error::dim("global_max_pool1d", "empty time axis"));
    }
    let mut out = Tensor::zeros(&[batch, ch]);
    let mut argmax = vec![0usize; batch * ch];
    for b in 0..batch {
        let x = input.outer(b);
        let o = out.outer_mut(b);
        o.copy_from_slice(&x[..ch]);
        let am = &mut argmax[b * ch..(b + 1) * ch];
        for t in 1..time {
            let row = &x[t * ch..(t + 1) * ch];
            for c in 0..ch {
                if row[c] > o[c] {
                    o[c] = row[c];
                    am[c] = t;
                }
            }
        }
    }
    Ok(Pooled {
        output: out,
        argmax,
        time,
    })
}

/// Routes each pooled gradient to its argmax position.
pub fn global_max_pool1d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    pooled: &Pooled<T>,
) -> Result<Tensor<T>> {
    if grad_out.shape() != pooled.output.shape() {
        return Err(Error::dim(
            "global_max_pool1d_backward",
            format!("{:?} vs {:?}", grad_out.shape(), pooled.output.shape()),
        ));
    }
    let (batch, ch) = (grad_out.shape()[0], grad_out.shape()[1]);
    let mut gi = Tensor::zeros(&[batch, pooled.time, ch]);
    for b in 0..batch {
        for c in 0..ch {
            let t = pooled.argmax[b * ch + c];
            gi.data_mut()[(b * pooled.time + t) * ch + c] = grad_out.data()[b * ch + c];
        }
    }
    Ok(gi)
}
