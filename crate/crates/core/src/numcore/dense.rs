use super::scalar::{gemm, Strided};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn dense_dims<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    input.expect_rank("dense", 2)?;
    weight.expect_rank("dense", 2)?;
    let (batch, d_in) = (input.shape()[0], input.shape()[1]);
    let (w_in, d_out) = (weight.shape()[0], weight.shape()[1]);
    if w_in != d_in {
        return Err(Error::dim(
            "dense",
            format!("input width {d_in} vs weight rows {w_in}"),
        ));
    }
    Ok((batch, d_in, d_out))
}

/// `input · weight + bias` with `weight: [d_in, d_out]`.
pub fn dense<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, d_in, d_out) = dense_dims(input, weight)?;
    if bias.shape() != [d_out] {
        return Err(Error::dim(
            "dense",
            format!("bias shape {:?}, expected [{d_out}]", bias.shape()),
        ));
    }
    let mut out = Tensor::zeros(&[batch, d_out]);
    for row in out.data_mut().chunks_mut(d_out.max(1)) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        input.data(),
        Strided::row_major(batch, d_in),
        weight.data(),
        Strided::row_major(d_in, d_out),
        T::one(),
        out.data_mut(),
        Strided::row_major(batch, d_out),
    );
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T: Scalar> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    need_input: bool,
) -> Result<DenseGrads<T>> {
    let (batch, d_in, d_out) = dense_dims(input, weight)?;
    if grad_out.shape() != [batch, d_out] {
        return Err(Error::dim(
            "dense_backward",
            format!("grad_out {:?}, expected [{batch}, {d_out}]", grad_out.shape()),
        ));
    }
    let mut gw = Tensor::zeros(&[d_in, d_out]);
    gemm(
        input.data(),
        Strided::row_major(batch, d_in).transposed(),
        grad_out.data(),
        Strided::row_major(batch, d_out),
        T::zero(),
        gw.data_mut(),
        Strided::row_major(d_in, d_out),
    );
    let mut gb = Tensor::zeros(&[d_out]);
    for row in grad_out.data().chunks(d_out.max(1)) {
        for (a, &v) in gb.data_mut().iter_mut().zip(row) {
            *a += v;
        }
    }
    let gi = need_input.then(|| {
        let mut gi = Tensor::zeros(&[batch, d_in]);
        gemm(
            grad_out.data(),
            Strided::row_major(batch, d_out),
            weight.data(),
            Strided::row_major(d_in, d_out).transposed(),
            T::zero(),
            gi.data_mut(),
            Strided::row_major(batch, d_in),
        );
        gi
    });
    Ok(DenseGrads {
        input: gi,
        weight: gw,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::fixtures::{central_diff, rand_tensor, rel_err};
    use crate::rng;

    fn loop_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (n, di) = (x.shape()[0], x.shape()[1]);
        let dout = w.shape()[1];
        Tensor::from_fn(&[n, dout], |idx| {
            let (r, c) = (idx / dout, idx % dout);
            b.data()[c] + (0..di).map(|k| x.data()[r * di + k] * w.data()[k * dout + c]).sum::<f64>()
        })
    }

    #[test]
    fn identity_and_zero_input() {
        let mut r = rng::stream(30, &[]);
        let x = rand_tensor::<f32>(&mut r, &[3, 4]);
        let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[4])).unwrap(), x);
        let b = rand_tensor::<f32>(&mut r, &[2]);
        let w = rand_tensor::<f32>(&mut r, &[4, 2]);
        let y = dense(&Tensor::zeros(&[3, 4]), &w, &b).unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, b.data());
        }
    }

    #[test]
    fn matches_loop_oracle_and_finite_differences() {
        for case in 0..20u64 {
            let mut r = rng::stream(31, &[case]);
            let x = rand_tensor::<f64>(&mut r, &[3, 4]);
            let w = rand_tensor::<f64>(&mut r, &[4, 2]);
            let b = rand_tensor::<f64>(&mut r, &[2]);
            let y = dense(&x, &w, &b).unwrap();
            assert!(y.max_abs_diff(&loop_oracle(&x, &w, &b)) < 1e-12);
            let f32y = dense(&x.cast::<f32>(), &w.cast(), &b.cast()).unwrap();
            assert!(f32y.cast::<f64>().max_abs_diff(&y) < 1e-5);

            let probe = rand_tensor::<f64>(&mut r, &[3, 2]);
            let obj = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
                dense(x, w, b).unwrap().data().iter().zip(probe.data()).map(|(a, p)| a * p).sum()
            };
            let g = dense_backward(&probe, &x, &w, true).unwrap();
            assert!(rel_err(g.input.as_ref().unwrap(), &central_diff(&x, 1e-6, |v| obj(v, &w, &b))) < 1e-5);
            assert!(rel_err(&g.weight, &central_diff(&w, 1e-6, |v| obj(&x, v, &b))) < 1e-5);
            assert!(rel_err(&g.bias, &central_diff(&b, 1e-6, |v| obj(&x, &w, v))) < 1e-5);
        }
    }

    #[test]
    fn shape_mismatch() {
        let x = Tensor::<f32>::zeros(&[2, 3]);
        assert!(dense(&x, &Tensor::zeros(&[4, 2]), &Tensor::zeros(&[2])).is_err());
        assert!(dense(&x, &Tensor::zeros(&[3, 2]), &Tensor::zeros(&[3])).is_err());
        assert!(dense_backward(&Tensor::zeros(&[2, 3]), &x, &Tensor::zeros(&[3, 2]), true).is_err());
    }
}
