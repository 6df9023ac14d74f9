//! Classification loss, row normalisation and the NT-Xent contrastive loss.

use super::scalar::{gemm, Strided};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Mean softmax cross-entropy over the batch, with its logit gradient
/// `(softmax − onehot) / batch`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>)> {
    logits.expect_rank("softmax_cross_entropy", 2)?;
    let (batch, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != batch {
        return Err(Error::dim(
            "softmax_cross_entropy",
            format!("{} labels for batch of {batch}", labels.len()),
        ));
    }
    if batch == 0 {
        return Err(Error::dim("softmax_cross_entropy", "empty batch"));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let inv_batch = T::lit(1.0 / batch as f64);
    let mut grad = Tensor::zeros(&[batch, classes]);
    let mut total = 0.0f64;
    for (b, &label) in labels.iter().enumerate() {
        let row = logits.outer(b);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let g = grad.outer_mut(b);
        let mut z = T::zero();
        for (gi, &x) in g.iter_mut().zip(row) {
            *gi = (x - max).exp();
            z += *gi;
        }
        total += (z.ln() + max - row[label]).as_f64();
        for gi in g.iter_mut() {
            *gi = *gi / z * inv_batch;
        }
        g[label] -= inv_batch;
    }
    Ok((total / batch as f64, grad))
}

/// Rows of the input divided by their Euclidean norms.
#[derive(Debug, Clone)]
pub struct Normalized<T: Scalar> {
    pub output: Tensor<T>,
    pub norms: Vec<T>,
}

/// Norms below this are rejected as degenerate embeddings.
pub const MIN_ROW_NORM: f64 = 1e-12;

pub fn l2_normalize<T: Scalar>(input: &Tensor<T>) -> Result<Normalized<T>> {
    input.expect_rank("l2_normalize", 2)?;
    let rows = input.shape()[0];
    let mut out = input.clone();
    let mut norms = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = out.outer_mut(r);
        let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
        if !(norm.as_f64() >= MIN_ROW_NORM) {
            return Err(Error::DegenerateEmbedding {
                row: r,
                norm: norm.as_f64(),
            });
        }
        row.iter_mut().for_each(|x| *x /= norm);
        norms.push(norm);
    }
    Ok(Normalized { output: out, norms })
}

/// `dx = (g − y·(y·g)) / ‖x‖` per row.
pub fn l2_normalize_backward<T: Scalar>(grad_out: &Tensor<T>, fwd: &Normalized<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != fwd.output.shape() {
        return Err(Error::dim(
            "l2_normalize_backward",
            format!("{:?} vs {:?}", grad_out.shape(), fwd.output.shape()),
        ));
    }
    let mut gi = grad_out.clone();
    for (r, &norm) in fwd.norms.iter().enumerate() {
        let y = fwd.output.outer(r);
        let g = gi.outer_mut(r);
        let dot: T = y.iter().zip(g.iter()).map(|(&a, &b)| a * b).sum();
        for (gv, &yv) in g.iter_mut().zip(y) {
            *gv = (*gv - yv * dot) / norm;
        }
    }
    Ok(gi)
}

/// NT-Xent over `2N` embeddings where rows `2i` and `2i+1` are the two views
/// of sample `i`.
///
/// Similarities are plain dot products, so rows are expected to be unit
/// vectors already; the gradient is taken with respect to `z` as given.
pub fn nt_xent_loss<T: Scalar>(z: &Tensor<T>, temperature: f64) -> Result<(f64, Tensor<T>)> {
    if !(temperature > 0.0) {
        return Err(Error::Parameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    z.expect_rank("nt_xent_loss", 2)?;
    let (rows, dim) = (z.shape()[0], z.shape()[1]);
    if rows < 2 || rows % 2 != 0 {
        return Err(Error::dim(
            "nt_xent_loss",
            format!("need an even number (>= 2) of rows, got {rows}"),
        ));
    }
    let inv_tau = T::lit(1.0 / temperature);
    let zs = Strided::row_major(rows, dim);
    let mut sim = vec![T::zero(); rows * rows];
    gemm(z.data(), zs, z.data(), zs.transposed(), T::zero(), &mut sim, Strided::row_major(rows, rows));
    sim.iter_mut().for_each(|s| *s *= inv_tau);

    // sim becomes dL/dlogits in place, row by row.
    let scale = T::lit(1.0 / rows as f64);
    let mut total = 0.0f64;
    for a in 0..rows {
        let pos = a ^ 1;
        let row = &mut sim[a * rows..(a + 1) * rows];
        let max = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != a)
            .map(|(_, &v)| v)
            .fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        let positive = row[pos];
        for (k, v) in row.iter_mut().enumerate() {
            if k == a {
                *v = T::zero();
            } else {
                *v = (*v - max).exp();
                denom += *v;
            }
        }
        total += (denom.ln() + max - positive).as_f64();
        for v in row.iter_mut() {
            *v = *v / denom * scale;
        }
        row[pos] -= scale;
    }
    // dz = (dS + dSᵀ)·z / τ
    let mut sym = vec![T::zero(); rows * rows];
    for a in 0..rows {
        for k in 0..rows {
            sym[a * rows + k] = (sim[a * rows + k] + sim[k * rows + a]) * inv_tau;
        }
    }
    let mut grad = Tensor::zeros(&[rows, dim]);
    gemm(&sym, Strided::row_major(rows, rows), z.data(), zs, T::zero(), grad.data_mut(), zs);
    Ok((total / rows as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::fixtures::{central_diff, rand_tensor, rel_err};
    use crate::rng;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let (l, g) = softmax_cross_entropy(&Tensor::<f64>::zeros(&[4, 6]), &[0, 1, 2, 5]).unwrap();
        assert!((l - 6f64.ln()).abs() < 1e-12);
        assert!((l - 1.7918).abs() < 1e-4);
        assert!((g.sum()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_gives_zero_loss() {
        let mut x = Tensor::<f32>::zeros(&[1, 6]);
        x.data_mut()[2] = 100.0;
        let (l, _) = softmax_cross_entropy(&x, &[2]).unwrap();
        assert!(l.abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_matches_direct_formula() {
        for case in 0..20u64 {
            let mut r = rng::stream(40, &[case]);
            let x = rand_tensor::<f64>(&mut r, &[5, 6]);
            let labels: Vec<usize> = (0..5).map(|i| (i * 7 + case as usize) % 6).collect();
            let (l, g) = softmax_cross_entropy(&x, &labels).unwrap();
            let mut want = 0.0;
            let mut want_g = Tensor::<f64>::zeros(&[5, 6]);
            for b in 0..5 {
                let row = x.outer(b);
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                want -= (row[labels[b]].exp() / z).ln() / 5.0;
                for (c, v) in row.iter().enumerate() {
                    let onehot = if c == labels[b] { 1.0 } else { 0.0 };
                    want_g.data_mut()[b * 6 + c] = (v.exp() / z - onehot) / 5.0;
                }
            }
            assert!((l - want).abs() < 1e-12);
            assert!(g.max_abs_diff(&want_g) < 1e-12);
        }
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            softmax_cross_entropy(&Tensor::<f32>::zeros(&[1, 6]), &[6]),
            Err(Error::LabelOutOfRange { label: 6, classes: 6 })
        ));
    }

    #[test]
    fn normalize_examples() {
        let x = Tensor::<f64>::from_vec(&[2, 2], vec![3.0, 4.0, 0.6, 0.8]).unwrap();
        let n = l2_normalize(&x).unwrap();
        assert!((n.output.data()[0] - 0.6).abs() < 1e-15);
        assert!((n.output.data()[1] - 0.8).abs() < 1e-15);
        assert!((n.output.data()[2] - 0.6).abs() < 1e-15);
        assert!((n.output.data()[3] - 0.8).abs() < 1e-15);
        assert!(matches!(
            l2_normalize(&Tensor::<f32>::zeros(&[1, 3])),
            Err(Error::DegenerateEmbedding { row: 0, .. })
        ));
    }

    #[test]
    fn normalize_gradient_matches_finite_differences() {
        for case in 0..20u64 {
            let mut r = rng::stream(41, &[case]);
            let x = rand_tensor::<f64>(&mut r, &[3, 5]);
            let probe = rand_tensor::<f64>(&mut r, &[3, 5]);
            let f = |x: &Tensor<f64>| -> f64 {
                l2_normalize(x).unwrap().output.data().iter().zip(probe.data()).map(|(a, p)| a * p).sum()
            };
            let fwd = l2_normalize(&x).unwrap();
            for row in 0..3 {
                let n: f64 = fwd.output.outer(row).iter().map(|v| v * v).sum();
                assert!((n.sqrt() - 1.0).abs() < 1e-6);
            }
            let g = l2_normalize_backward(&probe, &fwd).unwrap();
            assert!(rel_err(&g, &central_diff(&x, 1e-6, f)) < 1e-5);
        }
    }

    /// Enumerates every ordered positive pair and its denominator directly.
    fn nt_xent_oracle(z: &Tensor<f64>, tau: f64) -> (f64, Tensor<f64>) {
        let (n2, d) = (z.shape()[0], z.shape()[1]);
        let dot = |a: usize, b: usize| (0..d).map(|k| z.data()[a * d + k] * z.data()[b * d + k]).sum::<f64>();
        let mut loss = 0.0;
        let mut grad = Tensor::<f64>::zeros(&[n2, d]);
        for a in 0..n2 {
            let p = if a % 2 == 0 { a + 1 } else { a - 1 };
            let denom: f64 = (0..n2).filter(|&k| k != a).map(|k| (dot(a, k) / tau).exp()).sum();
            loss += -((dot(a, p) / tau).exp() / denom).ln();
            // d/dz of −sim(a,p)/τ + ln Σ_k exp(sim(a,k)/τ)
            for j in 0..d {
                grad.data_mut()[a * d + j] -= z.data()[p * d + j] / tau;
                grad.data_mut()[p * d + j] -= z.data()[a * d + j] / tau;
            }
            for k in (0..n2).filter(|&k| k != a) {
                let w = (dot(a, k) / tau).exp() / denom / tau;
                for j in 0..d {
                    grad.data_mut()[a * d + j] += w * z.data()[k * d + j];
                    grad.data_mut()[k * d + j] += w * z.data()[a * d + j];
                }
            }
        }
        let scale = 1.0 / n2 as f64;
        (loss * scale, grad.map(|g| g * scale))
    }

    fn unit_rows(r: &mut crate::rng::Rng, rows: usize, d: usize) -> Tensor<f64> {
        l2_normalize(&rand_tensor::<f64>(r, &[rows, d])).unwrap().output
    }

    #[test]
    fn single_pair_loss_is_zero() {
        let mut r = rng::stream(42, &[]);
        let z = unit_rows(&mut r, 2, 7);
        let (l, g) = nt_xent_loss(&z, 0.1).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_embeddings_give_ln_2n_minus_1() {
        for n in 1..=8usize {
            let z = Tensor::<f64>::from_fn(&[2 * n, 3], |i| [0.6, 0.0, 0.8][i % 3]);
            let (l, _) = nt_xent_loss(&z, 0.1).unwrap();
            assert!((l - ((2 * n - 1) as f64).ln()).abs() < 1e-9, "n={n}");
        }
        let z = Tensor::<f64>::from_fn(&[4, 2], |i| [1.0, 0.0][i % 2]);
        assert!((nt_xent_loss(&z, 0.5).unwrap().0 - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn matches_pair_enumeration_oracle() {
        let mut r = rng::stream(43, &[]);
        let z = unit_rows(&mut r, 6, 4);
        let (l, g) = nt_xent_loss(&z, 0.1).unwrap();
        let (wl, wg) = nt_xent_oracle(&z, 0.1);
        assert!((l - wl).abs() <= 1e-6 * wl.abs());
        assert!(rel_err(&g, &wg) < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for case in 0..20u64 {
            let mut r = rng::stream(44, &[case]);
            let z = unit_rows(&mut r, 2 * (1 + case as usize % 4), 5);
            let (_, g) = nt_xent_loss(&z, 0.2).unwrap();
            let num = central_diff(&z, 1e-6, |zp| nt_xent_loss(zp, 0.2).unwrap().0);
            assert!(rel_err(&g, &num) < 1e-5, "case {case}");
        }
    }

    #[test]
    fn invalid_arguments() {
        let z = Tensor::<f64>::full(&[4, 2], 0.5);
        assert!(matches!(nt_xent_loss(&z, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(nt_xent_loss(&z, -1.0), Err(Error::Parameter(_))));
        assert!(nt_xent_loss(&Tensor::<f64>::full(&[1, 2], 0.5), 0.1).is_err());
        assert!(nt_xent_loss(&Tensor::<f64>::full(&[3, 2], 0.5), 0.1).is_err());
    }
}
