//! Stateless layer kernels and their backward passes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::{gemm, MatRef};
use crate::{Error, Result, Scalar, Shape, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

pub(crate) fn relu_backward<T: Scalar>(y: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&y, &g)| if y > T::ZERO { g } else { T::ZERO })
        .collect();
    Tensor::from_vec(y.shape(), data).expect("relu grad shape")
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

pub(crate) fn tanh_backward<T: Scalar>(y: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&y, &g)| g * (T::ONE - y * y))
        .collect();
    Tensor::from_vec(y.shape(), data).expect("tanh grad shape")
}

/// Cross-channel LRN: `b_i = a_i / (k + alpha/n * sum_{j in window(i)} a_j^2)^beta`.
pub fn lrn<T: Scalar>(input: &Tensor<T>, depth_n: usize, alpha: f64, k: f64, beta: f64) -> Result<Tensor<T>> {
    Ok(lrn_forward(input, depth_n, alpha, k, beta)?.0)
}

/// Returns the output and the per-element denominators `k + alpha/n * sum`.
pub(crate) fn lrn_forward<T: Scalar>(
    input: &Tensor<T>,
    depth_n: usize,
    alpha: f64,
    k: f64,
    beta: f64,
) -> Result<(Tensor<T>, Vec<T>)> {
    if depth_n == 0 || depth_n % 2 == 0 {
        return Err(Error::invalid(format!("lrn window must be odd and >= 1, got {depth_n}")));
    }
    let s = input.shape();
    let half = depth_n / 2;
    let plane = s.plane();
    let coef = T::from_f64(alpha / depth_n as f64);
    let (k, beta) = (T::from_f64(k), T::from_f64(beta));
    let mut scale = vec![k; s.len()];
    let mut out = vec![T::ZERO; s.len()];
    let x = input.data();
    let mut sq = vec![T::ZERO; s.sample_len()];
    for n in 0..s.n {
        let off = n * s.sample_len();
        for (q, &v) in sq.iter_mut().zip(&x[off..off + s.sample_len()]) {
            *q = v * v;
        }
        for c in 0..s.c {
            let lo = c.saturating_sub(half);
            let hi = (c + half).min(s.c - 1);
            let dst = &mut scale[off + c * plane..off + (c + 1) * plane];
            for j in lo..=hi {
                for (d, &q) in dst.iter_mut().zip(&sq[j * plane..(j + 1) * plane]) {
                    *d += coef * q;
                }
            }
        }
    }
    for ((o, &v), &sc) in out.iter_mut().zip(x).zip(&scale) {
        *o = v * sc.powf(-beta);
    }
    Ok((Tensor::from_vec(s, out)?, scale))
}

pub(crate) fn lrn_backward<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    scale: &[T],
    gy: &Tensor<T>,
    depth_n: usize,
    alpha: f64,
    beta: f64,
) -> Tensor<T> {
    let s = x.shape();
    let half = depth_n / 2;
    let plane = s.plane();
    let factor = T::from_f64(2.0 * alpha * beta / depth_n as f64);
    let neg_beta = T::from_f64(-beta);
    // ratio_i = gy_i * y_i / scale_i
    let ratio: Vec<T> = gy
        .data()
        .iter()
        .zip(y.data())
        .zip(scale)
        .map(|((&g, &y), &sc)| g * y / sc)
        .collect();
    let mut gx = vec![T::ZERO; s.len()];
    for n in 0..s.n {
        let off = n * s.sample_len();
        for c in 0..s.c {
            // element j receives from every i whose window contains j
            let lo = c.saturating_sub(half);
            let hi = (c + half).min(s.c - 1);
            let base = off + c * plane;
            for p in 0..plane {
                let mut acc = T::ZERO;
                for i in lo..=hi {
                    acc += ratio[off + i * plane + p];
                }
                let idx = base + p;
                gx[idx] = gy.data()[idx] * scale[idx].powf(neg_beta) - factor * x.data()[idx] * acc;
            }
        }
    }
    Tensor::from_vec(s, gx).expect("lrn grad shape")
}

/// Scales every sample's flattened feature vector to unit L2 norm; zero
/// vectors pass through unchanged.
pub fn l2_normalize<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    l2_forward(input).0
}

pub(crate) fn l2_forward<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
    let s = input.shape();
    let mut out = input.clone();
    let mut norms = Vec::with_capacity(s.n);
    for n in 0..s.n {
        let v = out.sample_mut(n);
        let norm = v.iter().map(|&a| a * a).sum::<T>().sqrt();
        if norm > T::ZERO {
            v.iter_mut().for_each(|a| *a /= norm);
        }
        norms.push(norm);
    }
    (out, norms)
}

pub(crate) fn l2_backward<T: Scalar>(y: &Tensor<T>, norms: &[T], gy: &Tensor<T>) -> Tensor<T> {
    let mut gx = gy.clone();
    for (n, &norm) in norms.iter().enumerate() {
        if norm == T::ZERO {
            continue;
        }
        let yv = y.sample(n);
        let g = gx.sample_mut(n);
        let dot: T = yv.iter().zip(g.iter()).map(|(&a, &b)| a * b).sum();
        for (gi, &yi) in g.iter_mut().zip(yv) {
            *gi = (*gi - yi * dot) / norm;
        }
    }
    gx
}

/// Inverted dropout mask: kept sites hold `1/keep`, dropped sites zero.
pub(crate) fn dropout_mask<T: Scalar>(len: usize, keep: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let scale = T::from_f64(1.0 / keep);
    (0..len)
        .map(|_| if rng.random::<f64>() < keep { scale } else { T::ZERO })
        .collect()
}

pub(crate) fn apply_mask<T: Scalar>(x: &Tensor<T>, mask: &[T]) -> Tensor<T> {
    let data = x.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
    Tensor::from_vec(x.shape(), data).expect("mask shape")
}

/// `y = W x + b` per sample; `weight` is `(out, in, 1, 1)`.
pub(crate) fn fc_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let ws = weight.shape();
    let inf = s.sample_len();
    if ws.c != inf {
        return Err(Error::shape("fc", format!("{} input features", ws.c), s));
    }
    let out = ws.n;
    let mut y = vec![T::ZERO; s.n * out];
    for row in y.chunks_mut(out) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        T::ONE,
        MatRef::new(x.data(), s.n, inf),
        MatRef::new(weight.data(), out, inf).t(),
        T::ONE,
        &mut y,
    );
    Tensor::from_vec(Shape::new(s.n, out, 1, 1)?, y)
}

pub(crate) fn fc_backward_weight<T: Scalar>(x: &Tensor<T>, gy: &Tensor<T>, grad_w: &mut Tensor<T>) {
    let s = x.shape();
    let out = gy.shape().c;
    gemm(
        T::ONE,
        MatRef::new(gy.data(), s.n, out).t(),
        MatRef::new(x.data(), s.n, s.sample_len()),
        T::ONE,
        grad_w.data_mut(),
    );
}

pub(crate) fn fc_backward_bias<T: Scalar>(gy: &Tensor<T>, grad_b: &mut Tensor<T>) {
    for row in gy.data().chunks(gy.shape().c) {
        for (b, &v) in grad_b.data_mut().iter_mut().zip(row) {
            *b += v;
        }
    }
}

pub(crate) fn fc_backward_input<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let out = weight.shape().n;
    let mut gx = vec![T::ZERO; s.len()];
    gemm(
        T::ONE,
        MatRef::new(gy.data(), s.n, out),
        MatRef::new(weight.data(), out, s.sample_len()),
        T::ZERO,
        &mut gx,
    );
    Tensor::from_vec(s, gx).expect("fc grad shape")
}

/// Row-wise softmax over channels with max subtraction. Entries are kept
/// strictly inside (0, 1): underflow is lifted to the smallest positive
/// value and saturation capped one ulp below 1.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let s = logits.shape();
    let (lo, hi) = (T::min_positive_value(), T::ONE - T::epsilon() / T::from_f64(2.0));
    let mut out = logits.clone();
    for n in 0..s.n {
        let row = out.sample_mut(n);
        let m = row.iter().copied().fold(row[0], |a, b| a.max(b));
        let mut sum = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v = (*v / sum).max(lo).min(hi));
    }
    out
}

/// Mean cross-entropy computed from logits via log-sum-exp.
pub fn cross_entropy_logits<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let s = logits.shape();
    check_labels(labels, s.n, s.sample_len())?;
    let mut total = 0.0;
    for (n, &label) in labels.iter().enumerate() {
        let row = logits.sample(n);
        let m = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v.as_f64() - m).exp()).sum::<f64>().ln();
        total += lse - row[label].as_f64();
    }
    Ok(total / s.n as f64)
}

/// Mean cross-entropy of probability rows, clamped at 1e-12.
pub fn cross_entropy_probs<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let s = probs.shape();
    check_labels(labels, s.n, s.sample_len())?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(n, &l)| -probs.sample(n)[l].as_f64().max(1e-12).ln())
        .sum();
    Ok(total / s.n as f64)
}

pub(crate) fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::shape("labels", format!("{n} labels"), labels.len()));
    }
    for (sample, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Label {
                label,
                classes,
                sample,
            });
        }
    }
    Ok(())
}

/// `weight * (p - onehot) / n`, the logit gradient of the mean cross-entropy.
pub(crate) fn softmax_xent_backward<T: Scalar>(probs: &Tensor<T>, labels: &[usize], weight: f64) -> Tensor<T> {
    let s = probs.shape();
    let scale = T::from_f64(weight / s.n as f64);
    let mut g = probs.clone();
    for (n, &l) in labels.iter().enumerate() {
        let row = g.sample_mut(n);
        row[l] -= T::ONE;
        row.iter_mut().for_each(|v| *v *= scale);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_t(c: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(Shape::new(v.len() / c, c, 1, 1).unwrap(), v).unwrap()
    }

    #[test]
    fn relu_and_tanh() {
        assert_eq!(relu(&vec_t(2, &[-1.0, 2.0])).data(), &[0.0, 2.0]);
        assert_eq!(tanh(&vec_t(1, &[0.0])).data(), &[0.0]);
    }

    #[test]
    fn lrn_examples() {
        let x = Tensor::<f64>::from_f64(Shape::new(1, 4, 2, 1).unwrap(), &[1., -2., 3., 0.5, 4., 1., -1., 2.]).unwrap();
        assert_eq!(lrn(&x, 5, 0.0, 1.0, 0.75).unwrap(), x);
        let one = vec_t(1, &[1.0]);
        let y = lrn(&one, 1, 1e-4, 2.0, 0.75).unwrap();
        assert!((y.data()[0] - 1.0 / 2.0001f64.powf(0.75)).abs() < 1e-15);
        let z = Tensor::<f64>::zeros(x.shape());
        assert_eq!(lrn(&z, 5, 1e-4, 2.0, 0.75).unwrap(), z);
        assert!(lrn(&x, 4, 1e-4, 2.0, 0.75).is_err());
    }

    #[test]
    fn lrn_matches_direct_formula() {
        let vals: Vec<f64> = (0..14).map(|v| (v as f64 * 0.7).sin() * 3.0).collect();
        let x = Tensor::<f64>::from_f64(Shape::new(2, 7, 1, 1).unwrap(), &vals).unwrap();
        let (alpha, beta, k, n) = (0.3, 0.75, 2.0, 3usize);
        let y = lrn(&x, n, alpha, k, beta).unwrap();
        for s in 0..2 {
            for c in 0..7usize {
                let lo = c.saturating_sub(1);
                let hi = (c + 1).min(6);
                let sum: f64 = (lo..=hi).map(|j| x.at(s, j, 0, 0).powi(2)).sum();
                let want = x.at(s, c, 0, 0) / (k + alpha / n as f64 * sum).powf(beta);
                assert!((y.at(s, c, 0, 0) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn l2_examples() {
        let y = l2_normalize(&vec_t(2, &[3.0, 4.0, 0.0, 0.0, 1.0, 0.0]));
        assert_eq!(y.data(), &[0.6, 0.8, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let x = vec_t(3, &[1000.0, 0.0, -1000.0, 0.1, 0.2, 0.3]);
        let p = softmax(&x);
        for n in 0..2 {
            let s: f64 = p.sample(n).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_cases() {
        let uniform = vec_t(4, &[0.0; 8]);
        let l = cross_entropy_logits(&uniform, &[0, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let onehot = vec_t(3, &[0.0, 1.0, 0.0]);
        assert_eq!(cross_entropy_probs(&onehot, &[1]).unwrap(), 0.0);
        let wrong = cross_entropy_probs(&onehot, &[0]).unwrap();
        assert!((wrong - (1e12f64).ln()).abs() < 1e-9);
        assert!(matches!(
            cross_entropy_logits(&uniform, &[0, 4]),
            Err(Error::Label { label: 4, classes: 4, sample: 1 })
        ));
    }
}
