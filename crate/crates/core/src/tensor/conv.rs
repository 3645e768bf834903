use crate::scalar::{gemm, MatRef};
use crate::{Error, Result, Scalar, Shape, Tensor};

/// Geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn new(out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvSpec {
            out_channels,
            kernel: (kernel, kernel),
            stride,
            pad,
        }
    }

    /// Output `(h, w)` for an input plane, or an error when the window does
    /// not fit or the spec itself is degenerate.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        if self.out_channels == 0 || kh == 0 || kw == 0 || self.stride == 0 {
            return Err(Error::geometry(
                "conv2d",
                format!("degenerate spec {self:?}"),
            ));
        }
        let oh = out_dim(h, kh, self.stride, self.pad);
        let ow = out_dim(w, kw, self.stride, self.pad);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::geometry(
                "conv2d",
                format!("kernel {kh}x{kw} pad {} does not fit input {h}x{w}", self.pad),
            )),
        }
    }

    pub fn weight_shape(&self, in_channels: usize) -> Result<Shape> {
        Shape::new(self.out_channels, in_channels, self.kernel.0, self.kernel.1)
    }
}

/// `floor((input + 2 pad - k) / stride) + 1`, `None` when non-positive.
pub(crate) fn out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if k > padded || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    /// `None` when the input gradient was not requested.
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn check(input: Shape, weight: Shape, bias_len: usize, spec: &ConvSpec) -> Result<Geom> {
    let (oh, ow) = spec.output_hw(input.h, input.w)?;
    let expected = spec.weight_shape(input.c)?;
    if weight != expected {
        return Err(Error::shape(
            "conv2d weight",
            format!("{expected} for input {input}"),
            weight,
        ));
    }
    if bias_len != spec.out_channels {
        return Err(Error::shape(
            "conv2d bias",
            spec.out_channels,
            bias_len,
        ));
    }
    Ok(Geom {
        c: input.c,
        h: input.h,
        w: input.w,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        pad: spec.pad,
        oh,
        ow,
    })
}

fn im2col<T: Scalar>(x: &[T], g: &Geom, col: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::ZERO
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &Geom, x: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input` (n, c, h, w) with `weight` (oc, c, kh, kw)
/// plus a per-output-channel bias.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let s = input.shape();
    let g = check(s, weight.shape(), bias.len(), spec)?;
    let oc = spec.out_channels;
    let out_shape = Shape::new(s.n, oc, g.oh, g.ow)?;
    let mut out = Tensor::zeros(out_shape);
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::ZERO; rows * cols]
    };
    let w = MatRef::new(weight.data(), oc, rows);
    for n in 0..s.n {
        let x = input.sample(n);
        let dst = out.sample_mut(n);
        for (o, chunk) in dst.chunks_mut(cols).enumerate() {
            chunk.fill(bias[o]);
        }
        if g.is_pointwise() {
            gemm(T::ONE, w, MatRef::new(x, rows, cols), T::ONE, dst);
        } else {
            im2col(x, &g, &mut col);
            gemm(T::ONE, w, MatRef::new(&col, rows, cols), T::ONE, dst);
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    conv2d_backward_impl(input, weight, grad_out, spec, true)
}

pub(crate) fn conv2d_backward_impl<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: &ConvSpec,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let s = input.shape();
    let g = check(s, weight.shape(), spec.out_channels, spec)?;
    let oc = spec.out_channels;
    let expected = Shape::new(s.n, oc, g.oh, g.ow)?;
    if grad_out.shape() != expected {
        return Err(Error::shape("conv2d_backward grad_out", expected, grad_out.shape()));
    }
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut grad_w = Tensor::zeros(weight.shape());
    let mut grad_b = vec![T::ZERO; oc];
    let mut grad_in = want_input.then(|| Tensor::zeros(s));
    let pointwise = g.is_pointwise();
    let mut col = if pointwise {
        Vec::new()
    } else {
        vec![T::ZERO; rows * cols]
    };
    let mut grad_col = if want_input && !pointwise {
        vec![T::ZERO; rows * cols]
    } else {
        Vec::new()
    };
    let w = MatRef::new(weight.data(), oc, rows);
    for n in 0..s.n {
        let gy = grad_out.sample(n);
        for (o, chunk) in gy.chunks(cols).enumerate() {
            grad_b[o] += chunk.iter().copied().sum::<T>();
        }
        let gy_m = MatRef::new(gy, oc, cols);
        let x = input.sample(n);
        let col_ref = if pointwise {
            MatRef::new(x, rows, cols)
        } else {
            im2col(x, &g, &mut col);
            MatRef::new(&col, rows, cols)
        };
        gemm(T::ONE, gy_m, col_ref.t(), T::ONE, grad_w.data_mut());
        if let Some(gx) = grad_in.as_mut() {
            if pointwise {
                gemm(T::ONE, w.t(), gy_m, T::ZERO, gx.sample_mut(n));
            } else {
                gemm(T::ONE, w.t(), gy_m, T::ZERO, &mut grad_col);
                col2im(&grad_col, &g, gx.sample_mut(n));
            }
        }
    }
    Ok(ConvGrads {
        input: grad_in,
        weight: grad_w,
        bias: grad_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: (usize, usize, usize, usize), v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(Shape::new(shape.0, shape.1, shape.2, shape.3).unwrap(), v).unwrap()
    }

    /// Direct quadruple-loop convolution, independent of im2col/GEMM.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], spec: &ConvSpec) -> Tensor<f64> {
        let s = x.shape();
        let ws = w.shape();
        let oh = (s.h + 2 * spec.pad - ws.h) / spec.stride + 1;
        let ow = (s.w + 2 * spec.pad - ws.w) / spec.stride + 1;
        let mut out = Tensor::zeros(Shape::new(s.n, ws.n, oh, ow).unwrap());
        for n in 0..s.n {
            for o in 0..ws.n {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = b[o];
                        for c in 0..s.c {
                            for i in 0..ws.h {
                                for j in 0..ws.w {
                                    let iy = (y * spec.stride + i) as isize - spec.pad as isize;
                                    let ix = (xx * spec.stride + j) as isize - spec.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                                        acc += x.at(n, c, iy as usize, ix as usize) * w.at(o, c, i, j);
                                    }
                                }
                            }
                        }
                        let idx = out.index(n, o, y, xx);
                        out.data_mut()[idx] = acc;
                    }
                }
            }
        }
        out
    }

    fn lcg(seed: u64, len: usize) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..len)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn two_by_two_kernel_example() {
        let x = t((1, 1, 3, 3), &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let w = t((1, 1, 2, 2), &[1., 0., 0., 1.]);
        let spec = ConvSpec::new(1, 2, 1, 0);
        let y = conv2d_forward(&x, &w, &[0.0], &spec).unwrap();
        assert_eq!(y.data(), &[6., 8., 12., 14.]);
        assert_eq!(y, naive_conv(&x, &w, &[0.0], &spec));
    }

    #[test]
    fn identity_kernel_and_zero_input() {
        let vals = lcg(3, 2 * 3 * 4 * 5);
        let x = t((2, 3, 4, 5), &vals);
        let mut wv = vec![0.0; 9];
        for c in 0..3 {
            wv[c * 3 + c] = 1.0;
        }
        let w = t((3, 3, 1, 1), &wv);
        let y = conv2d_forward(&x, &w, &[0.0; 3], &ConvSpec::new(3, 1, 1, 0)).unwrap();
        assert_eq!(y, x);

        let zero = Tensor::<f64>::zeros(x.shape());
        let w3 = t((2, 3, 3, 3), &lcg(4, 54));
        let y = conv2d_forward(&zero, &w3, &[0.25, -1.5], &ConvSpec::new(2, 3, 1, 1)).unwrap();
        for o in 0..2 {
            let b = [0.25, -1.5][o];
            for n in 0..2 {
                assert!(y.sample(n)[o * 20..(o + 1) * 20].iter().all(|&v| v == b));
            }
        }
    }

    #[test]
    fn matches_naive_oracle_with_stride_and_pad() {
        for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 0), (5, 2, 2), (1, 1, 0), (2, 3, 1), (4, 4, 0)] {
            let x = t((2, 3, 9, 7), &lcg(k as u64 * 7 + stride as u64, 2 * 3 * 9 * 7));
            let w = t((4, 3, k, k), &lcg(11 + pad as u64, 4 * 3 * k * k));
            let b = [0.1, -0.2, 0.3, 0.0];
            let spec = ConvSpec::new(4, k, stride, pad);
            let got = conv2d_forward(&x, &w, &b, &spec).unwrap();
            let want = naive_conv(&x, &w, &b, &spec);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "k={k} s={stride} p={pad}");
            }
        }
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let x = t((1, 2, 3, 3), &[0.0; 18]);
        let w = t((1, 3, 2, 2), &[0.0; 12]);
        let err = conv2d_forward(&x, &w, &[0.0], &ConvSpec::new(1, 2, 1, 0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1x3x2x2") && msg.contains("1x2x3x3"), "{msg}");

        let w = t((1, 2, 5, 5), &[0.0; 50]);
        assert!(matches!(
            conv2d_forward(&x, &w, &[0.0], &ConvSpec::new(1, 5, 1, 0)),
            Err(Error::Geometry { .. })
        ));
    }

    #[test]
    fn backward_small_example() {
        let x = t((1, 1, 3, 3), &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let w = t((1, 1, 2, 2), &[1., 0., 0., 1.]);
        let spec = ConvSpec::new(1, 2, 1, 0);
        let gy = Tensor::full(Shape::new(1, 1, 2, 2).unwrap(), 1.0);
        let g = conv2d_backward(&x, &w, &gy, &spec).unwrap();
        assert_eq!(g.bias, vec![4.0]);
        assert_eq!(g.weight.at(0, 0, 0, 0), 12.0);

        let zero = Tensor::zeros(gy.shape());
        let g = conv2d_backward(&x, &w, &zero, &spec).unwrap();
        assert!(g.bias.iter().all(|&v| v == 0.0));
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));

        let bad = Tensor::zeros(Shape::new(1, 1, 3, 3).unwrap());
        assert!(conv2d_backward(&x, &w, &bad, &spec).is_err());
    }
}
