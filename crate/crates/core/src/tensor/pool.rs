use super::conv::out_dim;
use crate::{Error, Result, Scalar, Shape, Tensor};

/// Square pooling window with symmetric padding. Padded sites never win a max.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PoolSpec {
    pub fn new(kernel: usize, stride: usize) -> Self {
        PoolSpec {
            kernel,
            stride,
            pad: 0,
        }
    }

    pub fn padded(kernel: usize, stride: usize, pad: usize) -> Self {
        PoolSpec { kernel, stride, pad }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::geometry("maxpool2d", format!("degenerate spec {self:?}")));
        }
        if self.pad >= self.kernel {
            return Err(Error::geometry(
                "maxpool2d",
                format!("pad {} must be smaller than kernel {}", self.pad, self.kernel),
            ));
        }
        match (
            out_dim(h, self.kernel, self.stride, self.pad),
            out_dim(w, self.kernel, self.stride, self.pad),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::geometry(
                "maxpool2d",
                format!("kernel {} larger than input {h}x{w}", self.kernel),
            )),
        }
    }
}

/// Winning input offset (linear, into the input tensor) for every output element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Shape,
    pub argmax: Vec<usize>,
}

pub fn maxpool2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: usize,
    stride: usize,
) -> Result<(Tensor<T>, PoolIndices)> {
    maxpool2d_padded(input, &PoolSpec::new(kernel, stride))
}

/// Max pooling; ties go to the lowest linear index in the window.
pub fn maxpool2d_padded<T: Scalar>(
    input: &Tensor<T>,
    spec: &PoolSpec,
) -> Result<(Tensor<T>, PoolIndices)> {
    let s = input.shape();
    let (oh, ow) = spec.output_hw(s.h, s.w)?;
    let out_shape = Shape::new(s.n, s.c, oh, ow)?;
    let mut out = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(out_shape.len());
    let data = input.data();
    let pad = spec.pad as isize;
    for plane in 0..s.n * s.c {
        let base = plane * s.h * s.w;
        for oy in 0..oh {
            let y0 = (oy * spec.stride) as isize - pad;
            let ys = y0.max(0) as usize..((y0 + spec.kernel as isize).min(s.h as isize)) as usize;
            for ox in 0..ow {
                let x0 = (ox * spec.stride) as isize - pad;
                let xs = x0.max(0) as usize..((x0 + spec.kernel as isize).min(s.w as isize)) as usize;
                let mut best = usize::MAX;
                let mut best_v = T::ZERO;
                for y in ys.clone() {
                    for x in xs.clone() {
                        let idx = base + y * s.w + x;
                        let v = data[idx];
                        if best == usize::MAX || v > best_v {
                            best = idx;
                            best_v = v;
                        }
                    }
                }
                out.push(best_v);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::from_vec(out_shape, out)?,
        PoolIndices {
            input_shape: s,
            argmax,
        },
    ))
}

/// Routes each output gradient to its recorded argmax site.
pub fn maxpool2d_backward<T: Scalar>(grad_out: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::shape(
            "maxpool2d_backward",
            format!("{} gradient elements", indices.argmax.len()),
            grad_out.shape(),
        ));
    }
    let mut gx = Tensor::zeros(indices.input_shape);
    let dst = gx.data_mut();
    for (&i, &g) in indices.argmax.iter().zip(grad_out.data()) {
        dst[i] += g;
    }
    Ok(gx)
}

/// Spatial mean per channel: `(n, c, h, w) -> (n, c, 1, 1)`.
pub fn avgpool_global<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let plane = s.plane();
    let inv = T::ONE / T::from_f64(plane as f64);
    let data = input
        .data()
        .chunks(plane)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec(Shape { h: 1, w: 1, ..s }, data).expect("global pool shape")
}

pub fn avgpool_global_backward<T: Scalar>(grad_out: &Tensor<T>, input_shape: Shape) -> Result<Tensor<T>> {
    let expected = Shape {
        h: 1,
        w: 1,
        ..input_shape
    };
    if grad_out.shape() != expected {
        return Err(Error::shape("avgpool_global_backward", expected, grad_out.shape()));
    }
    let plane = input_shape.plane();
    let inv = T::ONE / T::from_f64(plane as f64);
    let mut data = Vec::with_capacity(input_shape.len());
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * inv, plane));
    }
    Tensor::from_vec(input_shape, data)
}
