use crate::{Error, Result, Scalar, Shape, Tensor};

/// Concatenates along the channel axis; input `i` occupies a contiguous
/// channel slice, in order.
pub fn concat_channels<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::invalid("concat of zero tensors"))?
        .shape();
    let mut channels = 0;
    for (i, t) in inputs.iter().enumerate() {
        let s = t.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(Error::ConcatMismatch {
                index: i,
                expected: format!("{}x*x{}x{}", first.n, first.h, first.w),
                got: s.to_string(),
            });
        }
        channels += s.c;
    }
    let out_shape = first.with_c(channels);
    let mut data = Vec::with_capacity(out_shape.len());
    for n in 0..first.n {
        for t in inputs {
            data.extend_from_slice(t.sample(n));
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Copies channels `start..start + count`.
pub fn slice_channels<T: Scalar>(input: &Tensor<T>, start: usize, count: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if count == 0 || start + count > s.c {
        return Err(Error::geometry(
            "slice_channels",
            format!("channels {start}..{} outside {}", start + count, s.c),
        ));
    }
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.n * count * plane);
    for n in 0..s.n {
        let src = input.sample(n);
        data.extend_from_slice(&src[start * plane..(start + count) * plane]);
    }
    Tensor::from_vec(s.with_c(count), data)
}

/// Splits a concat gradient back into per-input slices.
pub fn concat_channels_backward<T: Scalar>(grad_out: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let total: usize = channels.iter().sum();
    if total != grad_out.shape().c {
        return Err(Error::shape(
            "concat_channels_backward",
            format!("{total} channels"),
            grad_out.shape(),
        ));
    }
    let mut start = 0;
    channels
        .iter()
        .map(|&c| {
            let t = slice_channels(grad_out, start, c);
            start += c;
            t
        })
        .collect()
}

/// Copies the `height x width` window whose top-left corner is `(top, left)`.
pub fn crop<T: Scalar>(input: &Tensor<T>, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if height == 0 || width == 0 || top + height > s.h || left + width > s.w {
        return Err(Error::geometry(
            "crop",
            format!(
                "window {height}x{width} at ({top},{left}) outside {}x{}",
                s.h, s.w
            ),
        ));
    }
    let out_shape = Shape {
        h: height,
        w: width,
        ..s
    };
    let mut data = Vec::with_capacity(out_shape.len());
    for plane in input.data().chunks(s.plane()) {
        for y in top..top + height {
            data.extend_from_slice(&plane[y * s.w + left..y * s.w + left + width]);
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Reverses the W axis.
pub fn mirror_h<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let mut data = Vec::with_capacity(s.len());
    for row in input.data().chunks(s.w) {
        data.extend(row.iter().rev().copied());
    }
    Tensor::from_vec(s, data).expect("mirror keeps shape")
}

/// Source coordinate for output index `i` under corner-aligned sampling.
fn source_coord(i: usize, input: usize, output: usize) -> f64 {
    if output == 1 {
        (input - 1) as f64 / 2.0
    } else {
        (i * (input - 1)) as f64 / (output - 1) as f64
    }
}

/// Bilinear resize with corner-aligned sampling (endpoints map to endpoints).
pub fn resize_bilinear<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::geometry("resize_bilinear", "target dims must be >= 1"));
    }
    if out_h == s.h && out_w == s.w {
        return Ok(input.clone());
    }
    let taps = |input: usize, output: usize| -> Vec<(usize, usize, T)> {
        (0..output)
            .map(|i| {
                let src = source_coord(i, input, output);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(input - 1);
                (i0, i1, T::from_f64(src - i0 as f64))
            })
            .collect()
    };
    let ys = taps(s.h, out_h);
    let xs = taps(s.w, out_w);
    let out_shape = Shape {
        h: out_h,
        w: out_w,
        ..s
    };
    let mut data = Vec::with_capacity(out_shape.len());
    for plane in input.data().chunks(s.plane()) {
        for &(y0, y1, fy) in &ys {
            let r0 = &plane[y0 * s.w..(y0 + 1) * s.w];
            let r1 = &plane[y1 * s.w..(y1 + 1) * s.w];
            for &(x0, x1, fx) in &xs {
                let top = lerp(r0[x0], r0[x1], fx);
                let bottom = lerp(r1[x0], r1[x1], fx);
                data.push(lerp(top, bottom, fy));
            }
        }
    }
    Tensor::from_vec(out_shape, data)
}

#[inline]
fn lerp<T: Scalar>(a: T, b: T, f: T) -> T {
    if f == T::ZERO {
        a
    } else {
        a + (b - a) * f
    }
}
