//! Pure forward and backward kernels behind the tape ops.
//!
//! All kernels take plain slices plus shapes and run single-threaded with a
//! fixed iteration order, so results are bit-identical across runs. Forward
//! accumulation is 32-bit; whole-tensor reductions may accumulate in 64-bit.

use crate::error::{Error, Result};
use crate::tensor::data::{Shape, Tensor};

/// Output spatial size of a convolution along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::Shape(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Validates conv arguments and returns the output shape.
pub fn conv2d_check(
    input: Shape,
    weight: Shape,
    bias_len: usize,
    stride: usize,
    padding: usize,
) -> Result<Shape> {
    if stride < 1 {
        return Err(Error::Config(format!("conv stride must be >= 1, got {stride}")));
    }
    if weight.c != input.c {
        return Err(Error::Shape(format!(
            "conv weight expects {} input channels, input has {}",
            weight.c, input.c
        )));
    }
    if weight.h != weight.w {
        return Err(Error::Shape(format!(
            "conv kernels must be square, got {}x{}",
            weight.h, weight.w
        )));
    }
    if bias_len != weight.n {
        return Err(Error::Shape(format!(
            "conv bias has {} entries for {} output channels",
            bias_len, weight.n
        )));
    }
    let oh = conv_out_dim(input.h, weight.h, stride, padding)?;
    let ow = conv_out_dim(input.w, weight.w, stride, padding)?;
    Ok(Shape::new(input.n, weight.n, oh, ow))
}

/// Direct convolution. Accumulation starts from the bias and sums input
/// contributions in (ci, kh, kw) order; tests rely on this exact order.
pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &[f32],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let ishape = input.shape();
    let wshape = weight.shape();
    let oshape = conv2d_check(ishape, wshape, bias.len(), stride, padding)?;
    let k = wshape.h;
    let x = input.data();
    let w = weight.data();
    let mut out = vec![0.0f32; oshape.numel()];

    for n in 0..oshape.n {
        for co in 0..oshape.c {
            for oh in 0..oshape.h {
                let ih0 = (oh * stride) as isize - padding as isize;
                for ow in 0..oshape.w {
                    let iw0 = (ow * stride) as isize - padding as isize;
                    let mut acc = bias[co];
                    for ci in 0..ishape.c {
                        let in_base = (n * ishape.c + ci) * ishape.h;
                        let w_base = (co * wshape.c + ci) * k;
                        for kh in 0..k {
                            let ih = ih0 + kh as isize;
                            if ih < 0 || ih >= ishape.h as isize {
                                continue;
                            }
                            let in_row = (in_base + ih as usize) * ishape.w;
                            let w_row = (w_base + kh) * k;
                            if iw0 >= 0 && iw0 as usize + k <= ishape.w {
                                // interior: branch-free inner loop
                                let xs = &x[in_row + iw0 as usize..in_row + iw0 as usize + k];
                                let ws = &w[w_row..w_row + k];
                                for q in 0..k {
                                    acc += xs[q] * ws[q];
                                }
                            } else {
                                for kw in 0..k {
                                    let iw = iw0 + kw as isize;
                                    if iw < 0 || iw >= ishape.w as isize {
                                        continue;
                                    }
                                    acc += x[in_row + iw as usize] * w[w_row + kw];
                                }
                            }
                        }
                    }
                    out[oshape.index(n, co, oh, ow)] = acc;
                }
            }
        }
    }
    Tensor::from_vec(oshape, out)
}

/// Gradients of conv2d w.r.t. input, weight, and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let ishape = input.shape();
    let wshape = weight.shape();
    let oshape = grad_out.shape();
    let k = wshape.h;
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();

    let mut dx = vec![0.0f32; ishape.numel()];
    let mut dw = vec![0.0f32; wshape.numel()];
    let mut db = vec![0.0f32; wshape.n];

    for n in 0..oshape.n {
        for co in 0..oshape.c {
            for oh in 0..oshape.h {
                let ih0 = (oh * stride) as isize - padding as isize;
                for ow in 0..oshape.w {
                    let iw0 = (ow * stride) as isize - padding as isize;
                    let go = g[oshape.index(n, co, oh, ow)];
                    db[co] += go;
                    for ci in 0..ishape.c {
                        let in_base = (n * ishape.c + ci) * ishape.h;
                        let w_base = (co * wshape.c + ci) * k;
                        for kh in 0..k {
                            let ih = ih0 + kh as isize;
                            if ih < 0 || ih >= ishape.h as isize {
                                continue;
                            }
                            let in_row = (in_base + ih as usize) * ishape.w;
                            let w_row = (w_base + kh) * k;
                            for kw in 0..k {
                                let iw = iw0 + kw as isize;
                                if iw < 0 || iw >= ishape.w as isize {
                                    continue;
                                }
                                dx[in_row + iw as usize] += go * w[w_row + kw];
                                dw[w_row + kw] += go * x[in_row + iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Nearest-neighbor upsampling by an integer factor.
pub fn upsample_nearest_forward(input: &Tensor, factor: usize) -> Tensor {
    let s = input.shape();
    let oshape = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    let x = input.data();
    let mut out = vec![0.0f32; oshape.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for oh in 0..oshape.h {
                let ih = oh / factor;
                for ow in 0..oshape.w {
                    out[oshape.index(n, c, oh, ow)] = x[s.index(n, c, ih, ow / factor)];
                }
            }
        }
    }
    Tensor::from_vec(oshape, out).expect("replication preserves finiteness")
}

pub fn upsample_nearest_backward(input_shape: Shape, factor: usize, grad_out: &Tensor) -> Vec<f32> {
    let oshape = grad_out.shape();
    let g = grad_out.data();
    let mut dx = vec![0.0f32; input_shape.numel()];
    for n in 0..oshape.n {
        for c in 0..oshape.c {
            for oh in 0..oshape.h {
                let ih = oh / factor;
                for ow in 0..oshape.w {
                    dx[input_shape.index(n, c, ih, ow / factor)] += g[oshape.index(n, c, oh, ow)];
                }
            }
        }
    }
    dx
}

/// Per-axis source position and interpolation weights for bilinear resize
/// (half-pixel centers, edges clamped).
fn bilinear_taps(out_dim: usize, in_dim: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_dim as f32 / out_dim as f32;
    (0..out_dim)
        .map(|o| {
            let src = (o as f32 + 0.5) * scale - 0.5;
            let src = src.max(0.0);
            let i0 = (src.floor() as usize).min(in_dim - 1);
            let i1 = (i0 + 1).min(in_dim - 1);
            let w1 = src - i0 as f32;
            (i0, i1, w1.clamp(0.0, 1.0))
        })
        .collect()
}

/// Bilinear resize to an explicit output size.
pub fn upsample_bilinear_forward(input: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let s = input.shape();
    let oshape = Shape::new(s.n, s.c, out_h, out_w);
    let x = input.data();
    let taps_h = bilinear_taps(out_h, s.h);
    let taps_w = bilinear_taps(out_w, s.w);
    let mut out = vec![0.0f32; oshape.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.h;
            for (oh, &(y0, y1, wy)) in taps_h.iter().enumerate() {
                for (ow, &(x0, x1, wx)) in taps_w.iter().enumerate() {
                    let top = x[(base + y0) * s.w + x0] * (1.0 - wx) + x[(base + y0) * s.w + x1] * wx;
                    let bot = x[(base + y1) * s.w + x0] * (1.0 - wx) + x[(base + y1) * s.w + x1] * wx;
                    out[oshape.index(n, c, oh, ow)] = top * (1.0 - wy) + bot * wy;
                }
            }
        }
    }
    Tensor::from_vec(oshape, out).expect("interpolation of finite values is finite")
}

pub fn upsample_bilinear_backward(input_shape: Shape, grad_out: &Tensor) -> Vec<f32> {
    let s = input_shape;
    let oshape = grad_out.shape();
    let g = grad_out.data();
    let taps_h = bilinear_taps(oshape.h, s.h);
    let taps_w = bilinear_taps(oshape.w, s.w);
    let mut dx = vec![0.0f32; s.numel()];
    for n in 0..oshape.n {
        for c in 0..oshape.c {
            let base = (n * s.c + c) * s.h;
            for (oh, &(y0, y1, wy)) in taps_h.iter().enumerate() {
                for (ow, &(x0, x1, wx)) in taps_w.iter().enumerate() {
                    let go = g[oshape.index(n, c, oh, ow)];
                    dx[(base + y0) * s.w + x0] += go * (1.0 - wy) * (1.0 - wx);
                    dx[(base + y0) * s.w + x1] += go * (1.0 - wy) * wx;
                    dx[(base + y1) * s.w + x0] += go * wy * (1.0 - wx);
                    dx[(base + y1) * s.w + x1] += go * wy * wx;
                }
            }
        }
    }
    dx
}

/// 2x2 average pooling with stride 2; height and width must be even.
pub fn avg_pool2_forward(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::Shape(format!(
            "avg_pool2 requires even spatial dims, got {}x{}",
            s.h, s.w
        )));
    }
    let oshape = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let x = input.data();
    let mut out = vec![0.0f32; oshape.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for oh in 0..oshape.h {
                for ow in 0..oshape.w {
                    let sum = x[s.index(n, c, 2 * oh, 2 * ow)]
                        + x[s.index(n, c, 2 * oh, 2 * ow + 1)]
                        + x[s.index(n, c, 2 * oh + 1, 2 * ow)]
                        + x[s.index(n, c, 2 * oh + 1, 2 * ow + 1)];
                    out[oshape.index(n, c, oh, ow)] = sum * 0.25;
                }
            }
        }
    }
    Tensor::from_vec(oshape, out)
}

pub fn avg_pool2_backward(input_shape: Shape, grad_out: &Tensor) -> Vec<f32> {
    let s = input_shape;
    let oshape = grad_out.shape();
    let g = grad_out.data();
    let mut dx = vec![0.0f32; s.numel()];
    for n in 0..oshape.n {
        for c in 0..oshape.c {
            for oh in 0..oshape.h {
                for ow in 0..oshape.w {
                    let go = g[oshape.index(n, c, oh, ow)] * 0.25;
                    dx[s.index(n, c, 2 * oh, 2 * ow)] += go;
                    dx[s.index(n, c, 2 * oh, 2 * ow + 1)] += go;
                    dx[s.index(n, c, 2 * oh + 1, 2 * ow)] += go;
                    dx[s.index(n, c, 2 * oh + 1, 2 * ow + 1)] += go;
                }
            }
        }
    }
    dx
}

/// Batched matrix multiply over the trailing two dims of (N, 1, R, K) x (N, 1, K, C).
pub fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let sa = a.shape();
    let sb = b.shape();
    if sa.c != 1 || sb.c != 1 || sa.n != sb.n {
        return Err(Error::Shape(format!(
            "matmul expects (N,1,R,K)x(N,1,K,C), got {sa} x {sb}"
        )));
    }
    if sa.w != sb.h {
        return Err(Error::Shape(format!(
            "matmul inner dims differ: {} vs {}",
            sa.w, sb.h
        )));
    }
    let (r, k, c) = (sa.h, sa.w, sb.w);
    let oshape = Shape::new(sa.n, 1, r, c);
    let xa = a.data();
    let xb = b.data();
    let mut out = vec![0.0f32; oshape.numel()];
    for n in 0..sa.n {
        let abase = n * r * k;
        let bbase = n * k * c;
        let obase = n * r * c;
        for i in 0..r {
            for j in 0..c {
                let mut acc = 0.0f32;
                for p in 0..k {
                    acc += xa[abase + i * k + p] * xb[bbase + p * c + j];
                }
                out[obase + i * c + j] = acc;
            }
        }
    }
    Tensor::from_vec(oshape, out)
}

pub fn matmul_backward(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> (Vec<f32>, Vec<f32>) {
    let sa = a.shape();
    let sb = b.shape();
    let (r, k, c) = (sa.h, sa.w, sb.w);
    let xa = a.data();
    let xb = b.data();
    let g = grad_out.data();
    let mut da = vec![0.0f32; sa.numel()];
    let mut db = vec![0.0f32; sb.numel()];
    for n in 0..sa.n {
        let abase = n * r * k;
        let bbase = n * k * c;
        let obase = n * r * c;
        for i in 0..r {
            for p in 0..k {
                let mut acc = 0.0f32;
                for j in 0..c {
                    acc += g[obase + i * c + j] * xb[bbase + p * c + j];
                }
                da[abase + i * k + p] += acc;
            }
        }
        for p in 0..k {
            for j in 0..c {
                let mut acc = 0.0f32;
                for i in 0..r {
                    acc += xa[abase + i * k + p] * g[obase + i * c + j];
                }
                db[bbase + p * c + j] += acc;
            }
        }
    }
    (da, db)
}

/// Swaps the trailing two dims of every (n, c) slice.
pub fn transpose_hw_forward(input: &Tensor) -> Tensor {
    let s = input.shape();
    let oshape = Shape::new(s.n, s.c, s.w, s.h);
    let x = input.data();
    let mut out = vec![0.0f32; oshape.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for h in 0..s.h {
                for w in 0..s.w {
                    out[oshape.index(n, c, w, h)] = x[s.index(n, c, h, w)];
                }
            }
        }
    }
    Tensor::from_vec(oshape, out).expect("transpose preserves finiteness")
}

/// Softmax along `axis` (1 = channels, 3 = width). Other axes are unused here.
pub fn softmax_forward(input: &Tensor, axis: usize) -> Result<Tensor> {
    let s = input.shape();
    let (outer, len, inner) = softmax_split(s, axis)?;
    let x = input.data();
    let mut out = vec![0.0f32; s.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let mut max = f32::NEG_INFINITY;
            for a in 0..len {
                max = max.max(x[(o * len + a) * inner + i]);
            }
            let mut denom = 0.0f32;
            for a in 0..len {
                let e = (x[(o * len + a) * inner + i] - max).exp();
                out[(o * len + a) * inner + i] = e;
                denom += e;
            }
            for a in 0..len {
                out[(o * len + a) * inner + i] /= denom;
            }
        }
    }
    Tensor::from_vec(s, out)
}

pub fn softmax_backward(output: &Tensor, axis: usize, grad_out: &Tensor) -> Vec<f32> {
    let s = output.shape();
    let (outer, len, inner) = softmax_split(s, axis).expect("validated in forward");
    let y = output.data();
    let g = grad_out.data();
    let mut dx = vec![0.0f32; s.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let mut dot = 0.0f32;
            for a in 0..len {
                let idx = (o * len + a) * inner + i;
                dot += g[idx] * y[idx];
            }
            for a in 0..len {
                let idx = (o * len + a) * inner + i;
                dx[idx] = y[idx] * (g[idx] - dot);
            }
        }
    }
    dx
}

fn softmax_split(s: Shape, axis: usize) -> Result<(usize, usize, usize)> {
    match axis {
        1 => Ok((s.n, s.c, s.h * s.w)),
        3 => Ok((s.n * s.c * s.h, s.w, 1)),
        _ => Err(Error::Config(format!("softmax axis {axis} not supported"))),
    }
}

/// Mean squared error between same-shaped tensors; 64-bit accumulation.
pub fn mse_forward(a: &Tensor, b: &Tensor) -> Result<f32> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "mse operands differ: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let mut acc = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = (*x - *y) as f64;
        acc += d * d;
    }
    Ok((acc / a.numel() as f64) as f32)
}

/// Pixelwise cross-entropy over (N, K, H, W) logits with target class indices
/// laid out as N*H*W entries. `ignore` pixels are excluded from the mean.
pub fn cross_entropy_forward(
    logits: &Tensor,
    targets: &[u8],
    ignore: u8,
) -> Result<(f32, usize)> {
    let s = logits.shape();
    let classes = s.c;
    if classes > ignore as usize {
        return Err(Error::Config(format!(
            "class count {classes} collides with ignore label {ignore}"
        )));
    }
    if targets.len() != s.n * s.h * s.w {
        return Err(Error::Shape(format!(
            "target count {} does not match {}x{}x{} pixels",
            targets.len(),
            s.n,
            s.h,
            s.w
        )));
    }
    let x = logits.data();
    let plane = s.h * s.w;
    let mut acc = 0.0f64;
    let mut counted = 0usize;
    for n in 0..s.n {
        for p in 0..plane {
            let t = targets[n * plane + p];
            if t == ignore {
                continue;
            }
            if t as usize >= classes {
                return Err(Error::Validation(format!(
                    "target class {t} out of range for {classes} classes"
                )));
            }
            let base = n * classes * plane + p;
            let mut max = f32::NEG_INFINITY;
            for k in 0..classes {
                max = max.max(x[base + k * plane]);
            }
            let mut denom = 0.0f32;
            for k in 0..classes {
                denom += (x[base + k * plane] - max).exp();
            }
            let logit_t = x[base + t as usize * plane];
            acc -= (logit_t - max - denom.ln()) as f64;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::Validation(
            "cross entropy: every pixel is ignored".into(),
        ));
    }
    Ok(((acc / counted as f64) as f32, counted))
}

pub fn cross_entropy_backward(
    logits: &Tensor,
    targets: &[u8],
    ignore: u8,
    counted: usize,
    grad_scale: f32,
) -> Vec<f32> {
    let s = logits.shape();
    let classes = s.c;
    let plane = s.h * s.w;
    let x = logits.data();
    let mut dx = vec![0.0f32; s.numel()];
    let inv = grad_scale / counted as f32;
    for n in 0..s.n {
        for p in 0..plane {
            let t = targets[n * plane + p];
            if t == ignore {
                continue;
            }
            let base = n * classes * plane + p;
            let mut max = f32::NEG_INFINITY;
            for k in 0..classes {
                max = max.max(x[base + k * plane]);
            }
            let mut denom = 0.0f32;
            for k in 0..classes {
                denom += (x[base + k * plane] - max).exp();
            }
            for k in 0..classes {
                let soft = (x[base + k * plane] - max).exp() / denom;
                let onehot = if k == t as usize { 1.0 } else { 0.0 };
                dx[base + k * plane] += inv * (soft - onehot);
            }
        }
    }
    dx
}
