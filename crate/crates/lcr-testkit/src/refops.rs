//! Naive 64-bit reference versions of every differentiable op.
//!
//! These mirror the op semantics (shapes, padding, tap positions) but share
//! no code with the production kernels; finite differences run against
//! these so float32 forward noise never contaminates the checks.

use crate::RefTensor;

pub fn conv2d(x: &RefTensor, w: &RefTensor, bias: &[f64], stride: usize, padding: usize) -> RefTensor {
    let [n_batch, cin, ih, iw] = x.shape;
    let [cout, _, k, _] = w.shape;
    let oh = (ih + 2 * padding - k) / stride + 1;
    let ow = (iw + 2 * padding - k) / stride + 1;
    let mut out = RefTensor::zeros([n_batch, cout, oh, ow]);
    for n in 0..n_batch {
        for co in 0..cout {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = (y * stride + ky) as isize - padding as isize;
                                let sx = (xo * stride + kx) as isize - padding as isize;
                                if sy < 0 || sy >= ih as isize || sx < 0 || sx >= iw as isize {
                                    continue;
                                }
                                acc += x.at(n, ci, sy as usize, sx as usize)
                                    * w.at(co, ci, ky, kx);
                            }
                        }
                    }
                    let idx = out.idx(n, co, y, xo);
                    out.data[idx] = acc;
                }
            }
        }
    }
    out
}

pub fn relu(x: &RefTensor) -> RefTensor {
    RefTensor::new(x.shape, x.data.iter().map(|v| v.max(0.0)).collect())
}

pub fn clamp01(x: &RefTensor) -> RefTensor {
    RefTensor::new(x.shape, x.data.iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

pub fn add(a: &RefTensor, b: &RefTensor) -> RefTensor {
    assert_eq!(a.shape, b.shape);
    RefTensor::new(
        a.shape,
        a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
    )
}

pub fn sub(a: &RefTensor, b: &RefTensor) -> RefTensor {
    assert_eq!(a.shape, b.shape);
    RefTensor::new(
        a.shape,
        a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect(),
    )
}

pub fn avg_pool2(x: &RefTensor) -> RefTensor {
    let [n_batch, c, h, w] = x.shape;
    let mut out = RefTensor::zeros([n_batch, c, h / 2, w / 2]);
    for n in 0..n_batch {
        for ci in 0..c {
            for y in 0..h / 2 {
                for xo in 0..w / 2 {
                    let s = x.at(n, ci, 2 * y, 2 * xo)
                        + x.at(n, ci, 2 * y, 2 * xo + 1)
                        + x.at(n, ci, 2 * y + 1, 2 * xo)
                        + x.at(n, ci, 2 * y + 1, 2 * xo + 1);
                    let idx = out.idx(n, ci, y, xo);
                    out.data[idx] = s * 0.25;
                }
            }
        }
    }
    out
}

pub fn upsample_nearest(x: &RefTensor, factor: usize) -> RefTensor {
    let [n_batch, c, h, w] = x.shape;
    let mut out = RefTensor::zeros([n_batch, c, h * factor, w * factor]);
    for n in 0..n_batch {
        for ci in 0..c {
            for y in 0..h * factor {
                for xo in 0..w * factor {
                    let idx = out.idx(n, ci, y, xo);
                    out.data[idx] = x.at(n, ci, y / factor, xo / factor);
                }
            }
        }
    }
    out
}

fn taps(out_dim: usize, in_dim: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_dim as f64 / out_dim as f64;
    (0..out_dim)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_dim - 1);
            let i1 = (i0 + 1).min(in_dim - 1);
            (i0, i1, (src - i0 as f64).clamp(0.0, 1.0))
        })
        .collect()
}

pub fn upsample_bilinear(x: &RefTensor, out_h: usize, out_w: usize) -> RefTensor {
    let [n_batch, c, h, w] = x.shape;
    let th = taps(out_h, h);
    let tw = taps(out_w, w);
    let mut out = RefTensor::zeros([n_batch, c, out_h, out_w]);
    for n in 0..n_batch {
        for ci in 0..c {
            for (y, &(y0, y1, wy)) in th.iter().enumerate() {
                for (xo, &(x0, x1, wx)) in tw.iter().enumerate() {
                    let top = x.at(n, ci, y0, x0) * (1.0 - wx) + x.at(n, ci, y0, x1) * wx;
                    let bot = x.at(n, ci, y1, x0) * (1.0 - wx) + x.at(n, ci, y1, x1) * wx;
                    let idx = out.idx(n, ci, y, xo);
                    out.data[idx] = top * (1.0 - wy) + bot * wy;
                }
            }
        }
    }
    out
}

/// (N, 1, R, K) x (N, 1, K, C).
pub fn matmul(a: &RefTensor, b: &RefTensor) -> RefTensor {
    let [n_batch, _, r, k] = a.shape;
    let c = b.shape[3];
    assert_eq!(b.shape[2], k);
    let mut out = RefTensor::zeros([n_batch, 1, r, c]);
    for n in 0..n_batch {
        for i in 0..r {
            for j in 0..c {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a.data[(n * r + i) * k + p] * b.data[(n * k + p) * c + j];
                }
                out.data[(n * r + i) * c + j] = acc;
            }
        }
    }
    out
}

pub fn transpose_hw(x: &RefTensor) -> RefTensor {
    let [n_batch, c, h, w] = x.shape;
    let mut out = RefTensor::zeros([n_batch, c, w, h]);
    for n in 0..n_batch {
        for ci in 0..c {
            for y in 0..h {
                for xo in 0..w {
                    let idx = out.idx(n, ci, xo, y);
                    out.data[idx] = x.at(n, ci, y, xo);
                }
            }
        }
    }
    out
}

pub fn reshape(x: &RefTensor, shape: [usize; 4]) -> RefTensor {
    assert_eq!(shape.iter().product::<usize>(), x.numel());
    RefTensor::new(shape, x.data.clone())
}

/// Softmax along axis 1 (channels) or 3 (width).
pub fn softmax(x: &RefTensor, axis: usize) -> RefTensor {
    let [n_batch, c, h, w] = x.shape;
    let (outer, len, inner) = match axis {
        1 => (n_batch, c, h * w),
        3 => (n_batch * c * h, w, 1),
        _ => panic!("unsupported softmax axis {axis}"),
    };
    let mut out = RefTensor::zeros(x.shape);
    for o in 0..outer {
        for i in 0..inner {
            let mut max = f64::NEG_INFINITY;
            for a in 0..len {
                max = max.max(x.data[(o * len + a) * inner + i]);
            }
            let mut denom = 0.0;
            for a in 0..len {
                let e = (x.data[(o * len + a) * inner + i] - max).exp();
                out.data[(o * len + a) * inner + i] = e;
                denom += e;
            }
            for a in 0..len {
                out.data[(o * len + a) * inner + i] /= denom;
            }
        }
    }
    out
}

pub fn mse(a: &RefTensor, b: &RefTensor) -> f64 {
    assert_eq!(a.shape, b.shape);
    let total: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    total / a.numel() as f64
}

pub fn cross_entropy(logits: &RefTensor, targets: &[u8], ignore: u8) -> f64 {
    let [n_batch, classes, h, w] = logits.shape;
    let plane = h * w;
    let mut total = 0.0;
    let mut counted = 0usize;
    for n in 0..n_batch {
        for p in 0..plane {
            let t = targets[n * plane + p];
            if t == ignore {
                continue;
            }
            let base = n * classes * plane + p;
            let mut max = f64::NEG_INFINITY;
            for k in 0..classes {
                max = max.max(logits.data[base + k * plane]);
            }
            let mut denom = 0.0;
            for k in 0..classes {
                denom += (logits.data[base + k * plane] - max).exp();
            }
            total -= logits.data[base + t as usize * plane] - max - denom.ln();
            counted += 1;
        }
    }
    total / counted as f64
}

pub fn sum(x: &RefTensor) -> f64 {
    x.data.iter().sum()
}
