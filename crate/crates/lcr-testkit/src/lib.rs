//! Reference implementations used as oracles by the test suites.
//!
//! Everything here is written independently of the production kernels:
//! 64-bit naive loops for the finite-difference checks, a same-order 32-bit
//! convolution for bit-exact comparison, a two-queue Huffman cost oracle,
//! and a direct per-window SSIM. Keep this crate free of production code
//! paths; its value is that it can disagree with them.

pub mod gradcheck;
pub mod refops;

use lcr::tensor::Tensor;

/// Dense 64-bit (N, C, H, W) tensor for reference computations.
#[derive(Debug, Clone)]
pub struct RefTensor {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl RefTensor {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        RefTensor { shape, data }
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        let n = shape.iter().product();
        RefTensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_f32(t: &Tensor) -> Self {
        let s = t.shape();
        RefTensor {
            shape: [s.n, s.c, s.h, s.w],
            data: t.data().iter().map(|v| *v as f64).collect(),
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.idx(n, c, h, w)]
    }
}

/// Central finite differences of `f` at `x` with step `h`, one component at
/// a time.
pub fn central_diff_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Central differences with a step-halving validity check: a component is
/// `None` when the h and h/2 estimates disagree, which happens exactly when
/// a kink (relu, clamp) sits inside the stencil and the finite difference
/// is not a valid derivative sample there.
pub fn central_diff_grad_checked(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    h: f64,
    floor: f64,
) -> Vec<Option<f64>> {
    let full = central_diff_grad(f, x, h);
    let half = central_diff_grad(f, x, h / 2.0);
    full.iter()
        .zip(&half)
        .map(|(a, b)| {
            let scale = a.abs().max(b.abs()).max(floor);
            if (a - b).abs() <= 2e-4 * scale {
                Some(*b)
            } else {
                None
            }
        })
        .collect()
}

/// Result of comparing analytic and finite-difference gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Components that exceeded the magnitude floor and were compared.
    pub checked: usize,
    pub total: usize,
}

/// Relative error over components whose magnitude exceeds `floor`;
/// components negligible on both sides are skipped.
pub fn compare_grads(analytic: &[f32], fd: &[f64], floor: f64) -> GradCheck {
    let opt: Vec<Option<f64>> = fd.iter().map(|v| Some(*v)).collect();
    compare_grads_checked(analytic, &opt, floor)
}

/// As [`compare_grads`], over FD samples that passed the validity check.
pub fn compare_grads_checked(analytic: &[f32], fd: &[Option<f64>], floor: f64) -> GradCheck {
    assert_eq!(analytic.len(), fd.len());
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (a, n) in analytic.iter().zip(fd) {
        let Some(n) = n else { continue };
        let a = *a as f64;
        let scale = a.abs().max(n.abs());
        if scale <= floor {
            continue;
        }
        checked += 1;
        let rel = (a - n).abs() / scale;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    GradCheck {
        max_rel_error: max_rel,
        checked,
        total: analytic.len(),
    }
}

/// 32-bit convolution with the exact accumulation order of the production
/// kernel (bias first, then contributions in (ci, kh, kw) order), written
/// as the plainest possible loop nest.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d_f32(
    input: &[f32],
    ishape: [usize; 4],
    weight: &[f32],
    wshape: [usize; 4],
    bias: &[f32],
    stride: usize,
    padding: usize,
) -> (Vec<f32>, [usize; 4]) {
    let [n_batch, cin, ih, iw] = ishape;
    let [cout, _, kh, kw] = wshape;
    let oh = (ih + 2 * padding - kh) / stride + 1;
    let ow = (iw + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0f32; n_batch * cout * oh * ow];
    for n in 0..n_batch {
        for co in 0..cout {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let sy = (y * stride + ky) as isize - padding as isize;
                                let sx = (x * stride + kx) as isize - padding as isize;
                                if sy < 0 || sy >= ih as isize || sx < 0 || sx >= iw as isize {
                                    continue;
                                }
                                let xi = ((n * cin + ci) * ih + sy as usize) * iw + sx as usize;
                                let wi = ((co * cin + ci) * kh + ky) * kw + kx;
                                acc += input[xi] * weight[wi];
                            }
                        }
                    }
                    out[((n * cout + co) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    (out, [n_batch, cout, oh, ow])
}

/// Total encoded bits of an optimal prefix code for the given frequency
/// table, via the classic two-queue merge. The per-merge sums are exactly
/// the total bit count. Requires at least two distinct symbols.
pub fn huffman_total_bits(freq: &[u64]) -> u64 {
    let mut leaves: Vec<u64> = freq.iter().copied().filter(|f| *f > 0).collect();
    assert!(leaves.len() >= 2, "oracle needs two or more symbols");
    leaves.sort_unstable();
    let mut merged: std::collections::VecDeque<u64> = std::collections::VecDeque::new();
    let mut leaf_pos = 0usize;
    let mut total = 0u64;
    let mut pending = leaves.len();
    while pending > 1 {
        let mut take_smallest = |leaf_pos: &mut usize, merged: &mut std::collections::VecDeque<u64>| -> u64 {
            let leaf = leaves.get(*leaf_pos).copied();
            let queued = merged.front().copied();
            match (leaf, queued) {
                (Some(l), Some(q)) if l <= q => {
                    *leaf_pos += 1;
                    l
                }
                (Some(_), Some(q)) => {
                    merged.pop_front();
                    q
                }
                (Some(l), None) => {
                    *leaf_pos += 1;
                    l
                }
                (None, Some(q)) => {
                    merged.pop_front();
                    q
                }
                (None, None) => unreachable!("pending > 1 guarantees an element"),
            }
        };
        let a = take_smallest(&mut leaf_pos, &mut merged);
        let b = take_smallest(&mut leaf_pos, &mut merged);
        total += a + b;
        merged.push_back(a + b);
        pending -= 1;
    }
    total
}

/// Direct per-window SSIM with an 11x11 Gaussian (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1. No separable shortcut: every window is
/// evaluated straight from the definition.
pub fn naive_ssim(a: &[f64], b: &[f64], height: usize, width: usize) -> f64 {
    const WIN: usize = 11;
    let mut kernel = [[0.0f64; WIN]; WIN];
    let mut sum = 0.0;
    for (y, row) in kernel.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let dy = y as f64 - 5.0;
            let dx = x as f64 - 5.0;
            *v = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
            sum += *v;
        }
    }
    for row in kernel.iter_mut() {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=(height - WIN) {
        for x0 in 0..=(width - WIN) {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            for ky in 0..WIN {
                for kx in 0..WIN {
                    let idx = (y0 + ky) * width + x0 + kx;
                    mu_a += kernel[ky][kx] * a[idx];
                    mu_b += kernel[ky][kx] * b[idx];
                }
            }
            let mut var_a = 0.0;
            let mut var_b = 0.0;
            let mut cov = 0.0;
            for ky in 0..WIN {
                for kx in 0..WIN {
                    let idx = (y0 + ky) * width + x0 + kx;
                    var_a += kernel[ky][kx] * (a[idx] - mu_a) * (a[idx] - mu_a);
                    var_b += kernel[ky][kx] * (b[idx] - mu_b) * (b[idx] - mu_b);
                    cov += kernel[ky][kx] * (a[idx] - mu_a) * (b[idx] - mu_b);
                }
            }
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            count += 1;
        }
    }
    total / count as f64
}
