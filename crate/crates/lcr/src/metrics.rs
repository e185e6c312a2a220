//! Image quality and segmentation quality metrics.

use crate::error::{Error, Result};
use crate::seg::SegMap;
use crate::tensor::Tensor;

/// Peak signal-to-noise ratio in dB; identical inputs return infinity.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "psnr operands differ: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let mut acc = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    let mse = acc / a.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let center = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - center;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Separable valid-mode Gaussian filter of an (h, w) plane.
fn gaussian_filter(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let win = gaussian_window();
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    // horizontal pass
    let mut tmp = vec![0.0f64; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, wk) in win.iter().enumerate() {
                acc += plane[y * w + x + k] * wk;
            }
            tmp[y * ow + x] = acc;
        }
    }
    // vertical pass
    let mut out = vec![0.0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, wk) in win.iter().enumerate() {
                acc += tmp[(y + k) * ow + x] * wk;
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let aa: Vec<f64> = a.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = b.iter().map(|x| x * x).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = gaussian_filter(a, h, w);
    let mu_b = gaussian_filter(b, h, w);
    let m_aa = gaussian_filter(&aa, h, w);
    let m_bb = gaussian_filter(&bb, h, w);
    let m_ab = gaussian_filter(&ab, h, w);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let va = m_aa[i] - mu_a[i] * mu_a[i];
        let vb = m_bb[i] - mu_b[i] * mu_b[i];
        let cov = m_ab[i] - mu_a[i] * mu_b[i];
        let num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
        let den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
        total += num / den;
    }
    total / mu_a.len() as f64
}

/// Mean structural similarity over an 11x11 Gaussian window (sigma 1.5,
/// K1 = 0.01, K2 = 0.03, dynamic range 1.0). Multi-channel inputs average
/// the per-channel scores. Inputs must be at least the window size.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    let s = a.shape();
    if s != b.shape() {
        return Err(Error::Shape(format!(
            "ssim operands differ: {} vs {}",
            s,
            b.shape()
        )));
    }
    if s.n != 1 || (s.c != 1 && s.c != 3) {
        return Err(Error::Shape(format!(
            "ssim expects (1,1,H,W) or (1,3,H,W), got {s}"
        )));
    }
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            s.h, s.w
        )));
    }
    let plane = s.h * s.w;
    let mut total = 0.0;
    for c in 0..s.c {
        let pa: Vec<f64> = a.data()[c * plane..(c + 1) * plane]
            .iter()
            .map(|v| *v as f64)
            .collect();
        let pb: Vec<f64> = b.data()[c * plane..(c + 1) * plane]
            .iter()
            .map(|v| *v as f64)
            .collect();
        total += ssim_plane(&pa, &pb, s.h, s.w);
    }
    Ok(total / s.c as f64)
}

/// Per-class and macro Dice scores.
#[derive(Debug, Clone, PartialEq)]
pub struct DiceScores {
    /// `None` for classes absent from both maps.
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes present in at least one map.
    pub macro_mean: f64,
}

/// Dice overlap per class: 2|A and B| / (|A| + |B|). Pixels labelled
/// `ignore` on either side are excluded; classes absent from both maps are
/// excluded from the macro mean.
pub fn dice(pred: &SegMap, gt: &SegMap) -> Result<DiceScores> {
    if pred.height != gt.height || pred.width != gt.width {
        return Err(Error::Shape(format!(
            "maps differ: {}x{} vs {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    if pred.classes != gt.classes {
        return Err(Error::Config(format!(
            "class counts differ: {} vs {}",
            pred.classes, gt.classes
        )));
    }
    let k = gt.classes as usize;
    let mut inter = vec![0u64; k];
    let mut pred_count = vec![0u64; k];
    let mut gt_count = vec![0u64; k];
    for (p, g) in pred.labels.iter().zip(&gt.labels) {
        if *g == gt.ignore_label || *p == pred.ignore_label {
            continue;
        }
        pred_count[*p as usize] += 1;
        gt_count[*g as usize] += 1;
        if p == g {
            inter[*p as usize] += 1;
        }
    }
    let mut per_class = Vec::with_capacity(k);
    let mut total = 0.0;
    let mut present = 0usize;
    for c in 0..k {
        let denom = pred_count[c] + gt_count[c];
        if denom == 0 {
            per_class.push(None);
        } else {
            let score = 2.0 * inter[c] as f64 / denom as f64;
            per_class.push(Some(score));
            total += score;
            present += 1;
        }
    }
    if present == 0 {
        return Err(Error::Validation("every pixel is ignored".into()));
    }
    Ok(DiceScores {
        per_class,
        macro_mean: total / present as f64,
    })
}
