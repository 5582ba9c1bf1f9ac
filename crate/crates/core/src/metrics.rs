//! Luma PSNR and SSIM on frames in `[0, 1]`.

use rstt_tensor::{Float, Tensor};

use crate::error::{dim_err, Result};

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// BT.601 luma of a `[3, H, W]` frame clamped to `[0, 1]`, as `[H, W]`.
/// Written as `G + 0.299 (R - G) + 0.114 (B - G)` so grey pixels are exact.
pub fn rgb_to_y<T: Float>(frame: &Tensor<T>) -> Result<Tensor<f64>> {
    let (h, w) = match *frame.shape() {
        [3, h, w] => (h, w),
        ref s => return Err(dim_err("rgb_to_y", format!("expected [3, H, W], got {s:?}"))),
    };
    let plane = h * w;
    let d = frame.data();
    let c = |v: T| v.as_f64().clamp(0.0, 1.0);
    let y = (0..plane)
        .map(|i| {
            let (r, g, b) = (c(d[i]), c(d[plane + i]), c(d[2 * plane + i]));
            g + 0.299 * (r - g) + 0.114 * (b - g)
        })
        .collect();
    Ok(Tensor::new(&[h, w], y)?)
}

fn same_shape<A: Float, B: Float>(op: &'static str, a: &Tensor<A>, b: &Tensor<B>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `10 log10(1 / MSE)` over luma, capped at 99 dB.
pub fn psnr_y<T: Float>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    same_shape("psnr_y", pred, gt)?;
    let (a, b) = (rgb_to_y(pred)?, rgb_to_y(gt)?);
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.numel() as f64;
    Ok(if mse == 0.0 { PSNR_CAP } else { (10.0 * (1.0 / mse).log10()).min(PSNR_CAP) })
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size / 2) as f64;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// Separable valid-region Gaussian filter of an `h x w` plane.
fn filter(x: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = taps.iter().enumerate().map(|(j, t)| t * x[y * w + ox + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = taps.iter().enumerate().map(|(i, t)| t * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

/// Mean SSIM over luma, 11 x 11 Gaussian window, no padding.
pub fn ssim_y<T: Float>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    same_shape("ssim_y", pred, gt)?;
    let (a, b) = (rgb_to_y(pred)?, rgb_to_y(gt)?);
    let (h, w) = (a.shape()[0], a.shape()[1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(dim_err("ssim_y", format!("{h}x{w} frame is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (x, y) = (a.data(), b.data());
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
    let mx = filter(x, h, w, &taps);
    let my = filter(y, h, w, &taps);
    let sxx = filter(&prod(x, x), h, w, &taps);
    let syy = filter(&prod(y, y), h, w, &taps);
    let sxy = filter(&prod(x, y), h, w, &taps);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mx[i], my[i]);
            let va = sxx[i] - ma * ma;
            let vb = syy[i] - mb * mb;
            let cov = sxy[i] - ma * mb;
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
        })
        .sum();
    Ok((total / n as f64).clamp(-1.0, 1.0))
}

fn per_frame<T: Float>(pred: &Tensor<T>, gt: &Tensor<T>, f: fn(&Tensor<T>, &Tensor<T>) -> Result<f64>) -> Result<f64> {
    same_shape("clip metric", pred, gt)?;
    let (n, plane) = match *pred.shape() {
        [n, 3, h, w] if n > 0 => (n, 3 * h * w),
        ref s => return Err(dim_err("clip metric", format!("expected [F, 3, H, W], got {s:?}"))),
    };
    let frame = |t: &Tensor<T>, i: usize| Tensor::new(&pred.shape()[1..], t.data()[i * plane..(i + 1) * plane].to_vec());
    let mut total = 0.0;
    for i in 0..n {
        total += f(&frame(pred, i)?, &frame(gt, i)?)?;
    }
    Ok(total / n as f64)
}

/// Mean per-frame PSNR-Y of `[F, 3, H, W]` clips.
pub fn clip_psnr_y<T: Float>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    per_frame(pred, gt, psnr_y)
}

/// Mean per-frame SSIM-Y of `[F, 3, H, W]` clips.
pub fn clip_ssim_y<T: Float>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    per_frame(pred, gt, ssim_y)
}
