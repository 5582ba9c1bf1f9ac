use super::reduce::split_axis;
use crate::error::{Error, Result};
use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Corner-aligned linear taps `(i0, i1, frac)` for resizing `len_in -> len_out`.
/// The first and last output samples land exactly on the first and last inputs.
pub fn linear_taps(len_in: usize, len_out: usize) -> Vec<(usize, usize, f64)> {
    (0..len_out)
        .map(|o| {
            let src = if len_out > 1 { (o * (len_in - 1)) as f64 / (len_out - 1) as f64 } else { 0.0 };
            let i0 = (src.floor() as usize).min(len_in - 1);
            let i1 = (i0 + 1).min(len_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn resize_axis_tensor<T: Float>(x: &Tensor<T>, axis: usize, len_out: usize) -> Result<Tensor<T>> {
    let (outer, len_in, inner) = split_axis(x.shape(), axis);
    if len_in == 0 || len_out == 0 {
        return Err(Error::dim("trilinear_resize", format!("cannot resize axis of {len_in} to {len_out}")));
    }
    let taps = linear_taps(len_in, len_out);
    let xd = x.data();
    let mut out = vec![T::zero(); outer * len_out * inner];
    for o in 0..outer {
        for (a, &(i0, i1, f)) in taps.iter().enumerate() {
            let dst = &mut out[(o * len_out + a) * inner..(o * len_out + a + 1) * inner];
            let s0 = &xd[(o * len_in + i0) * inner..(o * len_in + i0 + 1) * inner];
            if f == 0.0 {
                dst.copy_from_slice(s0);
            } else {
                let s1 = &xd[(o * len_in + i1) * inner..(o * len_in + i1 + 1) * inner];
                let (w0, w1) = (T::from_f64_lossy(1.0 - f), T::from_f64_lossy(f));
                for ((d, &p), &q) in dst.iter_mut().zip(s0).zip(s1) {
                    *d = w0 * p + w1 * q;
                }
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len_out;
    Tensor::new(&shape, out)
}

fn resize_axis_adjoint<T: Float>(g: &Tensor<T>, axis: usize, len_in: usize) -> Result<Tensor<T>> {
    let (outer, len_out, inner) = split_axis(g.shape(), axis);
    let taps = linear_taps(len_in, len_out);
    let gd = g.data();
    let mut dx = vec![T::zero(); outer * len_in * inner];
    for o in 0..outer {
        for (a, &(i0, i1, f)) in taps.iter().enumerate() {
            let src = &gd[(o * len_out + a) * inner..(o * len_out + a + 1) * inner];
            let (w0, w1) = (T::from_f64_lossy(1.0 - f), T::from_f64_lossy(f));
            for (k, &v) in src.iter().enumerate() {
                dx[(o * len_in + i0) * inner + k] += w0 * v;
                if f != 0.0 {
                    dx[(o * len_in + i1) * inner + k] += w1 * v;
                }
            }
        }
    }
    let mut shape = g.shape().to_vec();
    shape[axis] = len_in;
    Tensor::new(&shape, dx)
}

/// Separable corner-aligned trilinear resize of `[T, C, H, W]` along T, H and W.
pub fn trilinear_resize_tensor<T: Float>(x: &Tensor<T>, t_out: usize, h_out: usize, w_out: usize) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(Error::dim("trilinear_resize", format!("expected [T, C, H, W], got {:?}", x.shape())));
    }
    let y = resize_axis_tensor(x, 0, t_out)?;
    let y = resize_axis_tensor(&y, 2, h_out)?;
    resize_axis_tensor(&y, 3, w_out)
}

impl<T: Float> Graph<T> {
    pub fn trilinear_resize(&self, x: &Var<T>, t_out: usize, h_out: usize, w_out: usize) -> Result<Var<T>> {
        let out = trilinear_resize_tensor(x.value(), t_out, h_out, w_out)?;
        let shape = x.shape().to_vec();
        self.apply("trilinear_resize", &[x], out, move |g, _| {
            let d = resize_axis_adjoint(g, 3, shape[3])?;
            let d = resize_axis_adjoint(&d, 2, shape[2])?;
            Ok(vec![Some(resize_axis_adjoint(&d, 0, shape[0])?)])
        })
    }
}

/// Mirror an index into `0..n` without repeating the edge sample.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= n as isize { period - m } else { m }) as usize
}

/// Catmull-Rom cubic (a = -0.5).
pub fn cubic_kernel(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t.powi(3) - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t.powi(3) - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Normalized antialiased cubic taps for shrinking `len_in` by `factor`:
/// the kernel is stretched by `factor` and centred on `(o + 0.5) factor - 0.5`.
pub fn cubic_down_taps(len_in: usize, factor: usize) -> Vec<Vec<(usize, f64)>> {
    let s = factor as f64;
    (0..len_in / factor)
        .map(|o| {
            let center = (o as f64 + 0.5) * s - 0.5;
            let lo = (center - 2.0 * s).ceil() as isize;
            let hi = (center + 2.0 * s).floor() as isize;
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .map(|j| (reflect_index(j, len_in), cubic_kernel((center - j as f64) / s)))
                .filter(|&(_, w)| w != 0.0)
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}

/// Bicubic downsample of the last two axes by an integer factor, reflect boundaries.
pub fn bicubic_downsample<T: Float>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let rank = x.rank();
    if rank < 2 {
        return Err(Error::dim("bicubic_downsample", format!("need at least 2 axes, got {:?}", x.shape())));
    }
    let (h, w) = (x.shape()[rank - 2], x.shape()[rank - 1]);
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::dim("bicubic_downsample", format!("{h}x{w} not divisible by {factor}")));
    }
    let (ho, wo) = (h / factor, w / factor);
    let (ty, tx) = (cubic_down_taps(h, factor), cubic_down_taps(w, factor));
    let planes = x.numel() / (h * w).max(1);
    let xd = x.data();
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut rows = vec![0.0f64; h * wo];
    for p in 0..planes {
        let img = &xd[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for (ox, taps) in tx.iter().enumerate() {
                rows[y * wo + ox] = taps.iter().map(|&(j, wt)| wt * img[y * w + j].as_f64()).sum();
            }
        }
        for taps in &ty {
            for ox in 0..wo {
                let v: f64 = taps.iter().map(|&(j, wt)| wt * rows[j * wo + ox]).sum();
                out.push(T::from_f64_lossy(v));
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[rank - 2] = ho;
    shape[rank - 1] = wo;
    Tensor::new(&shape, out)
}

/// Reflect-pad the last two axes at the bottom and right edges.
pub fn reflect_pad<T: Float>(x: &Tensor<T>, pad_bottom: usize, pad_right: usize) -> Result<Tensor<T>> {
    let rank = x.rank();
    if rank < 2 {
        return Err(Error::dim("reflect_pad", format!("need at least 2 axes, got {:?}", x.shape())));
    }
    if pad_bottom == 0 && pad_right == 0 {
        return Ok(x.clone());
    }
    let (h, w) = (x.shape()[rank - 2], x.shape()[rank - 1]);
    let (hp, wp) = (h + pad_bottom, w + pad_right);
    let planes = x.numel() / (h * w).max(1);
    let xd = x.data();
    let mut out = Vec::with_capacity(planes * hp * wp);
    for p in 0..planes {
        for y in 0..hp {
            let sy = reflect_index(y as isize, h);
            for xx in 0..wp {
                out.push(xd[p * h * w + sy * w + reflect_index(xx as isize, w)]);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[rank - 2] = hp;
    shape[rank - 1] = wp;
    Tensor::new(&shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn equal_sizes_copy_bits() {
        let mut rng = seeded_rng(20);
        let x = Tensor::<f32>::randn(&[3, 2, 5, 4], 1.0, &mut rng);
        assert!(trilinear_resize_tensor(&x, 3, 5, 4).unwrap().bit_eq(&x));
    }

    #[test]
    fn temporal_midpoint_is_mean() {
        let mut rng = seeded_rng(21);
        let x = Tensor::<f64>::randn(&[2, 1, 3, 3], 1.0, &mut rng);
        let y = trilinear_resize_tensor(&x, 3, 3, 3).unwrap();
        for k in 0..9 {
            assert_eq!(y.data()[9 + k], (x.data()[k] + x.data()[9 + k]) / 2.0);
        }
    }

    #[test]
    fn endpoints_are_reproduced() {
        let mut rng = seeded_rng(22);
        let x = Tensor::<f32>::randn(&[4, 3, 6, 5], 1.0, &mut rng);
        let y = trilinear_resize_tensor(&x, 7, 24, 20).unwrap();
        for c in 0..3 {
            assert_eq!(y.at(&[0, c, 0, 0]), x.at(&[0, c, 0, 0]));
            assert_eq!(y.at(&[6, c, 23, 19]), x.at(&[3, c, 5, 4]));
            assert_eq!(y.at(&[2, c, 23, 0]), x.at(&[1, c, 5, 0]));
        }
    }

    #[test]
    fn reflect_index_mirrors() {
        let got: Vec<usize> = (-3..8).map(|i| reflect_index(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }

    #[test]
    fn cubic_kernel_interpolates() {
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
        // integer-shifted copies sum to one
        for t in [0.0, 0.25, 0.5, 0.9] {
            let s: f64 = (-2..=2).map(|k| cubic_kernel(t - k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let x = Tensor::<f64>::full(&[3, 16, 12], 0.37);
        let y = bicubic_downsample(&x, 4).unwrap();
        assert_eq!(y.shape(), &[3, 4, 3]);
        assert!(y.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
        assert!(bicubic_downsample(&Tensor::<f64>::zeros(&[3, 10, 12]), 4).is_err());
    }

    #[test]
    fn reflect_pad_extends_by_mirroring() {
        let x = Tensor::<f64>::from_fn(&[1, 3, 3], |i| i as f64);
        let y = reflect_pad(&x, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 5, 4]);
        assert_eq!(y.at(&[0, 3, 0]), x.at(&[0, 1, 0]));
        assert_eq!(y.at(&[0, 4, 3]), x.at(&[0, 0, 1]));
    }
}
