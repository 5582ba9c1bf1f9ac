//! Convolutions on `[batch, channels, height, width]` tensors.
//!
//! Both directions go through im2col/col2im and a GEMM. The forward conv
//! processes output rows in chunks so the column buffer stays bounded even
//! for full-resolution frames.

use crate::error::{Error, Result};
use crate::float::{gemm, gemm_strided, Float, MatRef};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Upper bound on im2col buffer elements per chunk.
const COLS_BUDGET: usize = 1 << 21;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows_per_chunk(&self) -> usize {
        (COLS_BUDGET / (self.channels * self.k * self.k * self.wo).max(1)).clamp(1, self.ho.max(1))
    }

    fn source(&self, out: usize, tap: usize, limit: usize) -> Option<usize> {
        let i = (out * self.stride + tap) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < limit).then_some(i as usize)
    }
}

/// Columns for output rows `y0..y1`: `[channels * k * k, (y1 - y0) * wo]`.
fn im2col<T: Float>(img: &[T], g: &Geometry, y0: usize, y1: usize, cols: &mut [T]) {
    let n = (y1 - y0) * g.wo;
    for c in 0..g.channels {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut cols[((c * g.k + ky) * g.k + kx) * n..][..n];
                for oy in y0..y1 {
                    let dst = &mut row[(oy - y0) * g.wo..(oy - y0 + 1) * g.wo];
                    match g.source(oy, ky, g.h) {
                        None => dst.fill(T::zero()),
                        Some(iy) => {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = g.source(ox, kx, g.w).map_or(T::zero(), |ix| plane[iy * g.w + ix]);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the image.
fn col2im<T: Float>(cols: &[T], g: &Geometry, y0: usize, y1: usize, img: &mut [T]) {
    let n = (y1 - y0) * g.wo;
    for c in 0..g.channels {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &cols[((c * g.k + ky) * g.k + kx) * n..][..n];
                for oy in y0..y1 {
                    let Some(iy) = g.source(oy, ky, g.h) else { continue };
                    for ox in 0..g.wo {
                        if let Some(ix) = g.source(ox, kx, g.w) {
                            plane[iy * g.w + ix] += row[(oy - y0) * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Float>(op: &'static str, b: Option<&Tensor<T>>, cout: usize) -> Result<()> {
    match b {
        Some(b) if b.shape() != [cout] => Err(Error::dim(op, format!("bias shape {:?}, expected [{cout}]", b.shape()))),
        _ => Ok(()),
    }
}

fn add_bias<T: Float>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Float>(g: &Tensor<T>) -> Tensor<T> {
    let s = g.shape();
    let (cout, plane) = (s[1], s[2] * s[3]);
    let mut db = vec![T::zero(); cout];
    for (i, chunk) in g.data().chunks(plane).enumerate() {
        db[i % cout] += chunk.iter().fold(T::zero(), |a, &v| a + v);
    }
    Tensor::new(&[cout], db).expect("shape")
}

fn conv_geometry<T: Float>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<(usize, usize, Geometry)> {
    let op = "conv2d";
    let ([b, cin, h, wd], [cout, wcin, k, k2]) = (x.shape(), w.shape()) else {
        return Err(Error::dim(op, format!("expected 4-d input and weight, got {:?} and {:?}", x.shape(), w.shape())));
    };
    if cin != wcin || k != k2 {
        return Err(Error::mismatch(op, x.shape(), w.shape()));
    }
    if stride == 0 || h + 2 * pad < *k || wd + 2 * pad < *k {
        return Err(Error::dim(op, format!("kernel {k} stride {stride} pad {pad} does not fit {h}x{wd}")));
    }
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    Ok((*b, *cout, Geometry { channels: *cin, h: *h, w: *wd, k: *k, stride, pad, ho, wo }))
}

/// Cross-correlation with zero padding; output side `(in + 2 pad - k) / stride + 1`.
pub fn conv2d_tensor<T: Float>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let (batch, cout, g) = conv_geometry(x, w, stride, pad)?;
    check_bias("conv2d", b, cout)?;
    let kk = g.channels * g.k * g.k;
    let (in_plane, out_plane) = (g.channels * g.h * g.w, g.ho * g.wo);
    let mut out = vec![T::zero(); batch * cout * out_plane];
    let rows = g.rows_per_chunk();
    let mut cols = vec![T::zero(); kk * rows * g.wo];
    for n in 0..batch {
        let img = &x.data()[n * in_plane..(n + 1) * in_plane];
        for y0 in (0..g.ho).step_by(rows) {
            let y1 = (y0 + rows).min(g.ho);
            let cn = (y1 - y0) * g.wo;
            im2col(img, &g, y0, y1, &mut cols[..kk * cn]);
            gemm_strided(
                T::one(),
                MatRef::row_major(w.data(), 0, cout, kk),
                MatRef::row_major(&cols, 0, kk, cn),
                T::zero(),
                &mut out,
                n * cout * out_plane + y0 * g.wo,
                out_plane,
            );
        }
    }
    if let Some(b) = b {
        add_bias(&mut out, b.data(), out_plane);
    }
    Tensor::new(&[batch, cout, g.ho, g.wo], out)
}

fn conv2d_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad: &Tensor<T>,
    stride: usize,
    pad: usize,
    needs: &[bool],
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let (batch, cout, g) = conv_geometry(x, w, stride, pad)?;
    let kk = g.channels * g.k * g.k;
    let (in_plane, out_plane) = (g.channels * g.h * g.w, g.ho * g.wo);
    let mut dx = if needs[0] { vec![T::zero(); x.numel()] } else { Vec::new() };
    let mut dw = if needs[1] { vec![T::zero(); w.numel()] } else { Vec::new() };
    let rows = g.rows_per_chunk();
    let mut cols = vec![T::zero(); kk * rows * g.wo];
    let gd = grad.data();
    for n in 0..batch {
        let img = &x.data()[n * in_plane..(n + 1) * in_plane];
        for y0 in (0..g.ho).step_by(rows) {
            let y1 = (y0 + rows).min(g.ho);
            let cn = (y1 - y0) * g.wo;
            let gm = MatRef { data: gd, offset: n * cout * out_plane + y0 * g.wo, rows: cout, cols: cn, rs: out_plane, cs: 1 };
            if needs[1] {
                im2col(img, &g, y0, y1, &mut cols[..kk * cn]);
                gemm(T::one(), gm, MatRef::row_major(&cols, 0, kk, cn).t(), T::one(), &mut dw, 0);
            }
            if needs[0] {
                gemm(T::one(), MatRef::row_major(w.data(), 0, cout, kk).t(), gm, T::zero(), &mut cols[..kk * cn], 0);
                col2im(&cols[..kk * cn], &g, y0, y1, &mut dx[n * in_plane..(n + 1) * in_plane]);
            }
        }
    }
    Ok((
        needs[0].then(|| Tensor::new(x.shape(), dx).expect("shape")),
        needs[1].then(|| Tensor::new(w.shape(), dw).expect("shape")),
    ))
}

fn transpose_geometry<T: Float>(x: &Tensor<T>, w: &Tensor<T>, stride: usize) -> Result<(usize, usize, usize, Geometry)> {
    let op = "conv_transpose2d";
    let ([b, cin, h, wd], [wcin, cout, k, k2]) = (x.shape(), w.shape()) else {
        return Err(Error::dim(op, format!("expected 4-d input and weight, got {:?} and {:?}", x.shape(), w.shape())));
    };
    if cin != wcin || k != k2 || stride == 0 {
        return Err(Error::mismatch(op, x.shape(), w.shape()));
    }
    let (ho, wo) = ((h - 1) * stride + k, (wd - 1) * stride + k);
    // Seen from the output image, the input grid is the "conv output" grid.
    let g = Geometry { channels: *cout, h: ho, w: wo, k: *k, stride, pad: 0, ho: *h, wo: *wd };
    Ok((*b, *cin, *cout, g))
}

/// Transposed convolution (adjoint of a strided conv), weight `[cin, cout, k, k]`,
/// output side `(in - 1) * stride + k`.
pub fn conv_transpose2d_tensor<T: Float>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, stride: usize) -> Result<Tensor<T>> {
    let (batch, cin, cout, g) = transpose_geometry(x, w, stride)?;
    check_bias("conv_transpose2d", b, cout)?;
    let ckk = cout * g.k * g.k;
    let (grid, out_plane) = (g.ho * g.wo, g.h * g.w);
    let mut out = vec![T::zero(); batch * cout * out_plane];
    let mut cols = vec![T::zero(); ckk * grid];
    for n in 0..batch {
        let xm = MatRef::row_major(x.data(), n * cin * grid, cin, grid);
        gemm(T::one(), MatRef::row_major(w.data(), 0, cin, ckk).t(), xm, T::zero(), &mut cols, 0);
        col2im(&cols, &g, 0, g.ho, &mut out[n * cout * out_plane..(n + 1) * cout * out_plane]);
    }
    if let Some(b) = b {
        add_bias(&mut out, b.data(), out_plane);
    }
    Tensor::new(&[batch, cout, g.h, g.w], out)
}

fn conv_transpose2d_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad: &Tensor<T>,
    stride: usize,
    needs: &[bool],
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let (batch, cin, cout, g) = transpose_geometry(x, w, stride)?;
    let ckk = cout * g.k * g.k;
    let (grid, out_plane) = (g.ho * g.wo, g.h * g.w);
    let mut dx = if needs[0] { vec![T::zero(); x.numel()] } else { Vec::new() };
    let mut dw = if needs[1] { vec![T::zero(); w.numel()] } else { Vec::new() };
    let mut cols = vec![T::zero(); ckk * grid];
    for n in 0..batch {
        im2col(&grad.data()[n * cout * out_plane..(n + 1) * cout * out_plane], &g, 0, g.ho, &mut cols);
        let cm = MatRef::row_major(&cols, 0, ckk, grid);
        if needs[0] {
            gemm(T::one(), MatRef::row_major(w.data(), 0, cin, ckk), cm, T::zero(), &mut dx, n * cin * grid);
        }
        if needs[1] {
            let xm = MatRef::row_major(x.data(), n * cin * grid, cin, grid);
            gemm(T::one(), xm, cm.t(), T::one(), &mut dw, 0);
        }
    }
    Ok((
        needs[0].then(|| Tensor::new(x.shape(), dx).expect("shape")),
        needs[1].then(|| Tensor::new(w.shape(), dw).expect("shape")),
    ))
}

/// Inverse of pixel shuffle: `[B, C, rH, rW] -> [B, C r², H, W]`, written as
/// explicit index arithmetic.
pub fn pixel_unshuffle_tensor<T: Float>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let &[b, c, hr, wr] = x.shape() else {
        return Err(Error::dim("pixel_unshuffle", format!("expected 4-d input, got {:?}", x.shape())));
    };
    if r == 0 || hr % r != 0 || wr % r != 0 {
        return Err(Error::dim("pixel_unshuffle", format!("{hr}x{wr} not divisible by {r}")));
    }
    let (h, w) = (hr / r, wr / r);
    let xd = x.data();
    let mut out = vec![T::zero(); x.numel()];
    for n in 0..b {
        for ch in 0..c {
            for y in 0..hr {
                for xx in 0..wr {
                    let oc = ch * r * r + (y % r) * r + xx % r;
                    out[((n * c * r * r + oc) * h + y / r) * w + xx / r] = xd[((n * c + ch) * hr + y) * wr + xx];
                }
            }
        }
    }
    Tensor::new(&[b, c * r * r, h, w], out)
}

impl<T: Float> Graph<T> {
    pub fn conv2d(&self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>, stride: usize, pad: usize) -> Result<Var<T>> {
        let out = conv2d_tensor(x.value(), w.value(), b.map(|b| b.value()), stride, pad)?;
        let (xv, wv) = (x.value().clone(), w.value().clone());
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.apply("conv2d", &inputs, out, move |g, needs| {
            let (dx, dw) = conv2d_backward(&xv, &wv, g, stride, pad, needs)?;
            let mut grads = vec![dx, dw];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| bias_grad(g)));
            }
            Ok(grads)
        })
    }

    pub fn conv_transpose2d(&self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>, stride: usize) -> Result<Var<T>> {
        let out = conv_transpose2d_tensor(x.value(), w.value(), b.map(|b| b.value()), stride)?;
        let (xv, wv) = (x.value().clone(), w.value().clone());
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.apply("conv_transpose2d", &inputs, out, move |g, needs| {
            let (dx, dw) = conv_transpose2d_backward(&xv, &wv, g, stride, needs)?;
            let mut grads = vec![dx, dw];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| bias_grad(g)));
            }
            Ok(grads)
        })
    }

    /// `[B, C r², H, W] -> [B, C, rH, rW]` with
    /// `out[b, c, h r + i, w r + j] = x[b, c r² + i r + j, h, w]`.
    pub fn pixel_shuffle(&self, x: &Var<T>, r: usize) -> Result<Var<T>> {
        let &[b, cr2, h, w] = x.shape() else {
            return Err(Error::dim("pixel_shuffle", format!("expected 4-d input, got {:?}", x.shape())));
        };
        if r == 0 || cr2 % (r * r) != 0 {
            return Err(Error::dim("pixel_shuffle", format!("{cr2} channels not divisible by {}", r * r)));
        }
        let c = cr2 / (r * r);
        let y = self.reshape(x, &[b, c, r, r, h, w])?;
        let y = self.permute(&y, &[0, 1, 4, 2, 5, 3])?;
        self.reshape(&y, &[b, c, h * r, w * r])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn direct_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, s: usize, p: usize) -> Tensor<f64> {
        let (&[n, cin, h, wd], &[cout, _, k, _]) = (x.shape(), w.shape()) else { unreachable!() };
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (wd + 2 * p - k) / s + 1;
        let mut out = vec![0.0; n * cout * ho * wo];
        for bi in 0..n {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data()[co];
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.at(&[bi, ci, iy as usize, ix as usize]) * w.at(&[co, ci, ky, kx]);
                                    }
                                }
                            }
                        }
                        out[((bi * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(&[n, cout, ho, wo], out).unwrap()
    }

    #[test]
    fn unit_one_by_one_kernel_is_identity() {
        let mut rng = seeded_rng(10);
        let x = Tensor::<f64>::randn(&[1, 1, 5, 4], 1.0, &mut rng);
        let out = conv2d_tensor(&x, &Tensor::ones(&[1, 1, 1, 1]), None, 1, 0).unwrap();
        assert!(out.bit_eq(&x));
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut rng = seeded_rng(11);
        let x = Tensor::<f64>::randn(&[2, 3, 6, 6], 1.0, &mut rng);
        let b = Tensor::from_f64(&[2], &[0.5, -1.5]).unwrap();
        let out = conv2d_tensor(&x, &Tensor::zeros(&[2, 3, 3, 3]), Some(&b), 1, 1).unwrap();
        for (i, chunk) in out.data().chunks(36).enumerate() {
            assert!(chunk.iter().all(|&v| v == b.data()[i % 2]));
        }
    }

    #[test]
    fn strided_conv_matches_nested_loops() {
        let mut rng = seeded_rng(12);
        for (h, w) in [(7, 6), (8, 8), (5, 9)] {
            let x = Tensor::<f64>::randn(&[2, 3, h, w], 1.0, &mut rng);
            let wt = Tensor::randn(&[4, 3, 3, 3], 1.0, &mut rng);
            let b = Tensor::randn(&[4], 1.0, &mut rng);
            let fast = conv2d_tensor(&x, &wt, Some(&b), 2, 1).unwrap();
            let slow = direct_conv(&x, &wt, &b, 2, 1);
            assert_eq!(fast.shape(), slow.shape());
            assert!(fast.max_abs_diff(&slow) < 1e-6);
        }
    }

    #[test]
    fn channel_mismatch_is_a_dimension_error() {
        let x = Tensor::<f32>::zeros(&[1, 3, 4, 4]);
        assert!(conv2d_tensor(&x, &Tensor::zeros(&[2, 2, 3, 3]), None, 1, 1).is_err());
    }

    #[test]
    fn transpose_with_ones_kernel_tiles_pixels() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = conv_transpose2d_tensor(&x, &Tensor::ones(&[1, 1, 2, 2]), None, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 4, 4]);
        let expect = [1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.];
        assert_eq!(out.data(), &expect);
    }

    #[test]
    fn transpose_of_zero_input_is_bias() {
        let b = Tensor::<f64>::from_f64(&[3], &[0.1, 0.2, 0.3]).unwrap();
        let out = conv_transpose2d_tensor(&Tensor::zeros(&[1, 2, 3, 3]), &Tensor::ones(&[2, 3, 2, 2]), Some(&b), 2).unwrap();
        assert_eq!(out.shape(), &[1, 3, 6, 6]);
        for (i, chunk) in out.data().chunks(36).enumerate() {
            assert!(chunk.iter().all(|&v| v == b.data()[i]));
        }
    }

    #[test]
    fn pixel_shuffle_index_law() {
        let g = Graph::<f64>::inference();
        let x = g.constant(Tensor::from_f64(&[1, 4, 1, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = g.pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.value().data(), &[1.0, 2.0, 3.0, 4.0]);
        let bad = g.constant(Tensor::zeros(&[1, 6, 1, 1]));
        assert!(g.pixel_shuffle(&bad, 2).is_err());
    }

    #[test]
    fn pixel_shuffle_r1_is_identity_and_inverse_restores() {
        let mut rng = seeded_rng(13);
        let g = Graph::<f32>::inference();
        let x = Tensor::randn(&[2, 48, 3, 5], 1.0, &mut rng);
        let xv = g.constant(x.clone());
        assert!(g.pixel_shuffle(&xv, 1).unwrap().value().bit_eq(&x));
        let y = g.pixel_shuffle(&xv, 4).unwrap();
        assert_eq!(y.shape(), &[2, 3, 12, 20]);
        assert!(pixel_unshuffle_tensor(y.value(), 4).unwrap().bit_eq(&x));
    }
}
