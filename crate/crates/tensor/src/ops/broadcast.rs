//! Numpy-style broadcasting helpers shared by the binary ops.

use crate::error::{Error, Result};
use crate::float::Float;
use crate::tensor::{numel, strides, Tensor};

pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::mismatch(op, a, b)),
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed as `out` after right-alignment; broadcast axes get 0.
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let lead = out.len() - shape.len();
    (0..out.len())
        .map(|i| if i < lead || shape[i - lead] == 1 { 0 } else { own[i - lead] })
        .collect()
}

/// Visit every element of `out_shape`, yielding offsets into two broadcast operands.
pub(crate) fn for_each_offset2(out_shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = numel(out_shape);
    if n == 0 {
        return;
    }
    let rank = out_shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out_shape[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    while o < n {
        for j in 0..inner {
            f(o + j, oa + j * ia, ob + j * ib);
        }
        o += inner;
        // advance the odometer over the outer axes
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * idx[d];
            ob -= sb[d] * idx[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn binary_map<T: Float>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out_shape = broadcast_shape(op, a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); numel(&out_shape)];
    let rank = out_shape.len();
    // Common case: `b` broadcast along leading axes only (bias rows).
    if b.rank() <= rank && a.shape() == out_shape.as_slice() && out_shape[rank - b.rank()..] == *b.shape() {
        let m = b.numel().max(1);
        for (chunk, ac) in out.chunks_mut(m).zip(ad.chunks(m)) {
            for ((o, &x), &y) in chunk.iter_mut().zip(ac).zip(bd) {
                *o = f(x, y);
            }
        }
        return Tensor::new(&out_shape, out);
    }
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let (k, run) = contiguous_suffix(&out_shape, &[&sa, &sb]);
    for_each_offset2(&out_shape[..k], &sa[..k], &sb[..k], |o, i, j| {
        let dst = &mut out[o * run..(o + 1) * run];
        for ((d, &x), &y) in dst.iter_mut().zip(&ad[i..i + run]).zip(&bd[j..j + run]) {
            *d = f(x, y);
        }
    });
    Tensor::new(&out_shape, out)
}

/// Gather a strided view of `src` into a new row-major buffer of `out_shape`.
pub(crate) fn gather_strided<T: Float>(out_shape: &[usize], src_strides: &[usize], src: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); numel(out_shape)];
    let (k, run) = contiguous_suffix(out_shape, &[src_strides]);
    let zeros = vec![0; k];
    if run == 1 {
        for_each_offset2(out_shape, src_strides, &vec![0; out_shape.len()], |o, i, _| out[o] = src[i]);
    } else {
        for_each_offset2(&out_shape[..k], &src_strides[..k], &zeros, |o, i, _| {
            out[o * run..(o + 1) * run].copy_from_slice(&src[i..i + run]);
        });
    }
    out
}

/// First axis `k` such that axes `k..` are laid out contiguously in every
/// operand, and the element count of those axes.
fn contiguous_suffix(out_shape: &[usize], operands: &[&[usize]]) -> (usize, usize) {
    let mut k = out_shape.len();
    let mut run = 1;
    while k > 0 && operands.iter().all(|s| s[k - 1] == run) {
        k -= 1;
        run *= out_shape[k];
    }
    (k, run)
}

/// Sum `grad` (shaped like a broadcast result) back down to `shape`.
pub(crate) fn reduce_to<T: Float>(grad: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if grad.shape() == shape {
        return Ok(grad.clone());
    }
    let out_shape = grad.shape();
    let gd = grad.data();
    // Leading-axis broadcast: sum contiguous chunks.
    let trimmed = shape.iter().skip_while(|&&d| d == 1).count();
    if shape.len() <= out_shape.len() && out_shape[out_shape.len() - trimmed..] == shape[shape.len() - trimmed..] {
        let m = numel(shape).max(1);
        let mut acc = vec![T::zero(); m];
        for chunk in gd.chunks(m) {
            for (a, &v) in acc.iter_mut().zip(chunk) {
                *a += v;
            }
        }
        return Tensor::new(shape, acc);
    }
    let target_strides = broadcast_strides(shape, out_shape);
    let mut acc = vec![T::zero(); numel(shape)];
    let zeros = vec![0usize; out_shape.len()];
    let (k, run) = contiguous_suffix(out_shape, &[&target_strides]);
    for_each_offset2(&out_shape[..k], &target_strides[..k], &zeros[..k], |o, t, _| {
        for (a, &v) in acc[t..t + run].iter_mut().zip(&gd[o * run..(o + 1) * run]) {
            *a += v;
        }
    });
    Tensor::new(shape, acc)
}
