use std::sync::Arc;

use super::broadcast::{broadcast_shape, broadcast_strides, gather_strided, reduce_to};
use super::reduce::split_axis;
use crate::error::{Error, Result};
use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::tensor::{numel, strides, Tensor};

pub fn permute_tensor<T: Float>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::dim("permute", format!("{perm:?} is not a permutation of rank {rank}")));
    }
    let in_strides = strides(x.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    Tensor::new(&out_shape, gather_strided(&out_shape, &src_strides, x.data()))
}

/// Cyclic roll: `out[.., i, ..] = x[.., (i - shift) mod n, ..]` along `axis`.
pub fn roll_tensor<T: Float>(x: &Tensor<T>, axis: usize, shift: isize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::Axis { op: "roll", axis, rank: x.rank() });
    }
    let (outer, len, inner) = split_axis(x.shape(), axis);
    if len == 0 {
        return Ok(x.clone());
    }
    let s = shift.rem_euclid(len as isize) as usize;
    if s == 0 {
        return Ok(x.clone());
    }
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for o in 0..outer {
        for i in 0..len {
            let src = (i + len - s) % len;
            let d = (o * len + i) * inner;
            let sidx = (o * len + src) * inner;
            out[d..d + inner].copy_from_slice(&xd[sidx..sidx + inner]);
        }
    }
    Tensor::new(x.shape(), out)
}

pub fn narrow_tensor<T: Float>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::Axis { op: "narrow", axis, rank: x.rank() });
    }
    if start + len > x.shape()[axis] {
        return Err(Error::dim("narrow", format!("range {start}..{} exceeds axis {axis} of {:?}", start + len, x.shape())));
    }
    let (outer, full, inner) = split_axis(x.shape(), axis);
    let xd = x.data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out.extend_from_slice(&xd[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::new(&shape, out)
}

pub fn concat_tensors<T: Float>(xs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = xs.first().ok_or_else(|| Error::dim("concat", "no inputs"))?;
    if axis >= first.rank() {
        return Err(Error::Axis { op: "concat", axis, rank: first.rank() });
    }
    for x in xs {
        let same = x.rank() == first.rank()
            && x.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !same {
            return Err(Error::mismatch("concat", first.shape(), x.shape()));
        }
    }
    let (outer, _, inner) = split_axis(first.shape(), axis);
    let total: usize = xs.iter().map(|x| x.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for x in xs {
            let n = x.shape()[axis] * inner;
            out.extend_from_slice(&x.data()[o * n..(o + 1) * n]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(&shape, out)
}

/// One output slice of [`Graph::frame_mix`]: `(source index, coefficient)` terms.
pub type MixRow = Vec<(usize, f64)>;

impl<T: Float> Graph<T> {
    /// Change the shape, keeping the row-major element order.
    pub fn reshape(&self, x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        let out = x.value().reshape(shape)?;
        let orig = x.shape().to_vec();
        self.apply("reshape", &[x], out, move |g, _| Ok(vec![Some(g.reshape(&orig)?)]))
    }

    pub fn permute(&self, x: &Var<T>, perm: &[usize]) -> Result<Var<T>> {
        let out = permute_tensor(x.value(), perm)?;
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        self.apply("permute", &[x], out, move |g, _| Ok(vec![Some(permute_tensor(g, &inverse)?)]))
    }

    /// Toroidal roll along several axes at once.
    pub fn roll(&self, x: &Var<T>, shifts: &[(usize, isize)]) -> Result<Var<T>> {
        let mut out = x.value().clone();
        for &(axis, s) in shifts {
            out = roll_tensor(&out, axis, s)?;
        }
        let shifts = shifts.to_vec();
        self.apply("roll", &[x], out, move |g, _| {
            let mut dx = g.clone();
            for &(axis, s) in shifts.iter().rev() {
                dx = roll_tensor(&dx, axis, -s)?;
            }
            Ok(vec![Some(dx)])
        })
    }

    /// Slice `start..start + len` of `axis`.
    pub fn narrow(&self, x: &Var<T>, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        let out = narrow_tensor(x.value(), axis, start, len)?;
        let shape = x.shape().to_vec();
        self.apply("narrow", &[x], out, move |g, _| {
            let (outer, full, inner) = split_axis(&shape, axis);
            let mut dx = vec![T::zero(); numel(&shape)];
            let gd = g.data();
            for o in 0..outer {
                let base = (o * full + start) * inner;
                dx[base..base + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
            }
            Ok(vec![Some(Tensor::new(&shape, dx)?)])
        })
    }

    pub fn concat(&self, xs: &[&Var<T>], axis: usize) -> Result<Var<T>> {
        let values: Vec<&Tensor<T>> = xs.iter().map(|v| v.value()).collect();
        let out = concat_tensors(&values, axis)?;
        let sizes: Vec<usize> = xs.iter().map(|v| v.shape()[axis]).collect();
        self.apply("concat", xs, out, move |g, needs| {
            let mut start = 0;
            let mut grads = Vec::with_capacity(sizes.len());
            for (&n, &need) in sizes.iter().zip(needs) {
                grads.push(if need { Some(narrow_tensor(g, axis, start, n)?) } else { None });
                start += n;
            }
            Ok(grads)
        })
    }

    /// Materialize `x` broadcast to `shape`.
    pub fn broadcast_to(&self, x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        if broadcast_shape("broadcast_to", x.shape(), shape)? != shape {
            return Err(Error::mismatch("broadcast_to", x.shape(), shape));
        }
        let src = broadcast_strides(x.shape(), shape);
        let out = Tensor::new(shape, gather_strided(shape, &src, x.value().data()))?;
        let orig = x.shape().to_vec();
        self.apply("broadcast_to", &[x], out, move |g, _| Ok(vec![Some(reduce_to(g, &orig)?)]))
    }

    /// Row lookup: `out[i] = table[index[i]]` for a `[rows, cols]` table.
    pub fn gather_rows(&self, table: &Var<T>, index: Arc<Vec<usize>>) -> Result<Var<T>> {
        let [rows, cols] = *table.shape() else {
            return Err(Error::dim("gather_rows", format!("table must be 2-d, got {:?}", table.shape())));
        };
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::dim("gather_rows", format!("row {bad} out of range for {rows} rows")));
        }
        let td = table.value().data();
        let mut out = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            out.extend_from_slice(&td[i * cols..(i + 1) * cols]);
        }
        let out = Tensor::new(&[index.len(), cols], out)?;
        self.apply("gather_rows", &[table], out, move |g, _| {
            let mut dt = vec![T::zero(); rows * cols];
            for (k, &i) in index.iter().enumerate() {
                for (d, &s) in dt[i * cols..(i + 1) * cols].iter_mut().zip(&g.data()[k * cols..(k + 1) * cols]) {
                    *d += s;
                }
            }
            Ok(vec![Some(Tensor::new(&[rows, cols], dt)?)])
        })
    }

    /// Linear recombination of slices along axis 0:
    /// `out[i] = sum_k c_k * x[j_k]` over the terms of `rows[i]`, evaluated in order.
    /// A single unit-coefficient term copies its source exactly.
    pub fn frame_mix(&self, x: &Var<T>, rows: &[MixRow]) -> Result<Var<T>> {
        let shape = x.shape().to_vec();
        let n = *shape.first().ok_or_else(|| Error::dim("frame_mix", "rank-0 input"))?;
        let slice = numel(&shape[1..]);
        for row in rows {
            if row.is_empty() || row.iter().any(|&(j, _)| j >= n) {
                return Err(Error::dim("frame_mix", format!("invalid terms {row:?} for {n} slices")));
            }
        }
        let xd = x.value().data();
        let mut out = vec![T::zero(); rows.len() * slice];
        for (i, row) in rows.iter().enumerate() {
            let dst = &mut out[i * slice..(i + 1) * slice];
            for (k, &(j, c)) in row.iter().enumerate() {
                let src = &xd[j * slice..(j + 1) * slice];
                let c = T::from_f64_lossy(c);
                if k == 0 && c == T::one() {
                    dst.copy_from_slice(src);
                } else if k == 0 {
                    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = c * s);
                } else {
                    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += c * s);
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape[0] = rows.len();
        let out = Tensor::new(&out_shape, out)?;
        let rows = rows.to_vec();
        self.apply("frame_mix", &[x], out, move |g, _| {
            let gd = g.data();
            let mut dx = vec![T::zero(); numel(&shape)];
            for (i, row) in rows.iter().enumerate() {
                for &(j, c) in row {
                    let c = T::from_f64_lossy(c);
                    let dst = &mut dx[j * slice..(j + 1) * slice];
                    dst.iter_mut().zip(&gd[i * slice..(i + 1) * slice]).for_each(|(d, &s)| *d += c * s);
                }
            }
            Ok(vec![Some(Tensor::new(&shape, dx)?)])
        })
    }
}
