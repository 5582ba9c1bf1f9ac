use super::broadcast::{broadcast_shape, broadcast_strides, for_each_offset2};
use crate::error::{Error, Result};
use crate::float::{gemm, Float, MatRef};
use crate::graph::{Graph, Var};
use crate::tensor::{numel, Tensor};

/// Batch layout of one (possibly broadcast, possibly transposed) product.
#[derive(Clone)]
struct Plan {
    p: usize,
    q: usize,
    r: usize,
    trans_b: bool,
    out_shape: Vec<usize>,
    /// (out batch, a batch, b batch); empty when `b` is a plain matrix and folded.
    pairs: Vec<(usize, usize, usize)>,
    fold: bool,
    a_rows: usize,
}

impl Plan {
    fn new(op: &'static str, a: &[usize], b: &[usize], trans_b: bool) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(Error::dim(op, format!("operands must be at least 2-d, got {a:?} and {b:?}")));
        }
        let (p, q) = (a[a.len() - 2], a[a.len() - 1]);
        let (qb, r) = if trans_b { (b[b.len() - 1], b[b.len() - 2]) } else { (b[b.len() - 2], b[b.len() - 1]) };
        if q != qb {
            return Err(Error::mismatch(op, a, b));
        }
        let (ba, bb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
        let batch = broadcast_shape(op, ba, bb)?;
        let mut out_shape = batch.clone();
        out_shape.extend([p, r]);
        let fold = bb.is_empty();
        let mut pairs = Vec::new();
        if !fold {
            let sa = broadcast_strides(ba, &batch);
            let sb = broadcast_strides(bb, &batch);
            for_each_offset2(&batch, &sa, &sb, |o, i, j| pairs.push((o, i, j)));
        }
        Ok(Plan { p, q, r, trans_b, out_shape, pairs, fold, a_rows: numel(ba) * p })
    }

    /// `[q, r]` view of matrix `idx` of `b`.
    fn b_view<'a, T>(&self, b: &'a [T], idx: usize) -> MatRef<'a, T> {
        let off = idx * self.q * self.r;
        if self.trans_b {
            MatRef::row_major(b, off, self.r, self.q).t()
        } else {
            MatRef::row_major(b, off, self.q, self.r)
        }
    }
}

fn forward<T: Float>(plan: &Plan, a: &[T], b: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); numel(&plan.out_shape)];
    let (p, q, r) = (plan.p, plan.q, plan.r);
    if plan.fold {
        gemm(T::one(), MatRef::row_major(a, 0, plan.a_rows, q), plan.b_view(b, 0), T::zero(), &mut out, 0);
    } else {
        for &(o, i, j) in &plan.pairs {
            gemm(T::one(), MatRef::row_major(a, i * p * q, p, q), plan.b_view(b, j), T::zero(), &mut out, o * p * r);
        }
    }
    out
}

fn backward<T: Float>(plan: &Plan, a: &Tensor<T>, b: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
    let (p, q, r) = (plan.p, plan.q, plan.r);
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let da = needs[0].then(|| {
        let mut da = vec![T::zero(); a.numel()];
        if plan.fold {
            let gm = MatRef::row_major(gd, 0, plan.a_rows, r);
            gemm(T::one(), gm, plan.b_view(bd, 0).t(), T::zero(), &mut da, 0);
        } else {
            for &(o, i, j) in &plan.pairs {
                let gm = MatRef::row_major(gd, o * p * r, p, r);
                gemm(T::one(), gm, plan.b_view(bd, j).t(), T::one(), &mut da, i * p * q);
            }
        }
        Tensor::new(a.shape(), da).expect("shape")
    });
    let db = needs[1].then(|| {
        let mut db = vec![T::zero(); b.numel()];
        let mut accumulate = |a_off: usize, rows: usize, g_off: usize, b_off: usize, beta: T| {
            let am = MatRef::row_major(ad, a_off, rows, q);
            let gm = MatRef::row_major(gd, g_off, rows, r);
            if plan.trans_b {
                // stored [r, q]: dB = dCᵀ A
                gemm(T::one(), gm.t(), am, beta, &mut db, b_off);
            } else {
                gemm(T::one(), am.t(), gm, beta, &mut db, b_off);
            }
        };
        if plan.fold {
            accumulate(0, plan.a_rows, 0, 0, T::zero());
        } else {
            for &(o, i, j) in &plan.pairs {
                accumulate(i * p * q, p, o * p * r, j * q * r, T::one());
            }
        }
        Tensor::new(b.shape(), db).expect("shape")
    });
    vec![da, db]
}

/// Batched `a @ b` (or `a @ bᵀ`) on plain tensors.
pub fn matmul_tensor<T: Float>(a: &Tensor<T>, b: &Tensor<T>, trans_b: bool) -> Result<Tensor<T>> {
    let plan = Plan::new("matmul", a.shape(), b.shape(), trans_b)?;
    let out = forward(&plan, a.data(), b.data());
    Tensor::new(&plan.out_shape, out)
}

impl<T: Float> Graph<T> {
    /// `a[.., p, q] @ b[.., q, r]` with broadcast batch axes.
    pub fn matmul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.matmul_impl("matmul", a, b, false)
    }

    /// `a[.., p, q] @ b[.., r, q]ᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.matmul_impl("matmul_nt", a, b, true)
    }

    fn matmul_impl(&self, op: &'static str, a: &Var<T>, b: &Var<T>, trans_b: bool) -> Result<Var<T>> {
        let plan = Plan::new(op, a.shape(), b.shape(), trans_b)?;
        let out = Tensor::new(&plan.out_shape, forward(&plan, a.value().data(), b.value().data()))?;
        let (av, bv) = (a.value().clone(), b.value().clone());
        self.apply(op, &[a, b], out, move |g, needs| Ok(backward(&plan, &av, &bv, g, needs)))
    }
}

impl<T: Float> Graph<T> {
    /// `x @ w + b` over the last axis of `x`; `w` is `[in, out]`, `b` is `[out]`.
    pub fn linear(&self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>) -> Result<Var<T>> {
        let (xs, ws) = (x.shape(), w.shape());
        let (k, n) = match *ws {
            [k, n] if xs.last() == Some(&k) => (k, n),
            _ => return Err(Error::mismatch("linear", xs, ws)),
        };
        if let Some(b) = b {
            if b.shape() != [n] {
                return Err(Error::mismatch("linear", ws, b.shape()));
            }
        }
        let rows = numel(xs) / k.max(1);
        let mut out = match b {
            Some(b) => b.value().data().repeat(rows),
            None => vec![T::zero(); rows * n],
        };
        let beta = if b.is_some() { T::one() } else { T::zero() };
        gemm(T::one(), MatRef::row_major(x.value().data(), 0, rows, k), MatRef::row_major(w.value().data(), 0, k, n), beta, &mut out, 0);
        let mut shape = xs.to_vec();
        *shape.last_mut().expect("rank >= 1") = n;
        let out = Tensor::new(&shape, out)?;
        let (xv, wv) = (x.value().clone(), w.value().clone());
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.apply("linear", &inputs, out, move |g, needs| {
            let gd = g.data();
            let gm = MatRef::row_major(gd, 0, rows, n);
            let dx = needs[0].then(|| {
                let mut dx = vec![T::zero(); rows * k];
                gemm(T::one(), gm, MatRef::row_major(wv.data(), 0, k, n).t(), T::zero(), &mut dx, 0);
                Tensor::new(xv.shape(), dx).expect("shape")
            });
            let dw = needs[1].then(|| {
                let mut dw = vec![T::zero(); k * n];
                gemm(T::one(), MatRef::row_major(xv.data(), 0, rows, k).t(), gm, T::zero(), &mut dw, 0);
                Tensor::new(wv.shape(), dw).expect("shape")
            });
            let mut grads = vec![dx, dw];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| {
                    let mut db = vec![T::zero(); n];
                    for row in gd.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                    Tensor::new(&[n], db).expect("shape")
                }));
            }
            Ok(grads)
        })
    }
}
