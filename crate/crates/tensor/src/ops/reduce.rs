use crate::error::{Error, Result};
use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Sizes of the axes before, at and after `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Float> Graph<T> {
    /// Sum of all elements, as a rank-0 tensor. Accumulates in 64-bit.
    pub fn sum(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = Tensor::scalar(T::from_f64_lossy(x.value().sum_f64()));
        let shape = x.shape().to_vec();
        self.apply("sum", &[x], out, move |g, _| Ok(vec![Some(Tensor::full(&shape, g.item()))]))
    }

    pub fn mean(&self, x: &Var<T>) -> Result<Var<T>> {
        let n = x.value().numel();
        if n == 0 {
            return Err(Error::dim("mean", "empty tensor"));
        }
        let out = Tensor::scalar(T::from_f64_lossy(x.value().sum_f64() / n as f64));
        let shape = x.shape().to_vec();
        self.apply("mean", &[x], out, move |g, _| {
            Ok(vec![Some(Tensor::full(&shape, g.item() / T::from_usize(n).unwrap()))])
        })
    }

    /// Mean along `axis`, keeping it as size 1.
    pub fn mean_axis(&self, x: &Var<T>, axis: usize) -> Result<Var<T>> {
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Axis { op: "mean_axis", axis, rank: shape.len() });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let inv = T::one() / T::from_usize(len).unwrap();
        let xd = x.value().data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for a in 0..len {
                let src = &xd[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            for d in dst.iter_mut() {
                *d *= inv;
            }
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = 1;
        let out = Tensor::new(&out_shape, out)?;
        self.apply("mean_axis", &[x], out, move |g, _| {
            let gd = g.data();
            let mut dx = vec![T::zero(); outer * len * inner];
            for o in 0..outer {
                for a in 0..len {
                    let dst = &mut dx[(o * len + a) * inner..(o * len + a + 1) * inner];
                    for (d, &s) in dst.iter_mut().zip(&gd[o * inner..(o + 1) * inner]) {
                        *d = s * inv;
                    }
                }
            }
            Ok(vec![Some(Tensor::new(&shape, dx)?)])
        })
    }
}
