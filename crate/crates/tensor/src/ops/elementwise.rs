use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::broadcast::{binary_map, reduce_to};
use crate::error::Result;
use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Exact (erf-based) GELU.
pub fn gelu_scalar<T: Float>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (x * T::from_f64_lossy(FRAC_1_SQRT_2)).erf())
}

fn gelu_grad_scalar<T: Float>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let cdf = half * (T::one() + (x * T::from_f64_lossy(FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::from_f64_lossy(1.0 / (2.0 * PI).sqrt());
    cdf + x * pdf
}

impl<T: Float> Graph<T> {
    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = binary_map("add", a.value(), b.value(), |x, y| x + y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.apply("add", &[a, b], out, move |g, needs| {
            Ok(vec![
                if needs[0] { Some(reduce_to(g, &sa)?) } else { None },
                if needs[1] { Some(reduce_to(g, &sb)?) } else { None },
            ])
        })
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = binary_map("sub", a.value(), b.value(), |x, y| x - y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.apply("sub", &[a, b], out, move |g, needs| {
            Ok(vec![
                if needs[0] { Some(reduce_to(g, &sa)?) } else { None },
                if needs[1] { Some(reduce_to(&g.map(|v| -v), &sb)?) } else { None },
            ])
        })
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = binary_map("mul", a.value(), b.value(), |x, y| x * y)?;
        let (ta, tb) = (a.value().clone(), b.value().clone());
        self.apply("mul", &[a, b], out, move |g, needs| {
            let ga = if needs[0] { Some(reduce_to(&binary_map("mul", g, &tb, |x, y| x * y)?, ta.shape())?) } else { None };
            let gb = if needs[1] { Some(reduce_to(&binary_map("mul", g, &ta, |x, y| x * y)?, tb.shape())?) } else { None };
            Ok(vec![ga, gb])
        })
    }

    /// Multiply by a constant.
    pub fn scale(&self, x: &Var<T>, s: f64) -> Result<Var<T>> {
        let s = T::from_f64_lossy(s);
        let out = x.value().map(|v| v * s);
        self.apply("scale", &[x], out, move |g, _| Ok(vec![Some(g.map(|v| v * s))]))
    }

    pub fn gelu(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = x.value().map(gelu_scalar);
        let xv = x.value().clone();
        self.apply("gelu", &[x], out, move |g, _| {
            Ok(vec![Some(g.zip_map(&xv, |gv, xv| gv * gelu_grad_scalar(xv))?)])
        })
    }

    pub fn relu(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = x.value().map(|v| v.max(T::zero()));
        let xv = x.value().clone();
        self.apply("relu", &[x], out, move |g, _| {
            Ok(vec![Some(g.zip_map(&xv, |gv, xv| if xv > T::zero() { gv } else { T::zero() })?)])
        })
    }

}

impl<T: Float> Graph<T> {
    /// Two-layer perceptron with a GELU between.
    pub fn mlp(&self, x: &Var<T>, w1: &Var<T>, b1: &Var<T>, w2: &Var<T>, b2: &Var<T>) -> Result<Var<T>> {
        let h = self.linear(x, w1, Some(b1))?;
        let h = self.gelu(&h)?;
        self.linear(&h, w2, Some(b2))
    }
}

/// Same-shape elementwise product without a tape (test and data helpers).
pub fn hadamard<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary_map("hadamard", a, b, |x, y| x * y)
}
