use super::reduce::split_axis;
use crate::error::{Error, Result};
use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Sum with eight interleaved accumulators so the loop vectorizes.
#[inline]
fn lane_sum<T: Float>(values: impl Iterator<Item = T>) -> T {
    let mut acc = [T::zero(); 8];
    for (i, v) in values.enumerate() {
        acc[i & 7] += v;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// Max-subtracted softmax along `axis`.
pub fn softmax_tensor<T: Float>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::Axis { op: "softmax", axis, rank: x.rank() });
    }
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let mut out = x.data().to_vec();
    if inner == 1 {
        for row in out.chunks_mut(len.max(1)) {
            let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            let inv = T::one() / s;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
    } else {
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let m = (0..len).fold(T::neg_infinity(), |m, a| m.max(out[at(a)]));
                let mut s = T::zero();
                for a in 0..len {
                    let e = (out[at(a)] - m).exp();
                    out[at(a)] = e;
                    s += e;
                }
                for a in 0..len {
                    out[at(a)] /= s;
                }
            }
        }
    }
    Tensor::new(x.shape(), out)
}

impl<T: Float> Graph<T> {
    pub fn softmax(&self, x: &Var<T>, axis: usize) -> Result<Var<T>> {
        let y = softmax_tensor(x.value(), axis)?;
        let yv = y.clone();
        self.apply("softmax", &[x], y, move |g, _| {
            // dx = y * (g - sum(g * y))
            let (outer, len, inner) = split_axis(yv.shape(), axis);
            let (yd, gd) = (yv.data(), g.data());
            let mut dx = vec![T::zero(); yd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |a: usize| (o * len + a) * inner + i;
                    let dot = (0..len).fold(T::zero(), |s, a| s + gd[at(a)] * yd[at(a)]);
                    for a in 0..len {
                        dx[at(a)] = yd[at(a)] * (gd[at(a)] - dot);
                    }
                }
            }
            Ok(vec![Some(Tensor::new(yv.shape(), dx)?)])
        })
    }

    /// Normalize each vector along the last axis, then scale by `gamma` and shift by `beta`.
    pub fn layer_norm(&self, x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: f64) -> Result<Var<T>> {
        let c = *x.shape().last().ok_or_else(|| Error::dim("layer_norm", "rank-0 input"))?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::mismatch("layer_norm", x.shape(), gamma.shape()));
        }
        let eps = T::from_f64_lossy(eps);
        let inv_c = T::one() / T::from_usize(c).unwrap();
        let rows = x.value().numel() / c.max(1);
        let (xd, gd, bd) = (x.value().data(), gamma.value().data(), beta.value().data());
        let keep = self.is_recording();
        let mut xhat = vec![T::zero(); if keep { xd.len() } else { 0 }];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xd.len()];
        for (r, (row, orow)) in xd.chunks_exact(c).zip(out.chunks_exact_mut(c)).enumerate() {
            let mean = lane_sum(row.iter().copied()) * inv_c;
            let var = lane_sum(row.iter().map(|&v| (v - mean) * (v - mean))) * inv_c;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for (((o, &v), &g), &b) in orow.iter_mut().zip(row).zip(gd).zip(bd) {
                *o = (v - mean) * rs * g + b;
            }
            if keep {
                for (h, &v) in xhat[r * c..(r + 1) * c].iter_mut().zip(row) {
                    *h = (v - mean) * rs;
                }
            }
        }
        let out = Tensor::new(x.shape(), out)?;
        let shape = x.shape().to_vec();
        let gamma_v = gamma.value().clone();
        self.apply("layer_norm", &[x, gamma, beta], out, move |g, needs| {
            let gd = g.data();
            let gam = gamma_v.data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut dx = if needs[0] { vec![T::zero(); gd.len()] } else { Vec::new() };
            for r in 0..rows {
                let (gr, hr) = (&gd[r * c..(r + 1) * c], &xhat[r * c..(r + 1) * c]);
                let mut mean_dh = T::zero();
                let mut mean_dh_h = T::zero();
                for j in 0..c {
                    dgamma[j] += gr[j] * hr[j];
                    dbeta[j] += gr[j];
                    let dh = gr[j] * gam[j];
                    mean_dh += dh;
                    mean_dh_h += dh * hr[j];
                }
                if needs[0] {
                    mean_dh *= inv_c;
                    mean_dh_h *= inv_c;
                    for j in 0..c {
                        let dh = gr[j] * gam[j];
                        dx[r * c + j] = rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
            }
            Ok(vec![
                if needs[0] { Some(Tensor::new(&shape, dx)?) } else { None },
                if needs[1] { Some(Tensor::new(&[c], dgamma)?) } else { None },
                if needs[2] { Some(Tensor::new(&[c], dbeta)?) } else { None },
            ])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn uniform_logits_give_uniform_weights() {
        let x = Tensor::<f64>::zeros(&[4]);
        assert_eq!(softmax_tensor(&x, 0).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn shift_invariant() {
        let mut rng = seeded_rng(5);
        let x = Tensor::<f64>::randn(&[3, 5], 1.0, &mut rng);
        let shifted = x.map(|v| v + 7.25);
        let a = softmax_tensor(&x, 1).unwrap();
        let b = softmax_tensor(&shifted, 1).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn closed_form_on_one_two_three() {
        let y = softmax_tensor(&Tensor::<f32>::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap(), 0).unwrap();
        let z: f64 = (1..=3).map(|k| (k as f64).exp()).sum();
        for (k, v) in y.data().iter().enumerate() {
            assert!((*v as f64 - ((k + 1) as f64).exp() / z).abs() < 1e-7);
        }
    }

    #[test]
    fn interior_axis_slices_sum_to_one() {
        let mut rng = seeded_rng(6);
        let x = Tensor::<f64>::randn(&[2, 4, 3], 3.0, &mut rng);
        let y = softmax_tensor(&x, 1).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                let s: f64 = (0..4).map(|a| y.at(&[o, a, i])).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        assert!(softmax_tensor(&x, 3).is_err());
    }

    fn ln(x: Tensor<f64>, gamma: Tensor<f64>, beta: Tensor<f64>) -> Tensor<f64> {
        let g = Graph::inference();
        let (x, gm, bt) = (g.constant(x), g.constant(gamma), g.constant(beta));
        g.layer_norm(&x, &gm, &bt, 1e-5).unwrap().into_value()
    }

    #[test]
    fn constant_token_normalizes_to_zero() {
        let out = ln(Tensor::full(&[1, 8], 3.5), Tensor::ones(&[8]), Tensor::zeros(&[8]));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gamma_yields_beta() {
        let mut rng = seeded_rng(7);
        let beta = Tensor::randn(&[6], 1.0, &mut rng);
        let out = ln(Tensor::randn(&[3, 6], 1.0, &mut rng), Tensor::zeros(&[6]), beta.clone());
        for r in 0..3 {
            assert_eq!(&out.data()[r * 6..(r + 1) * 6], beta.data());
        }
    }

    #[test]
    fn random_token_statistics() {
        let mut rng = seeded_rng(8);
        let x = Tensor::randn(&[1, 64], 2.0, &mut rng).map(|v| v + 1.0);
        let out = ln(x, Tensor::ones(&[64]), Tensor::zeros(&[64]));
        let mean: f64 = out.data().iter().sum::<f64>() / 64.0;
        let var: f64 = out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }
}
