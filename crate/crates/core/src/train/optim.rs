use serde::{Deserialize, Serialize};

use rstt_tensor::{Float, Tensor};

use crate::error::{dim_err, Result, RsttError};
use crate::params::ParamStore;

/// Adam with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW { beta1: 0.9, beta2: 0.99, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// First and second moments per parameter, in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Float> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState { m: zeros(), v: zeros(), step: 0 }
    }
}

impl AdamW {
    /// One update of every tensor in `params`. `grads[i] == None` is a zero
    /// gradient. Nothing is modified when any gradient is non-finite.
    pub fn step<T: Float>(&self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], state: &mut AdamState<T>, lr: f64) -> Result<()> {
        let n = params.len();
        if grads.len() != n || state.m.len() != n || state.v.len() != n {
            return Err(dim_err("adamw", format!("{n} parameters, {} gradients, {} moment buffers", grads.len(), state.m.len())));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.shape() != params.tensors()[i].shape() {
                    return Err(dim_err("adamw", format!("gradient {:?} for parameter {:?}", g.shape(), params.tensors()[i].shape())));
                }
                if !g.is_finite() {
                    let name = params.iter().nth(i).map_or("?", |(n, _)| n);
                    return Err(RsttError::NonFinite { what: format!("gradient of {name}") });
                }
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - self.beta1), T::from_f64_lossy(1.0 - self.beta2));
        let decay = T::from_f64_lossy(1.0 - lr * self.weight_decay);
        let step_size = T::from_f64_lossy(lr / bc1);
        let bc2_sqrt = T::from_f64_lossy(bc2.sqrt());
        let eps = T::from_f64_lossy(self.eps);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
            let pd = p.data_mut();
            let gd = grads[i].as_ref().map(|g| g.data());
            for j in 0..pd.len() {
                let gj = gd.map_or(T::zero(), |g| g[j]);
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                pd[j] = pd[j] * decay - step_size * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}
