use serde::{Deserialize, Serialize};

use rstt_tensor::{Float, Graph, Tensor, Var};

use crate::error::{dim_err, Result};

/// How the Charbonnier penalty is reduced over a clip.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CharbonnierMode {
    /// `mean(sqrt(d^2 + eps^2))` over every element.
    #[default]
    Elementwise,
    /// `sqrt(||d||^2 + eps^2)` over the whole clip.
    Global,
}

fn check_shapes<T: Float>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(dim_err("charbonnier", format!("prediction {:?} and target {:?} differ", pred.shape(), gt.shape())));
    }
    Ok(())
}

/// Charbonnier loss as a scalar on the tape. Sums are accumulated in f64.
pub fn charbonnier<T: Float>(g: &Graph<T>, pred: &Var<T>, gt: &Var<T>, eps: f64, mode: CharbonnierMode) -> Result<Var<T>> {
    check_shapes(pred.value(), gt.value())?;
    let (pd, gd) = (pred.value().data(), gt.value().data());
    let n = pd.len() as f64;
    let eps_t = T::from_f64_lossy(eps);
    let eps2 = eps_t * eps_t;
    let value = match mode {
        // Subtracting eps per element keeps the identical-input case exact.
        CharbonnierMode::Elementwise => {
            let excess: f64 = pd.iter().zip(gd).map(|(&p, &q)| ((p - q) * (p - q) + eps2).sqrt().as_f64() - eps_t.as_f64()).sum();
            excess / n + eps_t.as_f64()
        }
        CharbonnierMode::Global => {
            let sq: f64 = pd.iter().zip(gd).map(|(&p, &q)| ((p - q) * (p - q)).as_f64()).sum();
            (sq + eps * eps).sqrt()
        }
    };
    let (pv, gv) = (pred.value().clone(), gt.value().clone());
    g.apply("charbonnier", &[pred, gt], Tensor::scalar(T::from_f64_lossy(value)), move |grad, needs| {
        let up = grad.item();
        let (pd, gd) = (pv.data(), gv.data());
        let d: Vec<T> = match mode {
            CharbonnierMode::Elementwise => {
                let scale = up / T::from_f64_lossy(n);
                pd.iter().zip(gd).map(|(&p, &q)| scale * (p - q) / ((p - q) * (p - q) + eps2).sqrt()).collect()
            }
            CharbonnierMode::Global => {
                let scale = up / T::from_f64_lossy(value);
                pd.iter().zip(gd).map(|(&p, &q)| scale * (p - q)).collect()
            }
        };
        let neg = needs[1].then(|| Tensor::new(pv.shape(), d.iter().map(|&v| -v).collect()).expect("shape"));
        Ok(vec![needs[0].then(|| Tensor::new(pv.shape(), d).expect("shape")), neg])
    })
    .map_err(Into::into)
}

/// Loss value without a tape.
pub fn charbonnier_value<T: Float>(pred: &Tensor<T>, gt: &Tensor<T>, eps: f64, mode: CharbonnierMode) -> Result<f64> {
    let g = Graph::inference();
    Ok(charbonnier(&g, &g.constant(pred.clone()), &g.constant(gt.clone()), eps, mode)?.value().item().as_f64())
}
