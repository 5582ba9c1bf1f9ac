//! Reference implementations written directly from the definitions, with
//! plain loops and no shared code with the library. Integration tests and
//! the acceptance runner compare the library against these.

#![allow(dead_code)]

/// Projection weights of one attention layer, `[in, out]` row-major.
pub struct DenseAttn {
    pub c: usize,
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
}

fn project(x: &[f64], w: &[f64], b: &[f64], c: usize) -> Vec<f64> {
    let rows = x.len() / c;
    let mut out = vec![0.0; rows * c];
    for r in 0..rows {
        for o in 0..c {
            let mut acc = b[o];
            for i in 0..c {
                acc += x[r * c + i] * w[i * c + o];
            }
            out[r * c + o] = acc;
        }
    }
    out
}

impl DenseAttn {
    /// Attention of `lq` query tokens over `lk` key tokens, both `[L, C]`.
    /// `bias` and `mask` are `[heads, lq, lk]` and `[lq, lk]`. Returns the
    /// output `[lq, C]` and the weights `[heads, lq, lk]`.
    pub fn run(&self, q: &[f64], kv: &[f64], heads: usize, bias: Option<&[f64]>, mask: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
        let c = self.c;
        let (lq, lk) = (q.len() / c, kv.len() / c);
        let d = c / heads;
        let qp = project(q, &self.wq, &self.bq, c);
        let kp = project(kv, &self.wk, &self.bk, c);
        let vp = project(kv, &self.wv, &self.bv, c);
        let mut probs = vec![0.0; heads * lq * lk];
        let mut merged = vec![0.0; lq * c];
        for h in 0..heads {
            for i in 0..lq {
                let mut scores = vec![0.0; lk];
                for (j, s) in scores.iter_mut().enumerate() {
                    let dot: f64 = (0..d).map(|e| qp[i * c + h * d + e] * kp[j * c + h * d + e]).sum();
                    *s = dot / (d as f64).sqrt();
                    if let Some(b) = bias {
                        *s += b[(h * lq + i) * lk + j];
                    }
                    if let Some(m) = mask {
                        *s += m[i * lk + j];
                    }
                }
                let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
                let total: f64 = exps.iter().sum();
                for j in 0..lk {
                    let p = exps[j] / total;
                    probs[(h * lq + i) * lk + j] = p;
                    for e in 0..d {
                        merged[i * c + h * d + e] += p * vp[j * c + h * d + e];
                    }
                }
            }
        }
        (project(&merged, &self.wo, &self.bo, c), probs)
    }
}

/// BT.601 luma of an RGB frame stored planar `[3, H, W]`, clamped to `[0, 1]`.
pub fn luma(frame: &[f64]) -> Vec<f64> {
    let plane = frame.len() / 3;
    (0..plane)
        .map(|i| {
            let c = |v: f64| v.clamp(0.0, 1.0);
            0.299 * c(frame[i]) + 0.587 * c(frame[plane + i]) + 0.114 * c(frame[2 * plane + i])
        })
        .collect()
}

pub fn psnr_reference(a: &[f64], b: &[f64]) -> f64 {
    let (ya, yb) = (luma(a), luma(b));
    let mse = ya.iter().zip(&yb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / ya.len() as f64;
    if mse == 0.0 {
        99.0
    } else {
        (-10.0 * mse.log10()).min(99.0)
    }
}

/// Mean SSIM over every full 11x11 window position, with a 2-D Gaussian
/// weight (sigma 1.5) applied directly at each position.
pub fn ssim_reference(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let (ya, yb) = (luma(a), luma(b));
    let k = 11;
    let mut weights = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            weights[i * k + j] = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (1e-4, 9e-4);
    let mut sum = 0.0;
    let mut count = 0;
    for y0 in 0..=h - k {
        for x0 in 0..=w - k {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let p = (y0 + i) * w + x0 + j;
                    let wt = weights[i * k + j];
                    mx += wt * ya[p];
                    my += wt * yb[p];
                    sxx += wt * ya[p] * ya[p];
                    syy += wt * yb[p] * yb[p];
                    sxy += wt * ya[p] * yb[p];
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}

/// Textbook AdamW on flat vectors: bias-corrected moments, then the
/// decoupled decay term added to the step.
pub struct ReferenceAdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: i32,
}

impl ReferenceAdamW {
    pub fn new(sizes: &[usize], beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        ReferenceAdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        for (i, p) in params.iter_mut().enumerate() {
            for j in 0..p.len() {
                let g = grads[i][j];
                self.m[i][j] = self.beta1 * self.m[i][j] + (1.0 - self.beta1) * g;
                self.v[i][j] = self.beta2 * self.v[i][j] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i][j] / (1.0 - self.beta1.powi(self.t));
                let v_hat = self.v[i][j] / (1.0 - self.beta2.powi(self.t));
                p[j] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * p[j]);
            }
        }
    }
}

/// Whether two tokens of a window may attend to each other after the grid
/// was rolled by `-shift`: both must come from the same side of the wrap
/// seam on each axis. `y`, `x` are positions in the rolled grid.
pub fn same_shift_region(h: usize, w: usize, shift: usize, a: (usize, usize), b: (usize, usize)) -> bool {
    let wraps = |p: usize, len: usize| p + shift >= len;
    wraps(a.0, h) == wraps(b.0, h) && wraps(a.1, w) == wraps(b.1, w)
}
