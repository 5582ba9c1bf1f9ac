use rstt_tensor::{Float, Graph, Var};

use crate::error::{config_err, dim_err, Result};

/// Projection weights of one attention layer. Weights are `[in, out]`.
#[derive(Clone, Copy)]
pub struct AttnVars<'a, T> {
    pub wq: &'a Var<T>,
    pub bq: &'a Var<T>,
    pub wk: &'a Var<T>,
    pub bk: &'a Var<T>,
    pub wv: &'a Var<T>,
    pub bv: &'a Var<T>,
    pub wo: &'a Var<T>,
    pub bo: &'a Var<T>,
}

/// Whether decoder keys and values are projected once per block and shared
/// by every query frame, or recomputed for each frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KvMode {
    #[default]
    Shared,
    PerQuery,
}

/// `[.., L, C] -> [.., heads, L, C / heads]`
fn split_heads<T: Float>(g: &Graph<T>, x: &Var<T>, heads: usize) -> Result<Var<T>> {
    let s = x.shape();
    let r = s.len();
    let (l, c) = (s[r - 2], s[r - 1]);
    let mut shape = s[..r - 2].to_vec();
    shape.extend([l, heads, c / heads]);
    let y = g.reshape(x, &shape)?;
    let mut perm: Vec<usize> = (0..r - 2).collect();
    perm.extend([r - 1, r - 2, r]);
    Ok(g.permute(&y, &perm)?)
}

/// `[.., heads, L, d] -> [.., L, heads * d]`
fn merge_heads<T: Float>(g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
    let s = x.shape();
    let r = s.len();
    let mut perm: Vec<usize> = (0..r - 3).collect();
    perm.extend([r - 2, r - 3, r - 1]);
    let y = g.permute(x, &perm)?;
    let mut shape = s[..r - 3].to_vec();
    shape.extend([s[r - 2], s[r - 3] * s[r - 1]]);
    Ok(g.reshape(&y, &shape)?)
}

/// Attention over token sets. `q` is `[.., Lq, C]`, `kv` is `[.., Lk, C]`
/// with leading axes that broadcast against those of `q`. `bias` and `mask`
/// must broadcast against the scores `[.., heads, Lq, Lk]`.
///
/// Returns the projected output `[.., Lq, C]` and the attention weights.
pub fn multi_head_attention_probs<T: Float>(
    g: &Graph<T>,
    q: &Var<T>,
    kv: &Var<T>,
    w: AttnVars<'_, T>,
    heads: usize,
    bias: Option<&Var<T>>,
    mask: Option<&Var<T>>,
) -> Result<(Var<T>, Var<T>)> {
    let c = *q.shape().last().ok_or_else(|| dim_err("attention", "rank-0 query"))?;
    if heads == 0 || c % heads != 0 {
        return Err(config_err(format!("{c} channels do not split into {heads} heads")));
    }
    if kv.shape().last() != Some(&c) {
        return Err(dim_err("attention", format!("query {:?} and key/value {:?} differ in channels", q.shape(), kv.shape())));
    }
    let d = c / heads;
    let qp = g.linear(q, w.wq, Some(w.bq))?;
    let qp = g.scale(&qp, 1.0 / (d as f64).sqrt())?;
    let kp = g.linear(kv, w.wk, Some(w.bk))?;
    let vp = g.linear(kv, w.wv, Some(w.bv))?;
    let (qh, kh, vh) = (split_heads(g, &qp, heads)?, split_heads(g, &kp, heads)?, split_heads(g, &vp, heads)?);
    let mut scores = g.matmul_nt(&qh, &kh)?;
    if let Some(b) = bias {
        scores = g.add(&scores, b)?;
    }
    if let Some(m) = mask {
        scores = g.add(&scores, m)?;
    }
    let last = scores.shape().len() - 1;
    let probs = g.softmax(&scores, last)?;
    let out = g.matmul(&probs, &vh)?;
    let out = merge_heads(g, &out)?;
    Ok((g.linear(&out, w.wo, Some(w.bo))?, probs))
}

/// Per head: `softmax(Q K^T / sqrt(d) + bias + mask) V`, heads concatenated
/// and projected by `W_o`. Self-attention is `kv == q`.
pub fn multi_head_attention<T: Float>(
    g: &Graph<T>,
    q: &Var<T>,
    kv: &Var<T>,
    w: AttnVars<'_, T>,
    heads: usize,
    bias: Option<&Var<T>>,
    mask: Option<&Var<T>>,
) -> Result<Var<T>> {
    Ok(multi_head_attention_probs(g, q, kv, w, heads, bias, mask)?.0)
}
