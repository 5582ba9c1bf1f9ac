//! Swin encoder and decoder blocks. A block is a regular-window sub-block
//! followed by a shifted-window sub-block; each sub-block is
//! `x + mix(LN(x))` then `x + MLP(LN(x))`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rstt_tensor::{Float, Graph, Tensor, Var};

use super::mask::{build_shift_mask, cross_relative_index, self_relative_index};
use super::mha::{multi_head_attention, multi_head_attention_probs, AttnVars, KvMode};
use super::window::{cyclic_shift, dims4, window_partition, window_partition_frames, window_reverse, window_reverse_frames};
use crate::config::ModelConfig;
use crate::error::{config_err, dim_err, Result};
use crate::params::ParamId;

#[derive(Clone, Copy, Debug)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct NormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct AttnIds {
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub o: LinearIds,
    /// Relative position bias, `[rows, heads]`.
    pub table: ParamId,
}

/// The token mixer of a sub-block.
#[derive(Clone, Copy, Debug)]
pub enum MixerIds {
    Attention(AttnIds),
    /// `out(proj([q, pool(dict)]))`, proj: 2C -> C.
    Concat { proj: LinearIds, out: LinearIds },
    /// `out(q + proj(pool(dict)))`, proj: C -> C.
    Add { proj: LinearIds, out: LinearIds },
}

#[derive(Clone, Copy, Debug)]
pub struct SubBlockIds {
    pub norm1: NormIds,
    /// Dictionary normalization; decoder only.
    pub norm_kv: Option<NormIds>,
    pub mixer: MixerIds,
    pub norm2: NormIds,
    pub fc1: LinearIds,
    pub fc2: LinearIds,
    pub shifted: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockIds {
    pub regular: SubBlockIds,
    pub shifted: SubBlockIds,
}

const LN_EPS: f64 = 1e-5;

/// Everything a block needs while running on one graph: bound parameters,
/// the configuration, and caches of masks and index tables.
pub struct Ctx<'a, T> {
    pub g: &'a Graph<T>,
    pub vars: &'a [Var<T>],
    pub cfg: &'a ModelConfig,
    pub kv_mode: KvMode,
    masks: RefCell<HashMap<(usize, usize, usize, usize), Var<T>>>,
    indices: RefCell<HashMap<Vec<isize>, Arc<Vec<usize>>>>,
    capture: Option<(usize, usize)>,
    captured: RefCell<Option<Tensor<T>>>,
}

impl<'a, T: Float> Ctx<'a, T> {
    pub fn new(g: &'a Graph<T>, vars: &'a [Var<T>], cfg: &'a ModelConfig) -> Self {
        Ctx {
            g,
            vars,
            cfg,
            kv_mode: KvMode::Shared,
            masks: RefCell::default(),
            indices: RefCell::default(),
            capture: None,
            captured: RefCell::default(),
        }
    }

    pub fn with_kv_mode(mut self, mode: KvMode) -> Self {
        self.kv_mode = mode;
        self
    }

    /// Record the attention weights of the regular sub-block of decoder
    /// `(stage, block)`.
    pub fn with_capture(mut self, stage: usize, block: usize) -> Self {
        self.capture = Some((stage, block));
        self
    }

    pub(crate) fn wants_capture(&self, stage: usize, block: usize) -> bool {
        self.capture == Some((stage, block))
    }

    /// Attention weights recorded by [`Ctx::with_capture`],
    /// `[frames, windows, heads, M*M, N*M*M]`.
    pub fn take_captured(&self) -> Option<Tensor<T>> {
        self.captured.borrow_mut().take()
    }

    pub fn var(&self, id: ParamId) -> &'a Var<T> {
        &self.vars[id.index()]
    }

    fn attn_vars(&self, a: &AttnIds) -> AttnVars<'a, T> {
        AttnVars {
            wq: self.var(a.q.w),
            bq: self.var(a.q.b),
            wk: self.var(a.k.w),
            bk: self.var(a.k.b),
            wv: self.var(a.v.w),
            bv: self.var(a.v.b),
            wo: self.var(a.o.w),
            bo: self.var(a.o.b),
        }
    }

    pub fn linear(&self, x: &Var<T>, l: &LinearIds) -> Result<Var<T>> {
        Ok(self.g.linear(x, self.var(l.w), Some(self.var(l.b)))?)
    }

    pub fn norm(&self, x: &Var<T>, n: &NormIds) -> Result<Var<T>> {
        Ok(self.g.layer_norm(x, self.var(n.gamma), self.var(n.beta), LN_EPS)?)
    }

    /// Cached `[windows, 1, q_frames*M*M, k_frames*M*M]` shift mask.
    fn mask(&self, h: usize, w: usize, q_frames: usize, k_frames: usize) -> Result<Var<T>> {
        let key = (h, w, q_frames, k_frames);
        if let Some(m) = self.masks.borrow().get(&key) {
            return Ok(m.clone());
        }
        let s = self.cfg.shift();
        let mask = build_shift_mask(h, w, self.cfg.window, s, s)?;
        let v = self.g.constant(mask.to_tensor(q_frames, k_frames));
        self.masks.borrow_mut().insert(key, v.clone());
        Ok(v)
    }

    fn index(&self, key: Vec<isize>, build: impl FnOnce() -> Result<Vec<usize>>) -> Result<Arc<Vec<usize>>> {
        if let Some(i) = self.indices.borrow().get(&key) {
            return Ok(i.clone());
        }
        let idx = Arc::new(build()?);
        self.indices.borrow_mut().insert(key, idx.clone());
        Ok(idx)
    }

    /// Self-attention bias `[heads, L, L]` for windows of `frames` frames.
    fn self_bias(&self, table: ParamId, frames: usize) -> Result<Var<T>> {
        let (n, m, h) = (self.cfg.frames, self.cfg.window, self.cfg.heads);
        let idx = self.index(vec![-1, frames as isize], || Ok(self_relative_index(frames, n, m)))?;
        let l = frames * m * m;
        let b = self.g.gather_rows(self.var(table), idx)?;
        let b = self.g.reshape(&b, &[l, l, h])?;
        Ok(self.g.permute(&b, &[2, 0, 1])?)
    }

    /// Cross-attention bias `[F, 1, heads, M*M, N*M*M]`.
    fn cross_bias(&self, table: ParamId, offsets: &[isize]) -> Result<Var<T>> {
        let (n, m, h) = (self.cfg.frames, self.cfg.window, self.cfg.heads);
        let idx = self.index(offsets.to_vec(), || cross_relative_index(offsets, n, m))?;
        let f = offsets.len();
        let b = self.g.gather_rows(self.var(table), idx)?;
        let b = self.g.reshape(&b, &[f, m * m, n * m * m, h])?;
        let b = self.g.permute(&b, &[0, 3, 1, 2])?;
        Ok(self.g.reshape(&b, &[f, 1, h, m * m, n * m * m])?)
    }

    fn mlp_residual(&self, x: &Var<T>, ids: &SubBlockIds) -> Result<Var<T>> {
        let y = self.norm(x, &ids.norm2)?;
        let y = self.g.mlp(&y, self.var(ids.fc1.w), self.var(ids.fc1.b), self.var(ids.fc2.w), self.var(ids.fc2.b))?;
        Ok(self.g.add(x, &y)?)
    }

    fn shift_amount(&self, ids: &SubBlockIds) -> isize {
        if ids.shifted {
            self.cfg.shift() as isize
        } else {
            0
        }
    }
}

/// One encoder sub-block on `[N, H, W, C]` tokens.
pub fn encoder_sub_block<T: Float>(cx: &Ctx<'_, T>, x: &Var<T>, ids: &SubBlockIds) -> Result<Var<T>> {
    let g = cx.g;
    let [n, h, w, _] = dims4("encoder_block", x)?;
    let m = cx.cfg.window;
    let MixerIds::Attention(attn) = &ids.mixer else {
        return Err(config_err("encoder sub-blocks mix tokens with self-attention"));
    };
    let s = cx.shift_amount(ids);
    let y = cx.norm(x, &ids.norm1)?;
    let y = cyclic_shift(g, &y, -s, -s)?;
    let frames = if cx.cfg.temporal_windows { n } else { 1 };
    let win = if cx.cfg.temporal_windows { window_partition(g, &y, m)? } else { window_partition_frames(g, &y, m)? };
    let bias = cx.self_bias(attn.table, frames)?;
    let mask = if s != 0 { Some(cx.mask(h, w, frames, frames)?) } else { None };
    let out = multi_head_attention(g, &win, &win, cx.attn_vars(attn), cx.cfg.heads, Some(&bias), mask.as_ref())?;
    let out = if cx.cfg.temporal_windows { window_reverse(g, &out, m, n, h, w)? } else { window_reverse_frames(g, &out, m, h, w)? };
    let out = cyclic_shift(g, &out, s, s)?;
    let x = g.add(x, &out)?;
    cx.mlp_residual(&x, ids)
}

/// Regular then shifted encoder sub-block; shape preserved.
pub fn swin_encoder_block<T: Float>(cx: &Ctx<'_, T>, x: &Var<T>, ids: &BlockIds) -> Result<Var<T>> {
    let x = encoder_sub_block(cx, x, &ids.regular)?;
    encoder_sub_block(cx, &x, &ids.shifted)
}

/// Windowed cross-attention of `F` query frames against an `N`-frame
/// dictionary, both already normalized. `offsets` are the query frames'
/// temporal positions in half input-frame steps.
fn cross_attention<T: Float>(
    cx: &Ctx<'_, T>,
    q: &Var<T>,
    dict: &Var<T>,
    attn: &AttnIds,
    offsets: &[isize],
    shift: isize,
    capture: bool,
) -> Result<Var<T>> {
    let g = cx.g;
    let [f, h, w, c] = dims4("decoder_block", q)?;
    let n = dict.shape()[0];
    let m = cx.cfg.window;
    let q = cyclic_shift(g, q, -shift, -shift)?;
    let dict = cyclic_shift(g, dict, -shift, -shift)?;
    let qw = window_partition_frames(g, &q, m)?;
    let kw = window_partition(g, &dict, m)?;
    let nw = kw.shape()[0];
    let kw = g.reshape(&kw, &[1, nw, n * m * m, c])?;
    let bias = cx.cross_bias(attn.table, offsets)?;
    let mask = if shift != 0 { Some(cx.mask(h, w, 1, n)?) } else { None };
    let heads = cx.cfg.heads;
    let vars = cx.attn_vars(attn);
    let out = match cx.kv_mode {
        KvMode::Shared => {
            let (out, probs) = multi_head_attention_probs(g, &qw, &kw, vars, heads, Some(&bias), mask.as_ref())?;
            if capture {
                *cx.captured.borrow_mut() = Some(probs.value().clone());
            }
            out
        }
        KvMode::PerQuery => {
            let mut outs = Vec::with_capacity(f);
            let mut probs = Vec::with_capacity(f);
            for i in 0..f {
                let qi = g.narrow(&qw, 0, i, 1)?;
                let bi = g.narrow(&bias, 0, i, 1)?;
                let (o, p) = multi_head_attention_probs(g, &qi, &kw, vars, heads, Some(&bi), mask.as_ref())?;
                outs.push(o);
                probs.push(p);
            }
            if capture {
                let refs: Vec<&Var<T>> = probs.iter().collect();
                *cx.captured.borrow_mut() = Some(g.concat(&refs, 0)?.into_value());
            }
            let refs: Vec<&Var<T>> = outs.iter().collect();
            g.concat(&refs, 0)?
        }
    };
    let out = window_reverse_frames(g, &out, m, h, w)?;
    cyclic_shift(g, &out, shift, shift)
}

/// Combine normalized query tokens `q` `[F, H, W, C]` with a normalized
/// dictionary `[N, H, W, C]`, before the sub-block's exit projection (for
/// the pooled modes) or including it (attention).
pub fn fuse_variant<T: Float>(
    cx: &Ctx<'_, T>,
    q: &Var<T>,
    dict: &Var<T>,
    mixer: &MixerIds,
    offsets: &[isize],
    shift: isize,
    capture: bool,
) -> Result<Var<T>> {
    let g = cx.g;
    match mixer {
        MixerIds::Attention(attn) => cross_attention(cx, q, dict, attn, offsets, shift, capture),
        MixerIds::Concat { proj, .. } => {
            let pooled = g.mean_axis(dict, 0)?;
            let pooled = g.broadcast_to(&pooled, q.shape())?;
            let cat = g.concat(&[q, &pooled], 3)?;
            cx.linear(&cat, proj)
        }
        MixerIds::Add { proj, .. } => {
            let pooled = g.mean_axis(dict, 0)?;
            let p = cx.linear(&pooled, proj)?;
            Ok(g.add(q, &p)?)
        }
    }
}

/// One decoder sub-block: query frames `[F, H, W, C]` attend to the
/// dictionary `[N, H, W, C]` of the same stage.
pub fn decoder_sub_block<T: Float>(
    cx: &Ctx<'_, T>,
    q: &Var<T>,
    dict: &Var<T>,
    ids: &SubBlockIds,
    offsets: &[isize],
    capture: bool,
) -> Result<Var<T>> {
    let g = cx.g;
    let [f, h, w, c] = dims4("decoder_block", q)?;
    let [_, hd, wd, cd] = dims4("decoder_block", dict)?;
    if (h, w, c) != (hd, wd, cd) {
        return Err(dim_err("decoder_block", format!("query {:?} and dictionary {:?} differ in size", q.shape(), dict.shape())));
    }
    if offsets.len() != f {
        return Err(dim_err("decoder_block", format!("{} temporal offsets for {f} query frames", offsets.len())));
    }
    let norm_kv = ids.norm_kv.as_ref().ok_or_else(|| config_err("decoder sub-block without a dictionary norm"))?;
    let yq = cx.norm(q, &ids.norm1)?;
    let yk = cx.norm(dict, norm_kv)?;
    let mixed = fuse_variant(cx, &yq, &yk, &ids.mixer, offsets, cx.shift_amount(ids), capture)?;
    let mixed = match &ids.mixer {
        MixerIds::Attention(_) => mixed,
        MixerIds::Concat { out, .. } | MixerIds::Add { out, .. } => cx.linear(&mixed, out)?,
    };
    let x = g.add(q, &mixed)?;
    cx.mlp_residual(&x, ids)
}

/// Regular then shifted decoder sub-block.
pub fn swin_decoder_block<T: Float>(
    cx: &Ctx<'_, T>,
    q: &Var<T>,
    dict: &Var<T>,
    ids: &BlockIds,
    offsets: &[isize],
    capture: bool,
) -> Result<Var<T>> {
    let x = decoder_sub_block(cx, q, dict, &ids.regular, offsets, capture)?;
    decoder_sub_block(cx, &x, dict, &ids.shifted, offsets, false)
}
