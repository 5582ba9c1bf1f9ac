//! The RSTT model: feature extraction, a four-stage Swin encoder whose
//! outputs serve as dictionaries, a seven-frame query builder, a four-stage
//! cross-attention decoder, and pixel-shuffle reconstruction on top of a
//! trilinear warm start.

pub mod frames;
pub mod layout;
pub mod query;

use rstt_tensor::ops::resample::{reflect_pad, trilinear_resize_tensor};
use rstt_tensor::{seeded_rng, Float, Graph, Tensor, Var};

use crate::attention::{swin_decoder_block, swin_encoder_block, Ctx, KvMode};
use crate::config::{ModelConfig, STAGES};
use crate::error::{config_err, dim_err, Result, RsttError};
use crate::params::{InitScheme, Initializer, ParamStore};
pub use frames::{ClipSeptet, FrameQuad};
pub use layout::{count_params, forward_macs, residual_block_params, ConvIds, ModelIds, RECON_CHANNELS, SCALE};
pub use query::{build_query, build_query_arbitrary, build_query_fractions, QueryPlan};

/// Per-stage encoder outputs `T0..T3`, each `[4, H / 2^k, W / 2^k, C]`.
/// `T3` doubles as `E3`, the source of the decoder queries.
pub struct FeatureStages<T> {
    pub t: Vec<Var<T>>,
}

impl<T: Float> FeatureStages<T> {
    pub fn e3(&self) -> &Var<T> {
        &self.t[STAGES - 1]
    }
}

/// Options of one forward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    pub kv_mode: KvMode,
    /// Record the regular sub-block attention of the last block of this
    /// decoder stage.
    pub capture_stage: Option<usize>,
}

/// Cross-attention weights of one decoder block,
/// `[frames, windows, heads, M*M, N*M*M]`. Row `i` of map `(f, w, h)` is the
/// distribution of query pixel `i` over the dictionary tokens of window `w`.
#[derive(Clone, Debug)]
pub struct AttentionDump {
    pub weights: Tensor<f64>,
    pub stage: usize,
    pub padded_height: usize,
    pub padded_width: usize,
}

impl AttentionDump {
    pub fn frames(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn windows(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn heads(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn map_count(&self) -> usize {
        self.frames() * self.windows() * self.heads()
    }

    /// Map `(frame, window, head)` as `[M*M, N*M*M]` row-major values.
    pub fn map(&self, frame: usize, window: usize, head: usize) -> &[f64] {
        let s = self.weights.shape();
        let len = s[3] * s[4];
        let i = ((frame * s[1] + window) * s[2] + head) * len;
        &self.weights.data()[i..i + len]
    }

    pub fn map_shape(&self) -> (usize, usize) {
        let s = self.weights.shape();
        (s[3], s[4])
    }
}

#[derive(Clone, Debug)]
pub struct Rstt<T = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
    ids: ModelIds,
}

fn to_tokens<T: Float>(g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
    Ok(g.permute(x, &[0, 2, 3, 1])?)
}

fn to_channels<T: Float>(g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
    Ok(g.permute(x, &[0, 3, 1, 2])?)
}

impl<T: Float> Rstt<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::with_init(config, seed, InitScheme::Standard)
    }

    pub fn with_init(config: ModelConfig, seed: u64, scheme: InitScheme) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Initializer { rng: seeded_rng(seed), scheme };
        let ids = layout::register(&config, &mut params, &mut init)?;
        Ok(Rstt { config, params, ids })
    }

    /// A model whose weights are all taken from `params`, which must hold
    /// exactly the tensors this configuration declares.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(config_err(format!("expected {} tensors, got {}", model.params.len(), params.len())));
        }
        for (name, t) in params.iter() {
            model.params.set(name, t.clone())?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn ids(&self) -> &ModelIds {
        &self.ids
    }

    /// Scalar weights, counted tensor by tensor.
    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    pub fn cast<U: Float>(&self) -> Rstt<U> {
        Rstt { config: self.config.clone(), params: self.params.cast(), ids: self.ids.clone() }
    }

    /// Zero the final reconstruction conv, so the output is the warm start.
    pub fn zero_reconstruction(&mut self) {
        for id in [self.ids.recon.w, self.ids.recon.b] {
            let t = self.params.get_mut(id);
            *t = Tensor::zeros(t.shape());
        }
    }

    fn conv(&self, cx: &Ctx<'_, T>, x: &Var<T>, ids: &ConvIds, stride: usize, pad: usize) -> Result<Var<T>> {
        Ok(cx.g.conv2d(x, cx.var(ids.w), Some(cx.var(ids.b)), stride, pad)?)
    }

    /// Shared 3x3 conv on each padded frame: `[4, 3, H, W] -> [4, H, W, C]`.
    pub fn extract_features(&self, cx: &Ctx<'_, T>, frames: &Var<T>) -> Result<Var<T>> {
        let f = self.conv(cx, frames, &self.ids.feat, 1, 1)?;
        to_tokens(cx.g, &f)
    }

    /// `T0 = Swin(F)`, `T_k = Swin(down(T_{k-1}))`.
    pub fn encode(&self, cx: &Ctx<'_, T>, features: &Var<T>) -> Result<FeatureStages<T>> {
        let g = cx.g;
        let mut t = Vec::with_capacity(STAGES);
        let mut x = features.clone();
        for s in 0..STAGES {
            for block in &self.ids.enc[s] {
                x = swin_encoder_block(cx, &x, block)?;
            }
            t.push(x.clone());
            if s + 1 < STAGES {
                let y = self.conv(cx, &to_channels(g, &x)?, &self.ids.down[s], 2, 1)?;
                x = to_tokens(g, &y)?;
            }
        }
        Ok(FeatureStages { t })
    }

    /// Decoder stages 3 down to 0, each querying its encoder dictionary and,
    /// except the last, doubling resolution. `offsets` are the query frames'
    /// temporal positions in half input-frame steps.
    pub fn decode(&self, cx: &Ctx<'_, T>, stages: &FeatureStages<T>, query: &Var<T>, offsets: &[isize]) -> Result<Var<T>> {
        let g = cx.g;
        let mut x = query.clone();
        for s in (0..STAGES).rev() {
            let last = self.ids.dec[s].len() - 1;
            for (b, block) in self.ids.dec[s].iter().enumerate() {
                x = swin_decoder_block(cx, &x, &stages.t[s], block, offsets, b == last && cx.wants_capture(s, b))?;
            }
            if s > 0 {
                let y = g.conv_transpose2d(&to_channels(g, &x)?, cx.var(self.ids.up[s - 1].w), Some(cx.var(self.ids.up[s - 1].b)), 2)?;
                x = to_tokens(g, &y)?;
            }
        }
        Ok(x)
    }

    /// `[F, H, W, C] -> [F, 3, 4H, 4W]` residual frames.
    pub fn reconstruct(&self, cx: &Ctx<'_, T>, d0: &Var<T>) -> Result<Var<T>> {
        let g = cx.g;
        let mut x = to_channels(g, d0)?;
        for (c1, c2) in &self.ids.res {
            let y = self.conv(cx, &x, c1, 1, 1)?;
            let y = g.relu(&y)?;
            let y = self.conv(cx, &y, c2, 1, 1)?;
            x = g.add(&x, &y)?;
        }
        let y = self.conv(cx, &x, &self.ids.recon, 1, 1)?;
        Ok(g.pixel_shuffle(&y, SCALE)?)
    }

    /// Trilinear upsampling of the inputs to the query times and 4x size.
    pub fn warm_start(input: &Tensor<T>, plan: &QueryPlan) -> Result<Tensor<T>> {
        let [_, _, h, w] = quad_dims(input)?;
        if *plan == QueryPlan::standard() {
            return Ok(trilinear_resize_tensor(input, 7, SCALE * h, SCALE * w)?);
        }
        let up = trilinear_resize_tensor(input, 4, SCALE * h, SCALE * w)?;
        let g = Graph::inference();
        Ok(g.frame_mix(&g.constant(up), &plan.rows)?.into_value())
    }

    /// The full mapping on one graph, `[4, 3, H, W] -> [F, 3, 4H, 4W]`.
    pub fn forward_var(&self, g: &Graph<T>, vars: &[Var<T>], input: &Tensor<T>) -> Result<Var<T>> {
        self.forward_plan_var(g, vars, input, &QueryPlan::standard(), ForwardOptions::default()).map(|(v, _)| v)
    }

    /// As [`Rstt::forward_var`] with explicit query times and options; also
    /// returns captured attention weights when requested.
    pub fn forward_plan_var(
        &self,
        g: &Graph<T>,
        vars: &[Var<T>],
        input: &Tensor<T>,
        plan: &QueryPlan,
        opts: ForwardOptions,
    ) -> Result<(Var<T>, Option<Tensor<T>>)> {
        if vars.len() != self.params.len() {
            return Err(config_err(format!("{} bound variables for {} parameters", vars.len(), self.params.len())));
        }
        let [_, _, h, w] = quad_dims(input)?;
        let (hp, wp) = (self.config.padded(h), self.config.padded(w));
        let padded = reflect_pad(input, hp - h, wp - w)?;
        let mut cx = Ctx::new(g, vars, &self.config).with_kv_mode(opts.kv_mode);
        if let Some(s) = opts.capture_stage {
            if s >= STAGES {
                return Err(config_err(format!("decoder stage {s} does not exist; stages are 0..{STAGES}")));
            }
            cx = cx.with_capture(s, self.config.blocks_per_stage - 1);
        }
        let feats = self.extract_features(&cx, &g.constant(padded))?;
        let stages = self.encode(&cx, &feats)?;
        let q = plan.apply(g, stages.e3())?;
        let d0 = self.decode(&cx, &stages, &q, &plan.offsets)?;
        let mut residual = self.reconstruct(&cx, &d0)?;
        if hp != h {
            residual = g.narrow(&residual, 2, 0, SCALE * h)?;
        }
        if wp != w {
            residual = g.narrow(&residual, 3, 0, SCALE * w)?;
        }
        let out = g.add(&g.constant(Self::warm_start(input, plan)?), &residual)?;
        Ok((out, cx.take_captured()))
    }

    /// Inference on one quad.
    pub fn forward(&self, quad: &FrameQuad<T>) -> Result<ClipSeptet<T>> {
        self.forward_with(quad, ForwardOptions::default())
    }

    pub fn forward_with(&self, quad: &FrameQuad<T>, opts: ForwardOptions) -> Result<ClipSeptet<T>> {
        let out = self.infer(quad.tensor(), &QueryPlan::standard(), opts)?.0;
        ClipSeptet::new(out)
    }

    /// Inference with one output frame per query of `plan`.
    pub fn forward_plan(&self, quad: &FrameQuad<T>, plan: &QueryPlan) -> Result<Tensor<T>> {
        Ok(self.infer(quad.tensor(), plan, ForwardOptions::default())?.0)
    }

    fn infer(&self, input: &Tensor<T>, plan: &QueryPlan, opts: ForwardOptions) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let g = Graph::inference();
        let vars = self.params.bind(&g);
        let (out, captured) = self.forward_plan_var(&g, &vars, input, plan, opts)?;
        let out = out.into_value();
        if !out.is_finite() {
            return Err(RsttError::NonFinite { what: "forward output".into() });
        }
        Ok((out, captured))
    }

    /// Cross-attention weights of the last block of decoder `stage`
    /// (0 is the full-resolution stage), regular windows.
    pub fn dump_attention(&self, quad: &FrameQuad<T>, stage: usize) -> Result<AttentionDump> {
        let opts = ForwardOptions { capture_stage: Some(stage), ..Default::default() };
        let (_, captured) = self.infer(quad.tensor(), &QueryPlan::standard(), opts)?;
        let weights = captured.ok_or_else(|| config_err("attention maps exist only with fusion mode mca"))?;
        Ok(AttentionDump {
            weights: weights.cast(),
            stage,
            padded_height: self.config.padded(quad.height()) >> stage,
            padded_width: self.config.padded(quad.width()) >> stage,
        })
    }
}

fn quad_dims<T: Float>(x: &Tensor<T>) -> Result<[usize; 4]> {
    match *x.shape() {
        [4, 3, h, w] => Ok([4, 3, h, w]),
        ref s => Err(dim_err("forward", format!("expected [4, 3, H, W] input, got {s:?}"))),
    }
}
