//! Parameter registration, naming, and closed-form size and cost counts.

use rand::Rng;
use rstt_tensor::{Float, Tensor};

use crate::attention::mask::{cross_table_rows, self_table_rows};
use crate::attention::{AttnIds, BlockIds, LinearIds, MixerIds, NormIds, SubBlockIds};
use crate::config::{Fusion, ModelConfig, STAGES};
use crate::error::Result;
use crate::params::{Init, Initializer, ParamId, ParamStore};

/// Channels of the final reconstruction conv: 3 colours times a 4 x 4 shuffle.
pub const RECON_CHANNELS: usize = 48;
pub const SCALE: usize = 4;
const PROJ_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug)]
pub struct ConvIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug)]
pub struct ModelIds {
    pub feat: ConvIds,
    /// `[stage][block]`
    pub enc: Vec<Vec<BlockIds>>,
    /// Stride-2 convs after encoder stages 0, 1, 2.
    pub down: Vec<ConvIds>,
    pub dec: Vec<Vec<BlockIds>>,
    /// `up[k]` brings decoder stage `k + 1` output to stage `k` resolution.
    pub up: Vec<ConvIds>,
    pub res: Vec<(ConvIds, ConvIds)>,
    pub recon: ConvIds,
}

struct Builder<'a, T, R> {
    store: &'a mut ParamStore<T>,
    init: &'a mut Initializer<R>,
    cfg: &'a ModelConfig,
}

impl<T: Float, R: Rng> Builder<'_, T, R> {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> Result<ParamId> {
        let t: Tensor<T> = self.init.make(shape, init);
        self.store.add(name, t)
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, exit: bool) -> Result<ConvIds> {
        let w_init = if exit { Init::Zeros } else { Init::FanIn(cin * k * k) };
        Ok(ConvIds { w: self.add(format!("{name}.w"), &[cout, cin, k, k], w_init)?, b: self.add(format!("{name}.b"), &[cout], Init::Zeros)? })
    }

    fn deconv(&mut self, name: &str, c: usize) -> Result<ConvIds> {
        Ok(ConvIds { w: self.add(format!("{name}.w"), &[c, c, 2, 2], Init::FanIn(c * 4))?, b: self.add(format!("{name}.b"), &[c], Init::Zeros)? })
    }

    fn linear(&mut self, name: &str, i: usize, o: usize, exit: bool) -> Result<LinearIds> {
        let w_init = if exit { Init::Zeros } else { Init::TruncNormal(PROJ_STD) };
        Ok(LinearIds { w: self.add(format!("{name}.w"), &[i, o], w_init)?, b: self.add(format!("{name}.b"), &[o], Init::Zeros)? })
    }

    fn norm(&mut self, name: &str) -> Result<NormIds> {
        let c = self.cfg.channels;
        Ok(NormIds { gamma: self.add(format!("{name}.gamma"), &[c], Init::Ones)?, beta: self.add(format!("{name}.beta"), &[c], Init::Zeros)? })
    }

    fn attention(&mut self, name: &str, table_rows: usize) -> Result<AttnIds> {
        let c = self.cfg.channels;
        Ok(AttnIds {
            q: self.linear(&format!("{name}.q"), c, c, false)?,
            k: self.linear(&format!("{name}.k"), c, c, false)?,
            v: self.linear(&format!("{name}.v"), c, c, false)?,
            o: self.linear(&format!("{name}.o"), c, c, true)?,
            table: self.add(format!("{name}.bias_table"), &[table_rows, self.cfg.heads], Init::TruncNormal(PROJ_STD))?,
        })
    }

    fn sub_block(&mut self, name: &str, decoder: bool, shifted: bool) -> Result<SubBlockIds> {
        let (c, n, m) = (self.cfg.channels, self.cfg.frames, self.cfg.window);
        let hidden = c * self.cfg.mlp_ratio;
        let norm1 = self.norm(&format!("{name}.norm1"))?;
        let norm_kv = if decoder { Some(self.norm(&format!("{name}.norm_kv"))?) } else { None };
        let mixer = match (decoder, self.cfg.fusion) {
            (false, _) => MixerIds::Attention(self.attention(&format!("{name}.attn"), self_table_rows(n, m))?),
            (true, Fusion::Mca) => MixerIds::Attention(self.attention(&format!("{name}.attn"), cross_table_rows(n, m))?),
            (true, Fusion::Concat) => MixerIds::Concat {
                proj: self.linear(&format!("{name}.fuse.proj"), 2 * c, c, false)?,
                out: self.linear(&format!("{name}.fuse.out"), c, c, true)?,
            },
            (true, Fusion::Add) => MixerIds::Add {
                proj: self.linear(&format!("{name}.fuse.proj"), c, c, false)?,
                out: self.linear(&format!("{name}.fuse.out"), c, c, true)?,
            },
        };
        Ok(SubBlockIds {
            norm1,
            norm_kv,
            mixer,
            norm2: self.norm(&format!("{name}.norm2"))?,
            fc1: self.linear(&format!("{name}.mlp.fc1"), c, hidden, false)?,
            fc2: self.linear(&format!("{name}.mlp.fc2"), hidden, c, true)?,
            shifted,
        })
    }

    fn stage(&mut self, prefix: &str, stage: usize, decoder: bool) -> Result<Vec<BlockIds>> {
        (0..self.cfg.blocks_per_stage)
            .map(|b| {
                let name = format!("{prefix}{stage}.block{b}");
                Ok(BlockIds {
                    regular: self.sub_block(&format!("{name}.regular"), decoder, false)?,
                    shifted: self.sub_block(&format!("{name}.shifted"), decoder, true)?,
                })
            })
            .collect()
    }
}

/// Register every model tensor in a fixed order.
pub fn register<T: Float, R: Rng>(cfg: &ModelConfig, store: &mut ParamStore<T>, init: &mut Initializer<R>) -> Result<ModelIds> {
    let c = cfg.channels;
    let mut b = Builder { store, init, cfg };
    let feat = b.conv("feat", 3, c, 3, false)?;
    let mut enc = Vec::with_capacity(STAGES);
    let mut down = Vec::with_capacity(STAGES - 1);
    for s in 0..STAGES {
        enc.push(b.stage("enc", s, false)?);
        if s + 1 < STAGES {
            down.push(b.conv(&format!("down{s}"), c, c, 3, false)?);
        }
    }
    let mut dec = Vec::with_capacity(STAGES);
    for s in 0..STAGES {
        dec.push(b.stage("dec", s, true)?);
    }
    let up = (0..STAGES - 1).map(|k| b.deconv(&format!("up{k}"), c)).collect::<Result<Vec<_>>>()?;
    let res_count = if cfg.recon_block { cfg.recon_blocks } else { 0 };
    let res = (0..res_count)
        .map(|i| Ok((b.conv(&format!("recon.res{i}.conv1"), c, c, 3, false)?, b.conv(&format!("recon.res{i}.conv2"), c, c, 3, true)?)))
        .collect::<Result<Vec<_>>>()?;
    let recon = b.conv("recon.conv", c, RECON_CHANNELS, 3, true)?;
    Ok(ModelIds { feat, enc, down, dec, up, res, recon })
}

fn conv_size(cin: usize, cout: usize, k: usize) -> usize {
    cin * cout * k * k + cout
}

fn linear_size(i: usize, o: usize) -> usize {
    i * o + o
}

/// Scalars in the optional residual reconstruction blocks.
pub fn residual_block_params(cfg: &ModelConfig) -> usize {
    cfg.recon_blocks * 2 * conv_size(cfg.channels, cfg.channels, 3)
}

/// Closed-form number of scalar weights.
pub fn count_params(cfg: &ModelConfig) -> usize {
    let (c, n, m, h) = (cfg.channels, cfg.frames, cfg.window, cfg.heads);
    let norm = 2 * c;
    let mlp = linear_size(c, cfg.mlp_ratio * c) + linear_size(cfg.mlp_ratio * c, c);
    let attn = |rows: usize| 4 * linear_size(c, c) + rows * h;
    let enc_sub = 2 * norm + attn(self_table_rows(n, m)) + mlp;
    let mixer = match cfg.fusion {
        Fusion::Mca => attn(cross_table_rows(n, m)),
        Fusion::Concat => linear_size(2 * c, c) + linear_size(c, c),
        Fusion::Add => 2 * linear_size(c, c),
    };
    let dec_sub = 3 * norm + mixer + mlp;
    let blocks = STAGES * cfg.blocks_per_stage * 2;
    let recon = if cfg.recon_block { residual_block_params(cfg) } else { 0 };
    conv_size(3, c, 3)
        + blocks * (enc_sub + dec_sub)
        + (STAGES - 1) * (conv_size(c, c, 3) + conv_size(c, c, 2))
        + recon
        + conv_size(c, RECON_CHANNELS, 3)
}

/// Multiply-accumulates of one forward pass on `h x w` input frames, after
/// padding. Elementwise work is not counted.
pub fn forward_macs(cfg: &ModelConfig, h: usize, w: usize) -> u64 {
    let (c, n, m) = (cfg.channels as u64, cfg.frames as u64, cfg.window as u64);
    let hidden = c * cfg.mlp_ratio as u64;
    let (hp, wp) = (cfg.padded(h) as u64, cfg.padded(w) as u64);
    let bps = cfg.blocks_per_stage as u64;
    let q_frames = 7u64;
    let mut macs = n * hp * wp * 27 * c;
    for s in 0..STAGES as u32 {
        let px = (hp >> s) * (wp >> s);
        let enc_tokens = n * px;
        let window_len = if cfg.temporal_windows { n * m * m } else { m * m };
        let enc_sub = enc_tokens * (4 * c * c + 2 * c * hidden + 2 * window_len * c);
        let dec_tokens = q_frames * px;
        let dec_mix = match cfg.fusion {
            Fusion::Mca => dec_tokens * (2 * c * c + 2 * n * m * m * c) + enc_tokens * 2 * c * c,
            Fusion::Concat => dec_tokens * 3 * c * c,
            Fusion::Add => dec_tokens * 2 * c * c,
        };
        let dec_sub = dec_mix + dec_tokens * 2 * c * hidden;
        macs += bps * 2 * (enc_sub + dec_sub);
        if s < STAGES as u32 - 1 {
            macs += n * (px / 4) * 9 * c * c + q_frames * (px / 4) * 4 * c * c;
        }
    }
    let px = hp * wp;
    let res = if cfg.recon_block { cfg.recon_blocks as u64 * 2 } else { 0 };
    macs + q_frames * px * (res * 9 * c * c + 9 * c * RECON_CHANNELS as u64)
}
