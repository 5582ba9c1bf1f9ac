use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result, RsttError};

/// Number of encoder (and decoder) stages.
pub const STAGES: usize = 4;

/// How a decoder block combines its query with the encoder dictionary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Windowed multi-head cross-attention.
    Mca,
    /// Concatenate the query with the frame-averaged dictionary, then project back to C.
    Concat,
    /// Add a projection of the frame-averaged dictionary to the query.
    Add,
}

impl Fusion {
    pub const ALL: [Fusion; 3] = [Fusion::Mca, Fusion::Concat, Fusion::Add];

    pub fn name(self) -> &'static str {
        match self {
            Fusion::Mca => "mca",
            Fusion::Concat => "concat",
            Fusion::Add => "add",
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Fusion {
    type Err = RsttError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mca" => Ok(Fusion::Mca),
            "concat" => Ok(Fusion::Concat),
            "add" => Ok(Fusion::Add),
            other => Err(config_err(format!("unknown fusion mode {other:?} (expected mca, concat or add)"))),
        }
    }
}

/// Model size presets: 2, 3 or 4 Swin blocks per stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    S,
    M,
    L,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::S, Preset::M, Preset::L];

    pub fn blocks_per_stage(self) -> usize {
        match self {
            Preset::S => 2,
            Preset::M => 3,
            Preset::L => 4,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Preset {
    type Err = RsttError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S" | "s" => Ok(Preset::S),
            "M" | "m" => Ok(Preset::M),
            "L" | "l" => Ok(Preset::L),
            other => Err(config_err(format!("unknown preset {other:?} (expected S, M or L)"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Feature width C, constant across stages.
    pub channels: usize,
    /// Window side M in tokens.
    pub window: usize,
    /// Input frames N.
    pub frames: usize,
    /// Swin blocks per stage; each block is a regular plus a shifted sub-block.
    pub blocks_per_stage: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub fusion: Fusion,
    /// Insert residual blocks before the reconstruction conv.
    pub recon_block: bool,
    pub recon_blocks: usize,
    /// Inputs are reflect-padded so height and width are multiples of this.
    pub pad_multiple: usize,
    /// Encoder windows span all input frames; otherwise each frame is windowed alone.
    pub temporal_windows: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::preset(Preset::S)
    }
}

impl ModelConfig {
    pub fn preset(p: Preset) -> Self {
        ModelConfig {
            channels: 96,
            window: 4,
            frames: 4,
            blocks_per_stage: p.blocks_per_stage(),
            heads: 2,
            mlp_ratio: 4,
            fusion: Fusion::Mca,
            recon_block: false,
            recon_blocks: 10,
            pad_multiple: 32,
            temporal_windows: true,
        }
    }

    /// Small configuration for gradient checks and fast tests: C=8, M=2, one block.
    pub fn tiny() -> Self {
        ModelConfig { channels: 8, window: 2, blocks_per_stage: 1, pad_multiple: 16, ..ModelConfig::preset(Preset::S) }
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// Spatial shift of the shifted sub-blocks.
    pub fn shift(&self) -> usize {
        self.window / 2
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(config_err(msg));
        if self.channels == 0 || self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return fail(format!("channels {} must be a positive multiple of heads {}", self.channels, self.heads));
        }
        if self.frames != 4 {
            return fail(format!("the model takes exactly 4 input frames, got {}", self.frames));
        }
        if self.blocks_per_stage == 0 {
            return fail("blocks_per_stage must be at least 1".into());
        }
        if self.window == 0 || self.mlp_ratio == 0 {
            return fail("window and mlp_ratio must be positive".into());
        }
        let coarsest = 1 << (STAGES - 1);
        if self.pad_multiple == 0 || !self.pad_multiple.is_multiple_of(coarsest * self.window) {
            return fail(format!(
                "pad_multiple {} must be a multiple of {} so every stage tiles into {}x{} windows",
                self.pad_multiple,
                coarsest * self.window,
                self.window,
                self.window
            ));
        }
        if self.recon_block && self.recon_blocks == 0 {
            return fail("recon_block is set but recon_blocks is 0".into());
        }
        Ok(())
    }

    /// Smallest padded size that holds `len` pixels.
    pub fn padded(&self, len: usize) -> usize {
        len.div_ceil(self.pad_multiple) * self.pad_multiple
    }
}
