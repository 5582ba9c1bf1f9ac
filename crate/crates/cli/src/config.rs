use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rstt::{Fusion, ModelConfig, Preset, TrainConfig};

use crate::error::{CliError, CliResult};

/// Architecture fields that replace the preset's values when set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOverrides {
    pub channels: Option<usize>,
    pub window: Option<usize>,
    pub blocks_per_stage: Option<usize>,
    pub heads: Option<usize>,
    pub mlp_ratio: Option<usize>,
    pub recon_blocks: Option<usize>,
    pub pad_multiple: Option<usize>,
    pub temporal_windows: Option<bool>,
}

/// Synthetic training clips, sized in high-resolution pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub height: usize,
    pub width: usize,
    /// Train on one clip instead of a fresh clip per draw.
    pub fixed: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { height: 64, width: 64, fixed: false }
    }
}

/// Benchmark input size is in low-resolution pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub height: usize,
    pub width: usize,
    pub reps: usize,
    pub warmup: usize,
    pub presets: Vec<Preset>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { height: 96, width: 96, reps: 20, warmup: 1, presets: Preset::ALL.to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub preset: Preset,
    pub fusion: Fusion,
    pub recon: bool,
    /// Seeds model initialization and synthetic data.
    pub seed: u64,
    pub model: ModelOverrides,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub bench: BenchConfig,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Decoder stage whose attention `attn-dump` exports; 0 is full resolution.
    pub attn_stage: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: Preset::S,
            fusion: Fusion::Mca,
            recon: false,
            seed: 0,
            model: ModelOverrides::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            bench: BenchConfig::default(),
            input: None,
            output: None,
            checkpoint: None,
            attn_stage: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }

    /// The preset with fusion, recon and overrides applied.
    pub fn model_config(&self, preset: Preset) -> CliResult<ModelConfig> {
        let o = &self.model;
        let base = ModelConfig::preset(preset);
        let cfg = ModelConfig {
            channels: o.channels.unwrap_or(base.channels),
            window: o.window.unwrap_or(base.window),
            blocks_per_stage: o.blocks_per_stage.unwrap_or(base.blocks_per_stage),
            heads: o.heads.unwrap_or(base.heads),
            mlp_ratio: o.mlp_ratio.unwrap_or(base.mlp_ratio),
            recon_blocks: o.recon_blocks.unwrap_or(base.recon_blocks),
            pad_multiple: o.pad_multiple.unwrap_or(base.pad_multiple),
            temporal_windows: o.temporal_windows.unwrap_or(base.temporal_windows),
            fusion: self.fusion,
            recon_block: self.recon,
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn require_input(&self) -> CliResult<&Path> {
        let dir = self.input.as_deref().ok_or_else(|| CliError::usage("no input directory (--in)"))?;
        if !dir.is_dir() {
            return Err(CliError::usage(format!("input directory {} does not exist", dir.display())));
        }
        Ok(dir)
    }

    pub fn require_checkpoint(&self) -> CliResult<&Path> {
        let path = self.checkpoint.as_deref().ok_or_else(|| CliError::usage("no checkpoint (--checkpoint)"))?;
        if !path.is_file() {
            return Err(CliError::usage(format!("checkpoint {} does not exist", path.display())));
        }
        Ok(path)
    }

    /// Create the output directory if needed and confirm it accepts files.
    pub fn require_output(&self) -> CliResult<&Path> {
        let dir = self.output.as_deref().ok_or_else(|| CliError::usage("no output directory (--out)"))?;
        prepare_output(dir)?;
        Ok(dir)
    }
}

pub fn prepare_output(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))?;
    let probe = dir.join(".rstt-write-probe");
    fs::write(&probe, b"").map_err(|e| CliError::usage(format!("{} is not writable: {e}", dir.display())))?;
    fs::remove_file(&probe)?;
    Ok(())
}
