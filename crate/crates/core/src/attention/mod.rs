//! Shifted-window self- and cross-attention.

pub mod block;
pub mod mask;
pub mod mha;
pub mod window;

pub use block::{
    decoder_sub_block, encoder_sub_block, fuse_variant, swin_decoder_block, swin_encoder_block, AttnIds, BlockIds, Ctx,
    LinearIds, MixerIds, NormIds, SubBlockIds,
};
pub use mask::{build_shift_mask, AttentionMask, MASK_VALUE};
pub use mha::{multi_head_attention, multi_head_attention_probs, AttnVars, KvMode};
pub use window::{cyclic_shift, window_partition, window_partition_frames, window_reverse, window_reverse_frames};
