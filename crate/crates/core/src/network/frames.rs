use rstt_tensor::{Float, Tensor};

use crate::error::{dim_err, Result};

/// Four low-resolution input frames, `[4, 3, H, W]`, values in `[0, 1]`.
/// They sit at time stamps 1, 3, 5 and 7 of the output clip.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameQuad<T = f32> {
    frames: Tensor<T>,
}

/// Seven high-resolution frames, `[7, 3, H, W]`, time stamps 1 through 7.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSeptet<T = f32> {
    frames: Tensor<T>,
}

fn check(op: &'static str, t: &Tensor<impl Float>, count: usize) -> Result<()> {
    match *t.shape() {
        [n, 3, h, w] if n == count && h > 0 && w > 0 => Ok(()),
        ref s => Err(dim_err(op, format!("expected [{count}, 3, H, W], got {s:?}"))),
    }
}

macro_rules! frame_stack {
    ($ty:ident, $count:expr, $op:literal) => {
        impl<T: Float> $ty<T> {
            pub const FRAMES: usize = $count;

            pub fn new(frames: Tensor<T>) -> Result<Self> {
                check($op, &frames, $count)?;
                Ok($ty { frames })
            }

            /// Stack `3 x H x W` frames of equal size.
            pub fn from_frames(frames: &[Tensor<T>]) -> Result<Self> {
                if frames.len() != $count {
                    return Err(dim_err($op, format!("expected {} frames, got {}", $count, frames.len())));
                }
                let shape = frames[0].shape().to_vec();
                if let Some(bad) = frames.iter().find(|f| f.shape() != shape.as_slice()) {
                    return Err(dim_err($op, format!("frame sizes differ: {:?} vs {:?}", shape, bad.shape())));
                }
                let mut data = Vec::with_capacity($count * frames[0].numel());
                for f in frames {
                    data.extend_from_slice(f.data());
                }
                let mut full = vec![$count];
                full.extend(&shape);
                Self::new(Tensor::new(&full, data)?)
            }

            pub fn tensor(&self) -> &Tensor<T> {
                &self.frames
            }

            pub fn into_tensor(self) -> Tensor<T> {
                self.frames
            }

            pub fn height(&self) -> usize {
                self.frames.shape()[2]
            }

            pub fn width(&self) -> usize {
                self.frames.shape()[3]
            }

            /// Frame `i` as `[3, H, W]`.
            pub fn frame(&self, i: usize) -> Tensor<T> {
                let s = self.frames.shape();
                let len = 3 * s[2] * s[3];
                Tensor::new(&[3, s[2], s[3]], self.frames.data()[i * len..(i + 1) * len].to_vec()).expect("frame slice")
            }

            pub fn cast<U: Float>(&self) -> $ty<U> {
                $ty { frames: self.frames.cast() }
            }
        }
    };
}

frame_stack!(FrameQuad, 4, "frame_quad");
frame_stack!(ClipSeptet, 7, "clip_septet");
