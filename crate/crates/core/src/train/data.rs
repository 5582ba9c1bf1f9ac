//! Synthetic moving scenes and the bicubic degradation that turns a
//! seven-frame clip into a training pair.

use rand::Rng;
use rstt_tensor::ops::resample::bicubic_downsample;
use rstt_tensor::{seeded_rng, Float, Tensor};

use crate::error::{config_err, Result};
use crate::network::layout::SCALE;
use crate::network::{ClipSeptet, FrameQuad};

/// A textured rectangle moving at constant velocity, in HR pixels per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MovingRect {
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
    pub vx: f64,
    pub vy: f64,
    pub color: [f64; 3],
    /// Texture: `amp * sin(fx * u + fy * v)` in object coordinates.
    pub fx: f64,
    pub fy: f64,
    pub amp: f64,
}

impl MovingRect {
    /// Top-left corner at frame `t`.
    pub fn origin(&self, t: f64) -> (f64, f64) {
        (self.x0 + self.vx * t, self.y0 + self.vy * t)
    }
}

/// A static sinusoidal gradient behind 2 to 4 moving rectangles.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub base: [f64; 3],
    pub tint: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub phase: f64,
    pub objects: Vec<MovingRect>,
}

impl Scene {
    pub fn random(seed: u64, height: usize, width: usize) -> Self {
        let mut rng = seeded_rng(seed);
        let (h, w) = (height as f64, width as f64);
        let color = |rng: &mut rstt_tensor::Rng| [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
        let base = color(&mut rng);
        let tint = color(&mut rng);
        let count = rng.random_range(2..=4);
        let objects = (0..count)
            .map(|_| {
                let side = h.min(w);
                let (rw, rh) = (rng.random_range(0.2..0.5) * side, rng.random_range(0.2..0.5) * side);
                MovingRect {
                    x0: rng.random_range(0.0..(w - rw)),
                    y0: rng.random_range(0.0..(h - rh)),
                    width: rw,
                    height: rh,
                    vx: rng.random_range(-1.5..1.5),
                    vy: rng.random_range(-1.5..1.5),
                    color: color(&mut rng),
                    fx: rng.random_range(0.05..0.4),
                    fy: rng.random_range(0.05..0.4),
                    amp: rng.random_range(0.0..0.15),
                }
            })
            .collect();
        Scene {
            base,
            tint,
            fx: rng.random_range(0.01..0.05),
            fy: rng.random_range(0.01..0.05),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            objects,
        }
    }

    /// Frame at time `t` (0 to 6), `[3, H, W]`, values in `[0, 1]`. Later
    /// objects cover earlier ones; a pixel belongs to an object when its
    /// centre lies inside.
    pub fn render<T: Float>(&self, t: f64, height: usize, width: usize) -> Tensor<T> {
        let plane = height * width;
        let mut out = vec![T::zero(); 3 * plane];
        for y in 0..height {
            for x in 0..width {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mix = 0.5 + 0.5 * (self.fx * px + self.fy * py + self.phase).sin();
                let mut rgb: [f64; 3] = std::array::from_fn(|c| self.base[c] * (1.0 - mix) + self.tint[c] * mix);
                for o in &self.objects {
                    let (ox, oy) = o.origin(t);
                    let (u, v) = (px - ox, py - oy);
                    if (0.0..o.width).contains(&u) && (0.0..o.height).contains(&v) {
                        let tex = o.amp * (o.fx * u + o.fy * v).sin();
                        rgb = std::array::from_fn(|c| o.color[c] + tex);
                    }
                }
                for c in 0..3 {
                    out[c * plane + y * width + x] = T::from_f64_lossy(rgb[c].clamp(0.0, 1.0));
                }
            }
        }
        Tensor::new(&[3, height, width], out).expect("frame shape")
    }

    pub fn clip<T: Float>(&self, height: usize, width: usize) -> ClipSeptet<T> {
        let frames: Vec<Tensor<T>> = (0..7).map(|t| self.render(t as f64, height, width)).collect();
        ClipSeptet::from_frames(&frames).expect("seven equal frames")
    }
}

/// Deterministic synthetic clip of `7 x 3 x H x W`.
pub fn synth_clip<T: Float>(seed: u64, height: usize, width: usize) -> Result<ClipSeptet<T>> {
    if height < 32 || width < 32 || !height.is_multiple_of(SCALE) || !width.is_multiple_of(SCALE) {
        return Err(config_err(format!("synthetic clips need sides >= 32 and divisible by {SCALE}, got {height}x{width}")));
    }
    Ok(Scene::random(seed, height, width).clip(height, width))
}

/// An input quad and the clip it should be mapped to.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample<T = f32> {
    pub input: FrameQuad<T>,
    pub target: ClipSeptet<T>,
}

/// Input frames are the odd time stamps 1, 3, 5, 7 (indices 0, 2, 4, 6),
/// bicubically downsampled by 4.
pub fn degrade<T: Float>(clip: &ClipSeptet<T>) -> Result<TrainSample<T>> {
    let odd: Vec<Tensor<T>> = (0..4).map(|i| clip.frame(2 * i)).collect();
    let hr = FrameQuad::from_frames(&odd)?;
    let input = FrameQuad::new(bicubic_downsample(hr.tensor(), SCALE)?)?;
    Ok(TrainSample { input, target: clip.clone() })
}

/// Supplies training pairs by (iteration, position in batch), so a resumed
/// run sees the same data as an uninterrupted one.
pub trait DataSource<T> {
    fn sample(&mut self, iteration: u64, index: usize) -> Result<TrainSample<T>>;
}

/// The same pair every time.
pub struct FixedSample<T>(pub TrainSample<T>);

impl<T: Float> DataSource<T> for FixedSample<T> {
    fn sample(&mut self, _: u64, _: usize) -> Result<TrainSample<T>> {
        Ok(self.0.clone())
    }
}

/// A fresh synthetic clip per draw, at the given HR size.
pub struct SyntheticStream {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
}

impl<T: Float> DataSource<T> for SyntheticStream {
    fn sample(&mut self, iteration: u64, index: usize) -> Result<TrainSample<T>> {
        let seed = self.seed ^ iteration.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (index as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        degrade(&synth_clip(seed, self.height, self.width)?)
    }
}
