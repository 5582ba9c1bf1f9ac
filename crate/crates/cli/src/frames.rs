//! PNG frame sequences named `frame_%04d.png`, numbered from 1.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, GrayImage, RgbImage};

use rstt::{ClipSeptet, FrameQuad};
use rstt_tensor::Tensor;

use crate::error::{CliError, CliResult};

pub fn frame_name(index: usize) -> String {
    format!("frame_{:04}.png", index + 1)
}

/// Clamp to [0, 1], then round half up to the nearest of 256 levels.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// PNG files of `dir` in lexicographic order.
pub fn list_pngs(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// An 8-bit image as planar `[3, H, W]` values in [0, 1].
pub fn read_frame(path: &Path) -> CliResult<Tensor<f32>> {
    let img = image::open(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    if !matches!(img.color(), ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8) {
        return Err(CliError::usage(format!("{}: expected 8-bit channels, got {:?}", path.display(), img.color())));
    }
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    Ok(Tensor::new(&[3, h, w], data)?)
}

/// Exactly four equally sized frames from `dir`.
pub fn read_quad(dir: &Path) -> CliResult<FrameQuad<f32>> {
    let paths = list_pngs(dir)?;
    if paths.len() != 4 {
        return Err(CliError::usage(format!("{} holds {} PNG frames, expected 4", dir.display(), paths.len())));
    }
    let frames = paths.iter().map(|p| read_frame(p)).collect::<CliResult<Vec<_>>>()?;
    if let Some(i) = (1..4).find(|&i| frames[i].shape() != frames[0].shape()) {
        let (a, b) = (frames[0].shape(), frames[i].shape());
        return Err(CliError::usage(format!(
            "{} is {}x{} but {} is {}x{}",
            paths[i].display(),
            b[2],
            b[1],
            paths[0].display(),
            a[2],
            a[1]
        )));
    }
    Ok(FrameQuad::from_frames(&frames)?)
}

pub fn to_rgb_image(frame: &Tensor<f32>) -> RgbImage {
    let (h, w) = (frame.shape()[1], frame.shape()[2]);
    let d = frame.data();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([0, 1, 2].map(|c| quantize(d[c * h * w + i] as f64)))
    })
}

/// Write frames `frame_0001.png` .. `frame_0007.png`.
pub fn write_clip(dir: &Path, clip: &ClipSeptet<f32>) -> CliResult<Vec<PathBuf>> {
    (0..ClipSeptet::<f32>::FRAMES)
        .map(|i| {
            let path = dir.join(frame_name(i));
            to_rgb_image(&clip.frame(i)).save(&path)?;
            Ok(path)
        })
        .collect()
}

pub fn write_frames(dir: &Path, frames: &[Tensor<f32>]) -> CliResult<()> {
    for (i, f) in frames.iter().enumerate() {
        to_rgb_image(f).save(dir.join(frame_name(i)))?;
    }
    Ok(())
}

/// Values mapped linearly from `[min, max]` to `[0, 255]`; a constant map becomes 0.
pub fn write_normalized_gray(path: &Path, values: &[f64], rows: usize, cols: usize) -> CliResult<(f64, f64)> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let img = GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
        let v = values[y as usize * cols + x as usize];
        image::Luma([if span > 0.0 { quantize((v - min) / span) } else { 0 }])
    });
    img.save(path)?;
    Ok((min, max))
}
