use image::imageops::{self, FilterType};
use image::{ImageBuffer, Rgb, Rgb32FImage};
use serde::{Deserialize, Serialize};

use super::PixelTensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropMode {
    #[default]
    Center,
}

/// Optional per-channel standardization applied after cropping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelNorm {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

/// Square resize followed by a square crop. Stored in checkpoints so a model
/// always sees inputs prepared the way it was trained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub resize_to: u32,
    pub crop_to: u32,
    #[serde(default)]
    pub crop_mode: CropMode,
    #[serde(default)]
    pub normalize: Option<ChannelNorm>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { resize_to: 320, crop_to: 224, crop_mode: CropMode::Center, normalize: None }
    }
}

impl PreprocessConfig {
    /// Identity-sized config for inputs that are already `size`×`size`.
    pub fn identity(size: u32) -> Self {
        PreprocessConfig { resize_to: size, crop_to: size, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_to == 0 || self.resize_to == 0 {
            return Err(Error::Config("resize_to and crop_to must be positive".into()));
        }
        if self.crop_to > self.resize_to {
            return Err(Error::Config(format!(
                "crop_to ({}) exceeds resize_to ({})",
                self.crop_to, self.resize_to
            )));
        }
        if let Some(norm) = &self.normalize {
            if norm.std.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::Config("normalization std must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Decode an encoded image (PNG, or whatever the `image` build supports),
/// convert to RGB, then resize and crop.
pub fn preprocess_image(raw: &[u8], cfg: &PreprocessConfig) -> Result<PixelTensor> {
    cfg.validate()?;
    let decoded = image::load_from_memory(raw).map_err(|e| Error::Decode(e.to_string()))?;
    // Grayscale sources are replicated across the three channels here.
    let rgb = decoded.to_rgb32f();
    Ok(finish(rgb, cfg))
}

/// Same geometry as [`preprocess_image`] applied to an in-memory tensor.
pub fn preprocess_pixels(pixels: &PixelTensor, cfg: &PreprocessConfig) -> Result<PixelTensor> {
    cfg.validate()?;
    if !pixels.is_finite() {
        return Err(Error::NonFinite("input pixels".into()));
    }
    Ok(finish(tensor_to_rgb(pixels), cfg))
}

fn finish(mut img: Rgb32FImage, cfg: &PreprocessConfig) -> PixelTensor {
    let r = cfg.resize_to;
    if img.width() != r || img.height() != r {
        img = imageops::resize(&img, r, r, FilterType::Triangle);
    }
    let c = cfg.crop_to;
    if c != r {
        let off = (r - c) / 2;
        img = imageops::crop_imm(&img, off, off, c, c).to_image();
    }
    let mut tensor = rgb_to_tensor(&img);
    if let Some(norm) = cfg.normalize {
        let plane = tensor.height() * tensor.width();
        for (ch, chunk) in tensor.data_mut().chunks_mut(plane).enumerate() {
            for v in chunk {
                *v = (*v - norm.mean[ch]) / norm.std[ch];
            }
        }
    } else {
        for v in tensor.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    tensor
}

fn rgb_to_tensor(img: &Rgb32FImage) -> PixelTensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for ch in 0..3 {
            data[(ch * h + y) * w + x] = px.0[ch];
        }
    }
    PixelTensor::new(h, w, data).expect("buffer sized from image")
}

fn tensor_to_rgb(t: &PixelTensor) -> Rgb32FImage {
    ImageBuffer::from_fn(t.width() as u32, t.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([t.get(0, y, x), t.get(1, y, x), t.get(2, y, x)])
    })
}

/// 8-bit RGB PNG of a `[0, 1]` tensor.
pub fn tensor_to_png(t: &PixelTensor) -> Result<Vec<u8>> {
    let img: image::RgbImage = ImageBuffer::from_fn(t.width() as u32, t.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let q = |c| (t.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([q(0), q(1), q(2)])
    });
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Decode(e.to_string()))?;
    Ok(out.into_inner())
}
