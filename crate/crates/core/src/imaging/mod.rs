//! Image tensors, loading, cropping/resampling, and coordinate grids.

mod resample;
pub mod synth;

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::siren::psnr_from_unit_mse;

pub use resample::{box_downsample, center_crop, center_crop_resize};

/// An RGB image with channel values in `[0, 1]`, stored row-major and
/// channel-interleaved (`H x W x 3`).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    /// Content hash of the pixels.
    pub id: String,
}

/// Hex content hash of dimensions and pixel values.
pub fn content_hash(height: usize, width: usize, pixels: &[f64]) -> String {
    let mut h = Sha256::new();
    h.update((height as u64).to_le_bytes());
    h.update((width as u64).to_le_bytes());
    for p in pixels {
        h.update(p.to_bits().to_le_bytes());
    }
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::Dimension(format!(
                "{} values for a {height}x{width} RGB image",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Argument(format!("pixel value {bad} outside [0, 1]")));
        }
        let id = content_hash(height, width, &pixels);
        Ok(ImageTensor {
            height,
            width,
            pixels,
            id,
        })
    }

    /// Builds an image from a per-pixel function; values are clamped to `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                pixels.extend(f(r, c).iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self::new(height, width, pixels).expect("clamped pixels are valid")
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| f64::from(b) / 255.0).collect())
    }

    #[inline]
    pub fn pixel(&self, r: usize, c: usize) -> [f64; 3] {
        let i = (r * self.width + c) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for px in self.pixels.chunks_exact(3) {
            for c in 0..3 {
                m[c] += px[c];
            }
        }
        let n = self.pixel_count() as f64;
        m.map(|v| v / n)
    }

    /// Quantizes to 8 bits per channel.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| (p * 255.0).round() as u8).collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Loads a PNG or PPM (any format the decoder recognizes) as `[0, 1]` RGB.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decode_err = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let reader = image::ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?;
    let img = reader.decode().map_err(|e| decode_err(e.to_string()))?.to_rgb8();
    ImageTensor::from_rgb8(img.height() as usize, img.width() as usize, img.as_raw())
}

/// Loads every PNG/PPM in `dir` (sorted by file name), center-cropped and
/// resized to `size x size`.
pub fn load_dir(dir: impl AsRef<Path>, size: usize) -> Result<Vec<ImageTensor>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm" | "pnm"))
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| load_image(p).map(|img| center_crop_resize(&img, size)))
        .collect()
}

/// Pixel-center coordinates of a `size x size` grid, mapped so the first
/// row/column sits at -1 and the last at +1. Pairs are `(x, y)` = (column,
/// row) in row-major pixel order.
pub fn coord_grid(size: usize) -> Vec<f64> {
    let axis: Vec<f64> = if size == 1 {
        vec![0.0]
    } else {
        (0..size)
            .map(|i| -1.0 + 2.0 * i as f64 / (size - 1) as f64)
            .collect()
    };
    let mut out = Vec::with_capacity(size * size * 2);
    for y in &axis {
        for x in &axis {
            out.push(*x);
            out.push(*y);
        }
    }
    out
}

/// Maps `[0, 1]` pixels to `[-1, 1]` training targets.
pub fn normalize(img: &ImageTensor) -> Vec<f64> {
    img.pixels.iter().map(|p| 2.0 * p - 1.0).collect()
}

pub fn denormalize(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| (v + 1.0) / 2.0).collect()
}

/// MSE between two images on the `[0, 1]` scale.
pub fn image_mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::Dimension("image sizes differ".into()));
    }
    let s: f64 = a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.pixels.len() as f64)
}

pub fn image_psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    Ok(psnr_from_unit_mse(image_mse(a, b)?))
}

/// PSNR of the flat image holding each channel's mean color.
pub fn mean_color_psnr(img: &ImageTensor) -> f64 {
    // Shifted by the first pixel so a flat image gives exactly zero variance.
    let n = img.pixel_count() as f64;
    let first = img.pixel(0, 0);
    let mut var = 0.0;
    for c in 0..3 {
        let (mut s, mut s2) = (0.0, 0.0);
        for px in img.pixels.chunks_exact(3) {
            let d = px[c] - first[c];
            s += d;
            s2 += d * d;
        }
        let mean = s / n;
        var += (s2 / n - mean * mean).max(0.0);
    }
    psnr_from_unit_mse(var / 3.0)
}
