//! Image and depth containers shared by the generator, trainer and metrics,
//! plus their on-disk PNG encodings.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::model::normalize_rgb;
use crate::nn::Tensor;

/// Default depth quantization: 100 mm over the 16-bit range.
pub const DEFAULT_DEPTH_SCALE: f64 = 100.0 / 65535.0;
/// Raw 16-bit value reserved for invalid (far-clipped) pixels.
pub const INVALID_RAW: u16 = u16::MAX;

/// Row-major interleaved RGB with channel values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbFrame {
    pub fn new(width: usize, height: usize) -> Self {
        RgbFrame { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// `(1, 3, h, w)` tensor normalized to [−1, 1].
    pub fn to_tensor(&self) -> Tensor {
        let hw = self.width * self.height;
        let mut out = vec![0.0; 3 * hw];
        for (i, px) in self.data.chunks(3).enumerate() {
            for c in 0..3 {
                out[c * hw + i] = normalize_rgb(px[c]);
            }
        }
        Tensor::from_vec([1, 3, self.height, self.width], out).expect("frame tensor shape")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: Vec<u8> = self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let img: ImageBuffer<Rgb<u8>, _> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, buf).expect("rgb buffer size");
        img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?.to_rgb8();
        Ok(RgbFrame {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        })
    }
}

/// Depth in millimetres with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth_mm: Vec<f32>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        DepthMap { width, height, depth_mm: vec![0.0; width * height], valid: vec![false; width * height] }
    }

    /// Wraps a dense map; every pixel valid.
    pub fn dense(width: usize, height: usize, depth_mm: Vec<f32>) -> Self {
        let valid = vec![true; depth_mm.len()];
        DepthMap { width, height, depth_mm, valid }
    }

    pub fn len(&self) -> usize {
        self.depth_mm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth_mm.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// `(1, 1, h, w)` tensor of depth divided by `max_depth_mm`.
    pub fn to_normalized_tensor(&self, max_depth_mm: f64) -> Tensor {
        let data = self.depth_mm.iter().map(|&d| (d as f64 / max_depth_mm) as f32).collect();
        Tensor::from_vec([1, 1, self.height, self.width], data).expect("depth tensor shape")
    }

    /// Builds a dense map from one item of a normalized depth tensor.
    pub fn from_normalized(t: &Tensor, item: usize, max_depth_mm: f64) -> Self {
        let data = t.item(item).iter().map(|&v| (v as f64 * max_depth_mm) as f32).collect();
        DepthMap::dense(t.width(), t.height(), data)
    }

    /// Quantizes to 16 bits; invalid pixels get [`INVALID_RAW`].
    pub fn encode_raw(&self, scale_mm_per_unit: f64) -> Vec<u16> {
        self.depth_mm
            .iter()
            .zip(&self.valid)
            .map(|(&d, &ok)| {
                if ok {
                    ((d as f64 / scale_mm_per_unit).round()).clamp(0.0, (INVALID_RAW - 1) as f64) as u16
                } else {
                    INVALID_RAW
                }
            })
            .collect()
    }

    pub fn decode_raw(width: usize, height: usize, raw: &[u16], scale_mm_per_unit: f64) -> Self {
        DepthMap {
            width,
            height,
            depth_mm: raw.iter().map(|&r| (r as f64 * scale_mm_per_unit) as f32).collect(),
            valid: raw.iter().map(|&r| r != INVALID_RAW).collect(),
        }
    }

    pub fn save_png(&self, path: &Path, scale_mm_per_unit: f64) -> Result<()> {
        let raw = self.encode_raw(scale_mm_per_unit);
        let img: ImageBuffer<Luma<u16>, _> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("depth buffer size");
        img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }

    pub fn load_png(path: &Path, scale_mm_per_unit: f64) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?.to_luma16();
        Ok(DepthMap::decode_raw(img.width() as usize, img.height() as usize, img.as_raw(), scale_mm_per_unit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = DepthMap::new(3, 2);
        d.depth_mm = vec![1.0, 2.5, 99.0, 100.0, 0.0, 42.0];
        d.valid = vec![true, true, true, false, true, true];
        let path = dir.path().join("d.png");
        d.save_png(&path, DEFAULT_DEPTH_SCALE).unwrap();
        let back = DepthMap::load_png(&path, DEFAULT_DEPTH_SCALE).unwrap();
        assert_eq!(back.valid, d.valid);
        for (a, b) in back.depth_mm.iter().zip(&d.depth_mm).zip(&d.valid).filter(|(_, &v)| v).map(|(p, _)| p) {
            assert!((a - b).abs() <= DEFAULT_DEPTH_SCALE as f32);
        }
    }

    #[test]
    fn rgb_png_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = RgbFrame::new(2, 2);
        f.set_pixel(1, 0, [1.0, 0.5, 0.0]);
        let path = dir.path().join("f.png");
        f.save_png(&path).unwrap();
        let back = RgbFrame::load_png(&path).unwrap();
        assert_eq!(back.pixel(1, 0), [1.0, 128.0 / 255.0, 0.0]);
        let t = back.to_tensor();
        assert_eq!(t.shape(), [1, 3, 2, 2]);
        assert_eq!(t.data()[1], 1.0);
        assert_eq!(t.data()[0], -1.0);
    }
}
