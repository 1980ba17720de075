//! RGB -> greyscale conversion.
//!
//! The grey image is a per-pixel weighted sum of the RGB channels, rounded
//! to the nearest 8-bit value and replicated across all three output
//! channels so the grey stream can reuse a standard 3-channel backbone stem.

use image::RgbImage;
use serde::{Deserialize, Serialize};

/// Channel weights for the conversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GreyWeights {
    /// Perceptual weights 0.299 / 0.587 / 0.114.
    #[default]
    Rec601,
    /// Arithmetic mean of the three channels.
    Average,
}

impl GreyWeights {
    pub fn coeffs(&self) -> (f64, f64, f64) {
        match self {
            GreyWeights::Rec601 => (0.299, 0.587, 0.114),
            GreyWeights::Average => (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0),
        }
    }
}

/// Weighted sum of one pixel, rounded to the nearest 8-bit value.
pub fn grey_pixel(r: u8, g: u8, b: u8, weights: (f64, f64, f64)) -> u8 {
    let v = weights.0 * r as f64 + weights.1 * g as f64 + weights.2 * b as f64;
    v.round().clamp(0.0, 255.0) as u8
}

/// Convert an RGB image to its three-channel grey replica.
pub fn to_greyscale(rgb: &RgbImage, weights: GreyWeights) -> RgbImage {
    let coeffs = weights.coeffs();
    let mut out = RgbImage::new(rgb.width(), rgb.height());
    for (src, dst) in rgb.pixels().zip(out.pixels_mut()) {
        let v = grey_pixel(src.0[0], src.0[1], src.0[2], coeffs);
        dst.0 = [v, v, v];
    }
    out
}
