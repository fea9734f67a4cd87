//! Structural similarity over grayscale images.
//!
//! Uniform-window SSIM with the standard stabilizing constants
//! `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`. Window statistics come from
//! summed-area tables, so every sliding position costs O(1); sums over 8-bit
//! pixels are exact in f64, which keeps this implementation bit-for-bit
//! consistent with a naive per-window reference.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default sliding window edge, pixels.
pub const DEFAULT_WINDOW: usize = 8;
/// Dynamic range of 8-bit images.
pub const DYNAMIC_RANGE_8BIT: f64 = 255.0;

const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, SsimError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(SsimError::BadDimensions {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SsimError {
    #[error("image dimensions {width}x{height} do not match buffer length {len}")]
    BadDimensions {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("images differ in size: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("window {window} exceeds image size {width}x{height} or is zero")]
    WindowTooLarge {
        window: usize,
        width: usize,
        height: usize,
    },
}

/// Summed-area table; `sum(x0..x1, y0..y1)` in O(1).
struct Integral {
    width: usize,
    table: Vec<f64>,
}

impl Integral {
    fn build(img: &GrayImage, f: impl Fn(f64) -> f64) -> Self {
        let w = img.width + 1;
        let h = img.height + 1;
        let mut table = vec![0.0; w * h];
        for y in 0..img.height {
            let mut row = 0.0;
            for x in 0..img.width {
                row += f(f64::from(img.pixel(x, y)));
                table[(y + 1) * w + (x + 1)] = table[y * w + (x + 1)] + row;
            }
        }
        Self { width: w, table }
    }

    /// Sum over the half-open rectangle `[x0, x1) x [y0, y1)`.
    fn sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let w = self.width;
        self.table[y1 * w + x1] + self.table[y0 * w + x0]
            - self.table[y0 * w + x1]
            - self.table[y1 * w + x0]
    }
}

/// Mean SSIM between two same-sized grayscale images.
///
/// Every `window`x`window` position (stride 1, uniform weights) contributes
/// one local score; the result is their mean, in `[-1, 1]`. Identical images
/// score exactly 1. `dynamic_range` is `L` in the stabilizing constants
/// (255 for 8-bit data).
pub fn ssim(
    a: &GrayImage,
    b: &GrayImage,
    window: usize,
    dynamic_range: f64,
) -> Result<f64, SsimError> {
    if a.width != b.width || a.height != b.height {
        return Err(SsimError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    if window == 0 || window > a.width || window > a.height {
        return Err(SsimError::WindowTooLarge {
            window,
            width: a.width,
            height: a.height,
        });
    }

    let c1 = (K1 * dynamic_range).powi(2);
    let c2 = (K2 * dynamic_range).powi(2);
    let n = (window * window) as f64;

    let sum_a = Integral::build(a, |v| v);
    let sum_b = Integral::build(b, |v| v);
    let sum_aa = Integral::build(a, |v| v * v);
    let sum_bb = Integral::build(b, |v| v * v);
    let sum_ab = {
        let w = a.width + 1;
        let h = a.height + 1;
        let mut table = vec![0.0; w * h];
        for y in 0..a.height {
            let mut row = 0.0;
            for x in 0..a.width {
                row += f64::from(a.pixel(x, y)) * f64::from(b.pixel(x, y));
                table[(y + 1) * w + (x + 1)] = table[y * w + (x + 1)] + row;
            }
        }
        Integral { width: w, table }
    };

    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=(a.height - window) {
        for x0 in 0..=(a.width - window) {
            let (x1, y1) = (x0 + window, y0 + window);
            let mu_a = sum_a.sum(x0, y0, x1, y1) / n;
            let mu_b = sum_b.sum(x0, y0, x1, y1) / n;
            let var_a = sum_aa.sum(x0, y0, x1, y1) / n - mu_a * mu_a;
            let var_b = sum_bb.sum(x0, y0, x1, y1) / n - mu_b * mu_b;
            let cov = sum_ab.sum(x0, y0, x1, y1) / n - mu_a * mu_b;

            let score = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += score;
            count += 1;
        }
    }
    Ok(total / count as f64)
}
