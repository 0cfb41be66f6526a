//! A minimal hand-tuned camera pipeline used as the traditional baseline:
//! black level, gray-world white balance, bilinear demosaicking, color
//! correction and gamma encoding.

use super::{subtract_black_level, Cfa, RawFrame};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::tensor::Tensor;

pub const GAMMA: f64 = 2.2;

/// Row-major 3x3 matrix applied to linear RGB.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorMatrix(pub [[f64; 3]; 3]);

impl Default for ColorMatrix {
    fn default() -> Self {
        Self([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }
}

impl ColorMatrix {
    fn apply(&self, px: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [0, 1, 2].map(|r| m[r][0] * px[0] + m[r][1] * px[1] + m[r][2] * px[2])
    }
}

/// Gray-world gains anchored on green: `mean_g / mean_c` per channel.
/// A channel with zero mean keeps gain 1.
pub fn gray_world_gains(means: [f64; 3]) -> [f64; 3] {
    means.map(|m| if m > 0.0 { means[1] / m } else { 1.0 })
}

/// `clamp(x, 0, 1)^(1/2.2)`.
pub fn gamma_encode(x: f64) -> f64 {
    x.clamp(0.0, 1.0).powf(1.0 / GAMMA)
}

/// Bilinear demosaicking of a `[1, 1, H, W]` mosaic: measured samples are
/// kept, missing colors are the mean of same-color samples in the 3x3
/// neighbourhood (clipped at the frame border).
pub fn bilinear_demosaic(mosaic: &Tensor, cfa: &Cfa) -> Result<RgbImage> {
    let (b, c, h, w) = mosaic.dims4()?;
    if b != 1 || c != 1 {
        return Err(Error::shape(format!(
            "expected a single-plane mosaic, got {:?}",
            mosaic.shape()
        )));
    }
    let m = mosaic.data();
    Ok(RgbImage::from_fn(h, w, |y, x| {
        let own = cfa.color_at(y, x) as usize;
        let mut sum = [0.0; 3];
        let mut count = [0usize; 3];
        for yy in y.saturating_sub(1)..(y + 2).min(h) {
            for xx in x.saturating_sub(1)..(x + 2).min(w) {
                let col = cfa.color_at(yy, xx) as usize;
                sum[col] += m[yy * w + xx];
                count[col] += 1;
            }
        }
        let mut px = [0.0; 3];
        for ch in 0..3 {
            px[ch] = if ch == own {
                m[y * w + x]
            } else if count[ch] > 0 {
                sum[ch] / count[ch] as f64
            } else {
                0.0
            };
        }
        px
    }))
}

/// The traditional pipeline with default settings (identity color matrix,
/// no brightening). Only Bayer frames are supported.
pub fn reference_pipeline(raw: &RawFrame) -> Result<RgbImage> {
    reference_pipeline_with(raw, &ColorMatrix::default(), 1.0)
}

/// Like [`reference_pipeline`], with an explicit color matrix and a linear
/// gain applied before gamma (for visualizing dark frames).
pub fn reference_pipeline_with(raw: &RawFrame, ccm: &ColorMatrix, gain: f64) -> Result<RgbImage> {
    let cfa = raw.cfa();
    if let Cfa::XTrans(_) = cfa {
        return Err(Error::UnsupportedCfa(
            "the reference pipeline handles Bayer mosaics only".into(),
        ));
    }
    let mut mosaic = subtract_black_level(raw);
    let w = raw.width();

    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for (i, v) in mosaic.data().iter().enumerate() {
        let col = cfa.color_at(i / w, i % w) as usize;
        sums[col] += v;
        counts[col] += 1;
    }
    let means = [0, 1, 2].map(|c| if counts[c] > 0 { sums[c] / counts[c] as f64 } else { 0.0 });
    let gains = gray_world_gains(means);
    for (i, v) in mosaic.data_mut().iter_mut().enumerate() {
        *v *= gains[cfa.color_at(i / w, i % w) as usize];
    }

    let linear = bilinear_demosaic(&mosaic, &cfa)?;
    Ok(RgbImage::from_fn(linear.height(), linear.width(), |y, x| {
        ccm.apply(linear.pixel(y, x)).map(|v| gamma_encode(v * gain))
    }))
}
