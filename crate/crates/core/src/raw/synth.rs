//! Synthetic short-exposure / ground-truth pairs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::{Cfa, RawFrame, DEFAULT_BLACK_LEVEL, DEFAULT_WHITE_LEVEL};
use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Exposure assigned to the (virtual) long-exposure reference.
pub const REFERENCE_EXPOSURE_S: f64 = 10.0;

/// Poisson-Gaussian sensor noise.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseParams {
    /// Photo-electrons collected at full scale; 0 disables shot noise.
    pub photon_scale: f64,
    /// Standard deviation of the additive read noise, in ADU; 0 disables it.
    pub read_sigma: f64,
}

impl NoiseParams {
    pub const NONE: NoiseParams = NoiseParams {
        photon_scale: 0.0,
        read_sigma: 0.0,
    };
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            photon_scale: 20_000.0,
            read_sigma: 2.0,
        }
    }
}

/// Simulates a short exposure of `clean`.
///
/// The sRGB image is linearized with gamma 2.2, sampled through `cfa`,
/// darkened by `exposure_ratio`, corrupted with shot and read noise, offset
/// by the black level and quantized to 16-bit ADU. Returns the frame and
/// `clean` as its ground truth.
pub fn synthesize_pair(
    clean: &RgbImage,
    cfa: Cfa,
    exposure_ratio: f64,
    noise: &NoiseParams,
    seed: u64,
) -> Result<(RawFrame, RgbImage)> {
    if !(exposure_ratio.is_finite() && exposure_ratio >= 1.0) {
        return Err(Error::arg(format!(
            "exposure ratio must be >= 1, got {exposure_ratio}"
        )));
    }
    if noise.photon_scale < 0.0 || noise.read_sigma < 0.0 {
        return Err(Error::arg("noise parameters must be non-negative"));
    }
    let (h, w) = (clean.height(), clean.width());
    let black = DEFAULT_BLACK_LEVEL;
    let white = DEFAULT_WHITE_LEVEL;
    let range = f64::from(white - black);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let read = (noise.read_sigma > 0.0)
        .then(|| Normal::new(0.0, noise.read_sigma))
        .transpose()
        .map_err(|e| Error::arg(e.to_string()))?;

    let mut samples = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let color = cfa.color_at(y, x) as usize;
            let srgb = clean.pixel(y, x)[color].clamp(0.0, 1.0);
            let mut signal = srgb.powf(super::GAMMA) / exposure_ratio;
            if noise.photon_scale > 0.0 {
                let lambda = signal * noise.photon_scale;
                if lambda > 0.0 {
                    let electrons: f64 = Poisson::new(lambda)
                        .map_err(|e| Error::arg(e.to_string()))?
                        .sample(&mut rng);
                    signal = electrons / noise.photon_scale;
                }
            }
            let mut adu = f64::from(black) + signal * range;
            if let Some(read) = &read {
                adu += read.sample(&mut rng);
            }
            samples.push(adu.round().clamp(0.0, f64::from(white)) as u16);
        }
    }
    let exposure_s = (REFERENCE_EXPOSURE_S / exposure_ratio * 1e6).round().max(1.0) / 1e6;
    let raw = RawFrame::new(w, h, samples, cfa, black, white, exposure_s)?;
    Ok((raw, clean.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(h: usize, w: usize) -> RgbImage {
        RgbImage::from_fn(h, w, |y, x| {
            let v = 0.2 + 0.6 * (y + x) as f64 / (h + w) as f64;
            [v, v, v]
        })
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let img = gradient(16, 16);
        let noise = NoiseParams::default();
        let (a, _) = synthesize_pair(&img, Cfa::RGGB, 100.0, &noise, 9).unwrap();
        let (b, _) = synthesize_pair(&img, Cfa::RGGB, 100.0, &noise, 9).unwrap();
        let (c, _) = synthesize_pair(&img, Cfa::RGGB, 100.0, &noise, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn ratio_below_one_is_rejected() {
        let img = gradient(4, 4);
        assert!(matches!(
            synthesize_pair(&img, Cfa::RGGB, 0.5, &NoiseParams::NONE, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn exposure_metadata_encodes_ratio() {
        let img = gradient(4, 4);
        let (raw, gt) = synthesize_pair(&img, Cfa::RGGB, 100.0, &NoiseParams::NONE, 0).unwrap();
        assert_eq!(raw.exposure_s(), 0.1);
        assert_eq!(gt, img);
    }
}
