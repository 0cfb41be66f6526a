//! Contrast enhancement by dehazing the inverted image.
//!
//! A dark image inverted looks hazy: its dark channel is high. Removing the
//! haze with the dark channel prior and inverting back stretches the dark
//! end of the histogram. Transmission is refined with a guided filter.

use crate::error::{Error, Result};
use crate::image::RgbImage;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DehazeParams {
    /// Odd dark-channel window side.
    pub patch_size: usize,
    /// Fraction of haze removed, in (0, 1]; 0 disables dehazing.
    pub omega: f64,
    /// Lower bound on transmission, in (0, 1).
    pub t0: f64,
    /// Fraction of the highest dark-channel pixels averaged into the airlight.
    pub airlight_fraction: f64,
    /// Guided-filter window radius; `None` scales 40 px by `min(H, W) / 512`.
    pub guided_radius: Option<usize>,
    pub guided_eps: f64,
}

impl Default for DehazeParams {
    fn default() -> Self {
        Self {
            patch_size: 15,
            omega: 0.95,
            t0: 0.1,
            airlight_fraction: 0.001,
            guided_radius: None,
            guided_eps: 1e-3,
        }
    }
}

impl DehazeParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size.is_multiple_of(2) {
            return Err(Error::arg(format!(
                "dark-channel patch size must be odd, got {}",
                self.patch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::arg(format!("omega must lie in [0, 1], got {}", self.omega)));
        }
        if !(self.t0 > 0.0 && self.t0 < 1.0) {
            return Err(Error::arg(format!("t0 must lie in (0, 1), got {}", self.t0)));
        }
        if !(self.airlight_fraction > 0.0 && self.airlight_fraction <= 1.0) {
            return Err(Error::arg("airlight fraction must lie in (0, 1]"));
        }
        if !(self.guided_eps > 0.0) {
            return Err(Error::arg("guided filter eps must be positive"));
        }
        Ok(())
    }

    pub fn radius_for(&self, height: usize, width: usize) -> usize {
        self.guided_radius
            .unwrap_or_else(|| (40 * height.min(width) / 512).max(1))
    }
}

/// Single-channel `H x W` map, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Map {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// `1 - x` per channel.
pub fn invert(img: &RgbImage) -> RgbImage {
    RgbImage::from_fn(img.height(), img.width(), |y, x| img.pixel(y, x).map(|v| 1.0 - v))
}

/// Per pixel, the minimum over all channels inside the `patch_size` square
/// centred on it; windows are clipped at the border.
pub fn dark_channel(img: &RgbImage, patch_size: usize) -> Result<Map> {
    if patch_size.is_multiple_of(2) {
        return Err(Error::arg(format!(
            "dark-channel patch size must be odd, got {patch_size}"
        )));
    }
    let (h, w) = (img.height(), img.width());
    let per_pixel: Vec<f64> = (0..h * w)
        .map(|i| {
            let p = img.pixel(i / w, i % w);
            p[0].min(p[1]).min(p[2])
        })
        .collect();
    Ok(min_filter(&per_pixel, h, w, patch_size / 2))
}

fn min_filter(src: &[f64], h: usize, w: usize, r: usize) -> Map {
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = src[y * w + lo..=y * w + hi]
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
        }
    }
    let mut data = vec![0.0; h * w];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            data[y * w + x] = (lo..=hi).map(|yy| rows[yy * w + x]).fold(f64::INFINITY, f64::min);
        }
    }
    Map {
        height: h,
        width: w,
        data,
    }
}

/// Mean over the clipped `(2r+1)^2` window via a summed-area table.
fn box_mean(src: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += src[y * w + x];
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let s = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0]
                + sat[y0 * (w + 1) + x0];
            out[y * w + x] = s / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

/// Edge-preserving smoothing of `p` steered by the gray `guide`.
pub fn guided_filter(guide: &[f64], p: &[f64], h: usize, w: usize, r: usize, eps: f64) -> Vec<f64> {
    let mean_i = box_mean(guide, h, w, r);
    let mean_p = box_mean(p, h, w, r);
    let ip: Vec<f64> = guide.iter().zip(p).map(|(a, b)| a * b).collect();
    let ii: Vec<f64> = guide.iter().map(|a| a * a).collect();
    let corr_ip = box_mean(&ip, h, w, r);
    let corr_ii = box_mean(&ii, h, w, r);
    let mut a = vec![0.0; h * w];
    let mut b = vec![0.0; h * w];
    for k in 0..h * w {
        let cov = corr_ip[k] - mean_i[k] * mean_p[k];
        let var = corr_ii[k] - mean_i[k] * mean_i[k];
        a[k] = cov / (var + eps);
        b[k] = mean_p[k] - a[k] * mean_i[k];
    }
    let mean_a = box_mean(&a, h, w, r);
    let mean_b = box_mean(&b, h, w, r);
    (0..h * w).map(|k| mean_a[k] * guide[k] + mean_b[k]).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DehazeReport {
    pub image: RgbImage,
    pub airlight: [f64; 3],
    /// A channel of the estimated airlight was zero and was replaced by 1.
    pub airlight_fallback: bool,
    /// Refined transmission before the `t0` floor.
    pub transmission: Map,
}

/// Mean color of the brightest `fraction` of dark-channel pixels.
pub fn atmospheric_light(img: &RgbImage, dark: &Map, fraction: f64) -> [f64; 3] {
    let n = dark.data.len();
    let count = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dark.data[b].total_cmp(&dark.data[a]).then(a.cmp(&b)));
    let mut sum = [0.0; 3];
    for &i in &order[..count] {
        let p = img.pixel(i / dark.width, i % dark.width);
        for c in 0..3 {
            sum[c] += p[c];
        }
    }
    sum.map(|s| s / count as f64)
}

pub fn dehaze_report(img: &RgbImage, p: &DehazeParams) -> Result<DehazeReport> {
    p.validate()?;
    let (h, w) = (img.height(), img.width());
    let dark = dark_channel(img, p.patch_size)?;
    let mut airlight = atmospheric_light(img, &dark, p.airlight_fraction);
    let airlight_fallback = airlight.iter().any(|&a| !(a > 0.0));
    if airlight_fallback {
        log::warn!("degenerate atmospheric light {airlight:?}; using 1 for empty channels");
        airlight = airlight.map(|a| if a > 0.0 { a } else { 1.0 });
    }
    let normalized = RgbImage::from_fn(h, w, |y, x| {
        let px = img.pixel(y, x);
        [0, 1, 2].map(|c| px[c] / airlight[c])
    });
    let raw_t: Vec<f64> = dark_channel(&normalized, p.patch_size)?
        .data
        .iter()
        .map(|d| 1.0 - p.omega * d)
        .collect();
    let guide: Vec<f64> = (0..h * w)
        .map(|i| {
            let px = img.pixel(i / w, i % w);
            (px[0] + px[1] + px[2]) / 3.0
        })
        .collect();
    let refined: Vec<f64> = guided_filter(&guide, &raw_t, h, w, p.radius_for(h, w), p.guided_eps)
        .into_iter()
        .map(|t| t.min(1.0))
        .collect();
    // J = (I - A) / t + A, written so that t = 1 returns I exactly.
    let image = RgbImage::from_fn(h, w, |y, x| {
        let t = refined[y * w + x].max(p.t0);
        let gain = 1.0 / t - 1.0;
        let px = img.pixel(y, x);
        [0, 1, 2].map(|c| (px[c] + (px[c] - airlight[c]) * gain).clamp(0.0, 1.0))
    });
    Ok(DehazeReport {
        image,
        airlight,
        airlight_fallback,
        transmission: Map {
            height: h,
            width: w,
            data: refined,
        },
    })
}

pub fn dehaze(img: &RgbImage, p: &DehazeParams) -> Result<RgbImage> {
    Ok(dehaze_report(img, p)?.image)
}

/// Invert, dehaze, invert back.
pub fn enhance_contrast(img: &RgbImage, p: &DehazeParams) -> Result<RgbImage> {
    let out = invert(&dehaze(&invert(img), p)?);
    Ok(out.clamped())
}

/// Counts of clamped `(R+G+B)/3` lightness in `bins` equal-width bins.
pub fn lightness_histogram(img: &RgbImage, bins: usize) -> Vec<u64> {
    let bins = bins.max(1);
    let mut hist = vec![0u64; bins];
    for l in img.lightness() {
        hist[((l * bins as f64) as usize).min(bins - 1)] += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> RgbImage {
        RgbImage::from_fn(h, w, |y, x| {
            let v = f(y, x);
            [v, v, v]
        })
    }

    #[test]
    fn invert_values() {
        let img = gray(2, 2, |_, _| 0.2);
        assert!(invert(&img).tensor().data().iter().all(|&v| v == 0.8));
    }

    #[test]
    fn even_patch_is_rejected() {
        let img = gray(8, 8, |_, _| 0.5);
        assert!(matches!(dark_channel(&img, 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn black_pixel_footprint() {
        let img = gray(9, 9, |y, x| if (y, x) == (4, 4) { 0.0 } else { 1.0 });
        let d = dark_channel(&img, 3).unwrap();
        for y in 0..9usize {
            for x in 0..9usize {
                let inside = y.abs_diff(4) <= 1 && x.abs_diff(4) <= 1;
                assert_eq!(d.get(y, x), if inside { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn guided_filter_keeps_constants() {
        let guide: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let p = vec![1.0; 64];
        assert_eq!(guided_filter(&guide, &p, 8, 8, 2, 1e-3), p);
    }

    #[test]
    fn omega_zero_is_identity() {
        let img = RgbImage::from_fn(20, 20, |y, x| [0.1 * (y % 7) as f64, 0.05 * (x % 13) as f64, 0.3]);
        let p = DehazeParams {
            omega: 0.0,
            ..Default::default()
        };
        assert_eq!(dehaze(&img, &p).unwrap(), img);
    }

    #[test]
    fn zero_airlight_falls_back() {
        let img = RgbImage::from_fn(16, 16, |_, _| [0.5, 0.0, 0.5]);
        let r = dehaze_report(&img, &DehazeParams::default()).unwrap();
        assert!(r.airlight_fallback);
        assert_eq!(r.airlight[1], 1.0);
    }

    #[test]
    fn histogram_counts_every_pixel() {
        let img = gray(4, 4, |y, _| y as f64 / 3.0);
        let h = lightness_histogram(&img, 4);
        assert_eq!(h.iter().sum::<u64>(), 16);
        assert_eq!(h[3], 4);
    }
}
