//! Independent reference implementations used as test oracles.

use lowlight::image::RgbImage;
use lowlight::loss::LossConfig;
use lowlight::tensor::Tensor;
use rand::Rng;

pub struct Plane {
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

pub fn planes(t: &Tensor) -> Vec<Plane> {
    let s = t.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    (0..c)
        .map(|ch| Plane {
            h,
            w,
            v: t.data()[ch * h * w..(ch + 1) * h * w].to_vec(),
        })
        .collect()
}

pub fn window(size: usize, sigma: f64) -> Vec<Vec<f64>> {
    let c = (size / 2) as f64;
    let mut w = vec![vec![0.0; size]; size];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            *v = (-d2 / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    for v in w.iter_mut().flatten() {
        *v /= total;
    }
    w
}

/// Means of the luminance*structure map and of the structure map alone over
/// every valid window position.
pub fn naive_ssim(a: &Plane, b: &Plane, cfg: &LossConfig) -> (f64, f64) {
    let k = cfg.window_size;
    let w = window(k, cfg.window_sigma);
    let (mut ssim_sum, mut cs_sum, mut n) = (0.0, 0.0, 0.0);
    for y in 0..=a.h - k {
        for x in 0..=a.w - k {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let idx = (y + i) * a.w + x + j;
                    ma += w[i][j] * a.v[idx];
                    mb += w[i][j] * b.v[idx];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let idx = (y + i) * a.w + x + j;
                    let (da, db) = (a.v[idx] - ma, b.v[idx] - mb);
                    va += w[i][j] * da * da;
                    vb += w[i][j] * db * db;
                    cov += w[i][j] * da * db;
                }
            }
            let l = (2.0 * ma * mb + cfg.c1) / (ma * ma + mb * mb + cfg.c1);
            let cs = (2.0 * cov + cfg.c2) / (va + vb + cfg.c2);
            ssim_sum += l * cs;
            cs_sum += cs;
            n += 1.0;
        }
    }
    (ssim_sum / n, cs_sum / n)
}

pub fn halve(p: &Plane) -> Plane {
    let (h, w) = (p.h / 2, p.w / 2);
    let mut v = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let at = |yy: usize, xx: usize| p.v[yy * p.w + xx];
            v.push((at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1)) / 4.0);
        }
    }
    Plane { h, w, v }
}

pub fn naive_ms_ssim(a: &Tensor, b: &Tensor, cfg: &LossConfig) -> f64 {
    let pa = planes(a);
    let pb = planes(b);
    let mut total = 0.0;
    for (mut x, mut y) in pa.into_iter().zip(pb) {
        let mut prod = 1.0;
        for scale in 0..cfg.msssim_scales {
            let (s, cs) = naive_ssim(&x, &y, cfg);
            if scale + 1 == cfg.msssim_scales {
                prod *= s;
            } else {
                prod *= cs;
                x = halve(&x);
                y = halve(&y);
            }
        }
        total += prod;
    }
    total / a.shape()[1] as f64
}

pub fn naive_mean_ssim(a: &Tensor, b: &Tensor, cfg: &LossConfig) -> f64 {
    let pa = planes(a);
    let pb = planes(b);
    let n = pa.len() as f64;
    pa.iter().zip(&pb).map(|(x, y)| naive_ssim(x, y, cfg).0).sum::<f64>() / n
}

pub fn random_pair(rng: &mut impl Rng) -> (Tensor, Tensor) {
    let h = rng.random_range(64..=128);
    let w = rng.random_range(64..=128);
    let target = super::uniform(rng, &[1, 3, h, w], 0.0, 1.0);
    let noise = rng.random_range(0.02..0.3);
    let pred = Tensor::from_fn(&[1, 3, h, w], |i| {
        (0.8 * target.data()[i] + 0.1 + noise * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)
    });
    (pred, target)
}

/// Patch minimum over space and channels, clipped at the border.
pub fn brute_dark_channel(img: &RgbImage, patch: usize) -> Vec<f64> {
    let r = patch / 2;
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut m = f64::INFINITY;
            for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                    for v in img.pixel(yy, xx) {
                        m = m.min(v);
                    }
                }
            }
            out.push(m);
        }
    }
    out
}

/// Mean absolute difference over every sample.
pub fn mad(a: &RgbImage, b: &RgbImage) -> f64 {
    let (x, y) = (a.tensor().data(), b.tensor().data());
    x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64
}

/// Random colors with one zeroed channel per pixel below a white band.
pub fn haze_free_scene(seed: u64) -> RgbImage {
    let mut rng = super::rng(seed);
    RgbImage::from_fn(64, 64, |y, _| {
        if y < 16 {
            return [1.0; 3];
        }
        let mut px = [0, 1, 2].map(|_| rng.random_range(0.0..1.0));
        px[rng.random_range(0..3)] = 0.0;
        px
    })
}

/// Smooth dark scenes with a few bright details; ten seeds.
pub fn dark_fixture(seed: u64) -> RgbImage {
    let mut rng = super::rng(100 + seed);
    let (fy, fx, phase) = (
        rng.random_range(1.0..4.0),
        rng.random_range(1.0..4.0),
        rng.random_range(0.0..6.0),
    );
    let tint = [0, 1, 2].map(|_| rng.random_range(0.7..1.0));
    let gamma = rng.random_range(2.0..3.5);
    RgbImage::from_fn(64, 80, |y, x| {
        let u = y as f64 / 64.0;
        let v = x as f64 / 80.0;
        let base = 0.5 + 0.5 * (fy * u * 6.0 + phase).sin() * (fx * v * 6.0).cos();
        let l = base.powf(gamma);
        tint.map(|t| (l * t).clamp(0.0, 1.0))
    })
}

