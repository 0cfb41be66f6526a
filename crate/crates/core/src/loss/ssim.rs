//! Structural similarity on the tape.
//!
//! Statistics use a separable Gaussian window with "valid" extent, so a map
//! is `window - 1` pixels smaller than its input along each axis. Every
//! channel is scored independently and channel scores are averaged.

use std::sync::Arc;

use super::LossConfig;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Normalized 1D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Per-pixel SSIM factors, each shaped `[B, C, H - n + 1, W - n + 1]`.
#[derive(Clone, Copy, Debug)]
pub struct SsimMaps<'t> {
    pub luminance: Var<'t>,
    pub contrast_structure: Var<'t>,
    pub ssim: Var<'t>,
}

/// Plain-value SSIM result.
#[derive(Clone, Debug, PartialEq)]
pub struct SsimReport {
    pub luminance: Tensor,
    pub contrast_structure: Tensor,
    pub map: Tensor,
    pub mean: f64,
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} and target {:?} differ in shape",
            a.shape(),
            b.shape()
        )));
    }
    a.dims4().map(|_| ())
}

pub fn ssim_maps<'t>(pred: Var<'t>, target: Var<'t>, cfg: &LossConfig) -> Result<SsimMaps<'t>> {
    check_pair(&pred.value(), &target.value())?;
    let k: Arc<[f64]> = gaussian_window(cfg.window_size, cfg.window_sigma).into();
    let blur = |v: Var<'t>| v.blur_valid(k.clone());

    let mu_x = blur(pred)?;
    let mu_y = blur(target)?;
    let mu_xx = mu_x.square();
    let mu_yy = mu_y.square();
    let mu_xy = mu_x.mul(mu_y)?;
    let var_x = blur(pred.square())?.sub(mu_xx)?;
    let var_y = blur(target.square())?.sub(mu_yy)?;
    let cov = blur(pred.mul(target)?)?.sub(mu_xy)?;

    let luminance = mu_xy
        .scale(2.0)
        .add_scalar(cfg.c1)
        .div(mu_xx.add(mu_yy)?.add_scalar(cfg.c1))?;
    let contrast_structure = cov
        .scale(2.0)
        .add_scalar(cfg.c2)
        .div(var_x.add(var_y)?.add_scalar(cfg.c2))?;
    let ssim = luminance.mul(contrast_structure)?;
    Ok(SsimMaps {
        luminance,
        contrast_structure,
        ssim,
    })
}

/// Mean SSIM over pixels and channels.
pub fn ssim<'t>(pred: Var<'t>, target: Var<'t>, cfg: &LossConfig) -> Result<Var<'t>> {
    Ok(ssim_maps(pred, target, cfg)?.ssim.mean())
}

/// Largest scale count that `min(H, W)` supports for `window`.
pub fn max_feasible_scales(min_extent: usize, window: usize) -> usize {
    let mut m = 0;
    while window << m <= min_extent {
        m += 1;
    }
    m
}

/// Multi-scale SSIM with unit exponents:
/// `prod_{i<M} mean(cs_i) * mean(l_M * cs_M)` per channel, averaged over
/// channels. Scales are produced by 2x2 mean pooling.
pub fn ms_ssim<'t>(pred: Var<'t>, target: Var<'t>, cfg: &LossConfig) -> Result<Var<'t>> {
    let pv = pred.value();
    check_pair(&pv, &target.value())?;
    let (_, _, h, w) = pv.dims4()?;
    let m = cfg.msssim_scales;
    if m == 0 {
        return Err(Error::arg("MS-SSIM needs at least one scale"));
    }
    let feasible = max_feasible_scales(h.min(w), cfg.window_size);
    if m > feasible {
        return Err(Error::arg(format!(
            "{h}x{w} image supports at most {feasible} MS-SSIM scales with a {}-tap window, {m} requested",
            cfg.window_size
        )));
    }
    let (mut x, mut y) = (pred, target);
    let mut product: Option<Var<'t>> = None;
    for scale in 0..m {
        let maps = ssim_maps(x, y, cfg)?;
        let term = if scale + 1 == m {
            maps.ssim.mean_spatial()?
        } else {
            maps.contrast_structure.mean_spatial()?
        };
        product = Some(match product {
            Some(p) => p.mul(term)?,
            None => term,
        });
        if scale + 1 < m {
            x = x.avgpool2()?;
            y = y.avgpool2()?;
        }
    }
    Ok(product.expect("at least one scale").mean())
}

/// `1 - ms_ssim`.
pub fn msssim_loss<'t>(pred: Var<'t>, target: Var<'t>, cfg: &LossConfig) -> Result<Var<'t>> {
    Ok(ms_ssim(pred, target, cfg)?.scale(-1.0).add_scalar(1.0))
}

/// Evaluates SSIM on plain tensors.
pub fn ssim_report(pred: &Tensor, target: &Tensor, cfg: &LossConfig) -> Result<SsimReport> {
    let tape = Tape::new();
    let maps = ssim_maps(tape.constant(pred), tape.constant(target), cfg)?;
    let map = maps.ssim.value();
    Ok(SsimReport {
        luminance: (*maps.luminance.value()).clone(),
        contrast_structure: (*maps.contrast_structure.value()).clone(),
        mean: map.mean(),
        map: (*map).clone(),
    })
}

/// Evaluates MS-SSIM on plain tensors.
pub fn ms_ssim_value(pred: &Tensor, target: &Tensor, cfg: &LossConfig) -> Result<f64> {
    let tape = Tape::new();
    ms_ssim(tape.constant(pred), tape.constant(target), cfg)?.value().item()
}
