//! Training objectives and evaluation metrics.
//!
//! The objective is `alpha * pixel + (1 - alpha) * feature` with
//! `pixel = beta * l1 + (1 - beta) * (1 - ms_ssim)`. A term whose weight is
//! exactly zero is not evaluated at all, so `alpha = beta = 1` records the
//! same tape as a bare [`l1_loss`].

mod features;
mod ssim;

use std::sync::Arc;

pub use features::{ConvLayer, FeatureExtractor, FeatureLayer, LLFX_MAGIC, LLFX_VERSION};
pub use ssim::{
    gaussian_window, max_feasible_scales, ms_ssim, ms_ssim_value, msssim_loss, ssim, ssim_maps,
    ssim_report, SsimMaps, SsimReport,
};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::tensor::{Tensor, Var};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the pixel term against the feature term.
    pub alpha: f64,
    /// Weight of l1 against the MS-SSIM loss inside the pixel term.
    pub beta: f64,
    pub msssim_scales: usize,
    pub c1: f64,
    pub c2: f64,
    pub window_size: usize,
    pub window_sigma: f64,
    pub feature_layer: FeatureLayer,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: 0.99,
            msssim_scales: 3,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
            window_size: 11,
            window_sigma: 1.5,
            feature_layer: FeatureLayer::Block2,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.alpha) || !unit.contains(&self.beta) {
            return Err(Error::arg(format!(
                "alpha and beta must lie in [0, 1], got {} and {}",
                self.alpha, self.beta
            )));
        }
        if self.msssim_scales == 0 {
            return Err(Error::arg("msssim_scales must be at least 1"));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::arg("SSIM constants c1 and c2 must be positive"));
        }
        if self.window_size == 0 || !(self.window_sigma > 0.0) {
            return Err(Error::arg("SSIM window needs a positive size and sigma"));
        }
        Ok(())
    }

    pub fn uses_l1(&self) -> bool {
        self.alpha != 0.0 && self.beta != 0.0
    }

    pub fn uses_msssim(&self) -> bool {
        self.alpha != 0.0 && self.beta != 1.0
    }

    pub fn uses_features(&self) -> bool {
        self.alpha != 1.0
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(format!(
            "prediction {:?} and target {:?} differ in shape",
            a.shape(),
            b.shape()
        )))
    }
}

/// Mean absolute difference.
pub fn l1_loss<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    same_shape(&pred.value(), &target.value())?;
    Ok(pred.sub(target)?.abs().mean())
}

/// `beta * l1 + (1 - beta) * (1 - ms_ssim)`.
pub fn pixel_loss<'t>(pred: Var<'t>, target: Var<'t>, cfg: &LossConfig) -> Result<Var<'t>> {
    let cfg = LossConfig { alpha: 1.0, ..cfg.clone() };
    Ok(loss_terms(pred, target, &cfg, None, None)?.total)
}

/// Mean squared difference of two activation tensors.
pub fn feature_distance<'t>(pred_features: Var<'t>, target_features: Var<'t>) -> Result<Var<'t>> {
    same_shape(&pred_features.value(), &target_features.value())?;
    Ok(pred_features.sub(target_features)?.square().mean())
}

/// Mean squared difference between extractor activations of both images.
pub fn feature_loss<'t>(
    pred: Var<'t>,
    target: Var<'t>,
    fx: &FeatureExtractor,
    layer: FeatureLayer,
) -> Result<Var<'t>> {
    same_shape(&pred.value(), &target.value())?;
    feature_distance(fx.forward(pred, layer)?, fx.forward(target, layer)?)
}

/// Recorded pieces of the objective. Terms with zero weight are `None`.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms<'t> {
    pub l1: Option<Var<'t>>,
    pub msssim: Option<Var<'t>>,
    pub feature: Option<Var<'t>>,
    pub total: Var<'t>,
}

/// Scalar values of [`LossTerms`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub l1: Option<f64>,
    pub msssim: Option<f64>,
    pub feature: Option<f64>,
    pub total: f64,
}

impl LossTerms<'_> {
    pub fn values(&self) -> Result<LossValues> {
        let read = |v: Option<Var<'_>>| v.map(|v| v.value().item()).transpose();
        Ok(LossValues {
            l1: read(self.l1)?,
            msssim: read(self.msssim)?,
            feature: read(self.feature)?,
            total: self.total.value().item()?,
        })
    }
}

fn weighted<'t>(a: Option<(f64, Var<'t>)>, b: Option<(f64, Var<'t>)>) -> Result<Option<Var<'t>>> {
    Ok(match (a, b) {
        (Some((wa, a)), Some((wb, b))) => Some(a.scale(wa).add(b.scale(wb))?),
        (Some((w, v)), None) | (None, Some((w, v))) => Some(v.scale(w)),
        (None, None) => None,
    })
}

/// Records the full objective.
///
/// `target_features` may carry precomputed extractor activations of
/// `target`; otherwise they are computed here. `fx` is required whenever
/// `alpha < 1`.
pub fn loss_terms<'t>(
    pred: Var<'t>,
    target: Var<'t>,
    cfg: &LossConfig,
    fx: Option<&FeatureExtractor>,
    target_features: Option<Arc<Tensor>>,
) -> Result<LossTerms<'t>> {
    cfg.validate()?;
    same_shape(&pred.value(), &target.value())?;
    let l1 = cfg.uses_l1().then(|| l1_loss(pred, target)).transpose()?;
    let msssim = cfg
        .uses_msssim()
        .then(|| msssim_loss(pred, target, cfg))
        .transpose()?;
    let feature = if cfg.uses_features() {
        let fx = fx.ok_or_else(|| {
            Error::arg("a feature extractor is required when alpha < 1")
        })?;
        let tape = pred.tape();
        let tf = match target_features {
            Some(t) => tape.constant_shared(t),
            None => fx.forward(target, cfg.feature_layer)?,
        };
        Some(feature_distance(fx.forward(pred, cfg.feature_layer)?, tf)?)
    } else {
        None
    };
    let pixel = weighted(
        l1.map(|v| (cfg.beta, v)),
        msssim.map(|v| (1.0 - cfg.beta, v)),
    )?;
    let total = weighted(
        pixel.map(|v| (cfg.alpha, v)),
        feature.map(|v| (1.0 - cfg.alpha, v)),
    )?
    .expect("validated weights select at least one term");
    Ok(LossTerms {
        l1,
        msssim,
        feature,
        total,
    })
}

/// `alpha * pixel_loss + (1 - alpha) * feature_loss`.
pub fn total_loss<'t>(
    pred: Var<'t>,
    target: Var<'t>,
    cfg: &LossConfig,
    fx: Option<&FeatureExtractor>,
) -> Result<Var<'t>> {
    Ok(loss_terms(pred, target, cfg, fx, None)?.total)
}

/// `10 log10(1 / MSE)` over all elements, capped at [`PSNR_CAP_DB`].
pub fn psnr_tensors(pred: &Tensor, target: &Tensor) -> Result<f64> {
    same_shape(pred, target)?;
    if pred.is_empty() {
        return Err(Error::shape("PSNR of an empty tensor"));
    }
    let mse = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

pub fn psnr(pred: &RgbImage, target: &RgbImage) -> Result<f64> {
    psnr_tensors(pred.tensor(), target.tensor())
}
