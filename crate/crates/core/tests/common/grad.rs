//! Central finite-difference cases for every differentiable op and loss.

use lowlight::loss::{self, FeatureExtractor, FeatureLayer, LossConfig};
use lowlight::net::{NetParams, NetSpec};
use lowlight::raw::Cfa;
use lowlight::tensor::{Tape, Tensor};
use rand::Rng;
use std::sync::Arc;

use super::{grad_error, project, rng, uniform, FD_STEP};

pub const LAYER_TOL: f64 = 1e-5;
pub const LOSS_TOL: f64 = 1e-4;
pub const INSTANCES: u64 = 20;

/// One op or loss; `error(seed)` is the relative gradient error of one
/// random instance.
pub struct Case {
    pub name: &'static str,
    pub tol: f64,
    pub error: Box<dyn Fn(u64) -> f64>,
}

impl Case {
    fn new(name: &'static str, tol: f64, error: impl Fn(u64) -> f64 + 'static) -> Self {
        Case { name, tol, error: Box::new(error) }
    }

    /// Largest error over `INSTANCES` seeds.
    pub fn worst(&self) -> (u64, f64) {
        (0..INSTANCES).map(|s| (s, (self.error)(s))).fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a })
    }
}

fn scales(msssim_scales: usize) -> LossConfig {
    LossConfig { msssim_scales, ..LossConfig::default() }
}

fn image_pair(seed: u64, h: usize, w: usize) -> (Tensor, Tensor) {
    let mut r = rng(seed);
    let a = uniform(&mut r, &[1, 3, h, w], 0.05, 0.95);
    let b = uniform(&mut r, &[1, 3, h, w], 0.05, 0.95);
    (a, b)
}

pub fn cases() -> Vec<Case> {
    let mut cases = Vec::new();
    cases.push(Case::new("conv2d/input", LAYER_TOL, |s| {
        let mut r = rng(s);
        let (stride, pad) = (1 + s as usize % 2, s as usize % 2);
        let x = uniform(&mut r, &[1, 2, 6, 7], -1.0, 1.0);
        let k = uniform(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
        let b = uniform(&mut r, &[3], -1.0, 1.0);
        grad_error(&x, None, &mut r, |t, x| {
            project(x.conv2d(t.constant(&k), Some(t.constant(&b)), stride, pad)?, s)
        })
    }));
    cases.push(Case::new("conv2d/kernel", LAYER_TOL, |s| {
        let mut r = rng(100 + s);
        let x = uniform(&mut r, &[2, 2, 5, 5], -1.0, 1.0);
        let k = uniform(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
        grad_error(&k, None, &mut r, |t, k| project(t.constant(&x).conv2d(k, None, 1, 1)?, s))
    }));
    cases.push(Case::new("conv2d/bias", LAYER_TOL, |s| {
        let mut r = rng(200 + s);
        let x = uniform(&mut r, &[1, 2, 5, 5], -1.0, 1.0);
        let k = uniform(&mut r, &[3, 2, 1, 1], -1.0, 1.0);
        let b = uniform(&mut r, &[3], -1.0, 1.0);
        grad_error(&b, None, &mut r, |t, b| {
            project(t.constant(&x).conv2d(t.constant(&k), Some(b), 1, 0)?, s)
        })
    }));
    cases.push(Case::new("transpose_conv2d/input", LAYER_TOL, |s| {
        let mut r = rng(300 + s);
        let x = uniform(&mut r, &[1, 3, 4, 5], -1.0, 1.0);
        let k = uniform(&mut r, &[3, 2, 2, 2], -1.0, 1.0);
        grad_error(&x, None, &mut r, |t, x| project(x.transpose_conv2d(t.constant(&k), 2)?, s))
    }));
    cases.push(Case::new("transpose_conv2d/kernel", LAYER_TOL, |s| {
        let mut r = rng(400 + s);
        let x = uniform(&mut r, &[1, 3, 4, 4], -1.0, 1.0);
        let k = uniform(&mut r, &[3, 2, 2, 2], -1.0, 1.0);
        grad_error(&k, None, &mut r, |t, k| project(t.constant(&x).transpose_conv2d(k, 2)?, s))
    }));
    cases.push(Case::new("bias_add", LAYER_TOL, |s| {
        let mut r = rng(500 + s);
        let x = uniform(&mut r, &[1, 3, 4, 4], -1.0, 1.0);
        let b = uniform(&mut r, &[3], -1.0, 1.0);
        grad_error(&b, None, &mut r, |t, b| project(t.constant(&x).bias_add(b)?, s))
    }));
    cases.push(Case::new("maxpool2", LAYER_TOL, |s| {
        let mut r = rng(600 + s);
        let x = uniform(&mut r, &[1, 2, 6, 8], -1.0, 1.0);
        grad_error(&x, None, &mut r, |_, x| project(x.maxpool2()?, s))
    }));
    cases.push(Case::new("avgpool2", LAYER_TOL, |s| {
        let mut r = rng(700 + s);
        let x = uniform(&mut r, &[1, 2, 7, 6], -1.0, 1.0);
        grad_error(&x, None, &mut r, |_, x| project(x.avgpool2()?, s))
    }));
    cases.push(Case::new("leaky_relu", LAYER_TOL, |s| {
        let mut r = rng(800 + s);
        let x = uniform(&mut r, &[1, 2, 5, 5], -1.0, 1.0);
        grad_error(&x, None, &mut r, |_, x| project(x.leaky_relu(), s))
    }));
    cases.push(Case::new("relu", LAYER_TOL, |s| {
        let mut r = rng(850 + s);
        let x = uniform(&mut r, &[1, 2, 5, 5], -1.0, 1.0);
        grad_error(&x, None, &mut r, |_, x| project(x.relu(), s))
    }));
    cases.push(Case::new("concat_channels", LAYER_TOL, |s| {
        let mut r = rng(900 + s);
        let x = uniform(&mut r, &[1, 2, 3, 3], -1.0, 1.0);
        let y = uniform(&mut r, &[1, 3, 3, 3], -1.0, 1.0);
        grad_error(&x, None, &mut r, |t, x| project(x.concat_channels(t.constant(&y))?, s))
            .max(grad_error(&y, None, &mut r, |t, y| project(t.constant(&x).concat_channels(y)?, s)))
    }));
    cases.push(Case::new("pixel_shuffle", LAYER_TOL, |s| {
        let mut r = rng(1000 + s);
        let f = 2 + s as usize % 2;
        let x = uniform(&mut r, &[1, 3 * f * f, 3, 2], -1.0, 1.0);
        grad_error(&x, None, &mut r, |_, x| project(x.pixel_shuffle(f)?, s))
    }));
    cases.push(Case::new("blur_valid", LAYER_TOL, |s| {
        let mut r = rng(1100 + s);
        let x = uniform(&mut r, &[1, 2, 9, 8], -1.0, 1.0);
        let k: Arc<[f64]> = loss::gaussian_window(5, 1.5).into();
        grad_error(&x, None, &mut r, |_, x| project(x.blur_valid(k.clone())?, s))
    }));
    cases.push(Case::new("mean_spatial", LAYER_TOL, |s| {
        let mut r = rng(1200 + s);
        let x = uniform(&mut r, &[2, 3, 4, 5], -1.0, 1.0);
        grad_error(&x, None, &mut r, |_, x| project(x.mean_spatial()?, s))
    }));
    cases.push(Case::new("add/sub/mul/div", LAYER_TOL, |s| {
        let mut r = rng(1300 + s);
        let x = uniform(&mut r, &[2, 3, 4], -1.0, 1.0);
        let y = uniform(&mut r, &[2, 3, 4], 0.5, 1.5);
        let ex = grad_error(&x, None, &mut r, |t, x| {
            let y = t.constant(&y);
            project(x.add(y)?.mul(x.sub(y)?)?.div(y)?, s)
        });
        let ey = grad_error(&y, None, &mut r, |t, y| {
            let x = t.constant(&x);
            project(x.div(y)?.add(y.mul(y)?)?, s)
        });
        ex.max(ey)
    }));
    cases.push(Case::new("scale/add_scalar/abs/square", LAYER_TOL, |s| {
        let mut r = rng(1400 + s);
        let x = uniform(&mut r, &[3, 5], -1.0, 1.0);
        let c = r.random_range(-2.0..2.0);
        grad_error(&x, None, &mut r, |_, x| {
            project(x.scale(c).add_scalar(0.3).abs().add(x.square())?, s)
        })
    }));
    cases.push(Case::new("sum/mean", LAYER_TOL, |s| {
        let mut r = rng(1500 + s);
        let x = uniform(&mut r, &[4, 4], -1.0, 1.0);
        grad_error(&x, None, &mut r, |_, x| x.square().sum().add(x.mean()))
    }));

    cases.push(Case::new("l1", LOSS_TOL, |s| {
        let (x, y) = image_pair(2000 + s, 6, 6);
        grad_error(&x, None, &mut rng(s), |t, x| loss::l1_loss(x, t.constant(&y)))
    }));
    cases.push(Case::new("ssim", LOSS_TOL, |s| {
        let cfg = scales(2);
        let (x, y) = image_pair(2100 + s, 14, 13);
        grad_error(&x, Some(40), &mut rng(s), |t, x| loss::ssim(x, t.constant(&y), &cfg))
    }));
    cases.push(Case::new("msssim_loss", LOSS_TOL, |s| {
        let cfg = scales(2);
        let (x, y) = image_pair(2200 + s, 24, 23);
        grad_error(&x, Some(40), &mut rng(s), |t, x| loss::msssim_loss(x, t.constant(&y), &cfg))
    }));
    cases.push(Case::new("pixel_loss", LOSS_TOL, |s| {
        let cfg = scales(2);
        let (x, y) = image_pair(2300 + s, 22, 22);
        grad_error(&x, Some(40), &mut rng(s), |t, x| loss::pixel_loss(x, t.constant(&y), &cfg))
    }));
    cases.push(Case::new("feature_loss", LOSS_TOL, |s| {
        let fx = FeatureExtractor::seeded(3);
        let (x, y) = image_pair(2400 + s, 8, 8);
        grad_error(&x, Some(24), &mut rng(s), |t, x| {
            loss::feature_loss(x, t.constant(&y), &fx, FeatureLayer::Block2)
        })
    }));
    cases.push(Case::new("total_loss", LOSS_TOL, |s| {
        let (cfg, fx) = (scales(1), FeatureExtractor::seeded(3));
        let (x, y) = image_pair(2500 + s, 12, 12);
        grad_error(&x, Some(24), &mut rng(s), |t, x| {
            loss::total_loss(x, t.constant(&y), &cfg, Some(&fx))
        })
    }));
    cases
}

/// Relative error of every network parameter gradient through the total
/// loss, probing each tensor at least once plus random extra coordinates.
pub fn network_error() -> f64 {
    let spec = NetSpec::desk(&Cfa::RGGB);
    let params = NetParams::build(spec, 9).unwrap();
    let mut r = rng(77);
    let input = uniform(&mut r, &[1, 4, 8, 8], 0.0, 0.6);
    let target = uniform(&mut r, &[1, 3, 16, 16], 0.05, 0.95);
    let fx = FeatureExtractor::seeded(4);
    let cfg = scales(1);
    let loss_of = |p: &NetParams| -> (f64, Vec<Tensor>) {
        let tape = Tape::new();
        let vars = p.bind(&tape);
        let pred = p.forward(&vars, tape.constant(&input)).unwrap();
        let total = loss::total_loss(pred, tape.constant(&target), &cfg, Some(&fx)).unwrap();
        let value = total.value().item().unwrap();
        let mut g = tape.backward(total).unwrap();
        (value, vars.iter().map(|v| g.take(*v).unwrap()).collect())
    };
    let (_, analytic) = loss_of(&params);

    let n = params.tensors().len();
    let mut coords: Vec<(usize, usize)> = (0..n)
        .map(|i| (i, r.random_range(0..params.tensors()[i].len())))
        .collect();
    while coords.len() < 120 {
        let i = r.random_range(0..n);
        coords.push((i, r.random_range(0..params.tensors()[i].len())));
    }
    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    for &(i, j) in &coords {
        let mut plus = params.clone();
        plus.tensors_mut()[i].data_mut()[j] += FD_STEP;
        let mut minus = params.clone();
        minus.tensors_mut()[i].data_mut()[j] -= FD_STEP;
        let numeric = (loss_of(&plus).0 - loss_of(&minus).0) / (2.0 * FD_STEP);
        let a = analytic[i].data()[j];
        diff += (a - numeric).powi(2);
        na += a * a;
        nn += numeric * numeric;
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt())
}
