//! Optimization loop: batch size 1, random crops, dihedral augmentation,
//! Adam with a single step-down of the learning rate.
//!
//! Every epoch draws from its own ChaCha stream keyed by the epoch index, so
//! a run resumed from an epoch-boundary checkpoint replays the exact random
//! choices of an uninterrupted run.

mod adam;
mod augment;

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamState};
pub use augment::{augment, Dihedral};

use crate::contrast::{enhance_contrast, DehazeParams};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::loss::{loss_terms, FeatureExtractor, LossConfig};
use crate::net::{Checkpoint, NetParams, NetSpec};
use crate::raw::{preprocess, RawFrame};
use crate::tensor::{Tape, Tensor};

/// Target-feature cache entries kept per run.
const FEATURE_CACHE_LIMIT: usize = 4096;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u32,
    pub lr_initial: f64,
    pub lr_after: f64,
    /// First epoch trained at `lr_after`; `None` means `epochs / 2`.
    pub lr_switch_epoch: Option<u32>,
    /// Crop side in output pixels; `None` takes the largest valid crop and
    /// is written `"full"`.
    #[serde(with = "crop_size_serde")]
    pub crop_size: Option<usize>,
    /// Random rotations and flips.
    pub augment: bool,
    pub seed: u64,
    pub finetune_epochs: u32,
    /// Seed of the random feature extractor when no weight file is given.
    pub feature_seed: u64,
    /// Not part of the serialized form; configuration files carry it in a
    /// separate table.
    #[serde(skip)]
    pub loss: LossConfig,
}

mod crop_size_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Side(usize),
        Name(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(n) => Repr::Side(*n),
            None => Repr::Name("full".into()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Side(n) => Ok(Some(n)),
            Repr::Name(n) if n == "full" => Ok(None),
            Repr::Name(n) => Err(serde::de::Error::custom(format!(
                "crop_size must be a positive integer or \"full\", got {n:?}"
            ))),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4000,
            lr_initial: 1e-4,
            lr_after: 1e-5,
            lr_switch_epoch: None,
            crop_size: Some(512),
            augment: true,
            seed: 0,
            finetune_epochs: 100,
            feature_seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn switch_epoch(&self) -> u32 {
        self.lr_switch_epoch.unwrap_or(self.epochs / 2)
    }

    /// Step schedule: `lr_initial` before the switch epoch, `lr_after` from it on.
    pub fn lr_at(&self, epoch: u32) -> f64 {
        if epoch < self.switch_epoch() {
            self.lr_initial
        } else {
            self.lr_after
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_initial > 0.0 && self.lr_after > 0.0) {
            return Err(Error::arg("learning rates must be positive"));
        }
        if self.crop_size == Some(0) {
            return Err(Error::arg("crop size must be positive"));
        }
        self.loss.validate()
    }
}

/// A short exposure, its ground truth and the brightening applied to it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub raw: RawFrame,
    pub target: RgbImage,
    pub amplification: f64,
}

/// One optimizer step's losses; unevaluated terms are `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: u32,
    pub iter: u64,
    pub l1: Option<f64>,
    pub msssim_loss: Option<f64>,
    pub feature_loss: Option<f64>,
    pub total: f64,
}

pub fn write_history(out: impl Write, rows: &[HistoryRow]) -> Result<()> {
    write_rows(out, rows, true)
}

fn write_rows(out: impl Write, rows: &[HistoryRow], header: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    if header {
        w.write_record(["epoch", "iter", "l1", "msssim_loss", "feature_loss", "total"])
            .map_err(csv_err)?;
    }
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.iter.to_string(),
            opt(r.l1),
            opt(r.msssim_loss),
            opt(r.feature_loss),
            r.total.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_history_file(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    write_history(std::fs::File::create(path)?, rows)
}

/// Appends to an existing history file, writing the header only when the
/// file is new or empty.
pub fn append_history_file(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let empty = f.metadata()?.len() == 0;
    write_rows(f, rows, empty)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

struct Prepared {
    input: Tensor,
    target: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct CropKey {
    pair: usize,
    y: usize,
    x: usize,
    transform: Dihedral,
}

/// Resumable training state.
pub struct Trainer {
    cfg: TrainConfig,
    params: NetParams,
    adam: AdamState,
    data: Vec<Prepared>,
    fx: Option<Arc<FeatureExtractor>>,
    cache: HashMap<CropKey, Arc<Tensor>>,
    /// Completed epochs, fine-tuning included.
    epoch: u32,
    /// Learning rate forced for every step, used while fine-tuning.
    fixed_lr: Option<f64>,
    history: Vec<HistoryRow>,
}

impl Trainer {
    /// `fx` is required when the loss has a feature term.
    pub fn new(
        params: NetParams,
        dataset: &[TrainingPair],
        cfg: TrainConfig,
        fx: Option<Arc<FeatureExtractor>>,
    ) -> Result<Self> {
        let adam = AdamState::for_net(&params);
        Self::with_state(params, adam, 0, dataset, cfg, fx)
    }

    /// Continues from an epoch-boundary checkpoint.
    pub fn resume(
        ck: Checkpoint,
        dataset: &[TrainingPair],
        cfg: TrainConfig,
        fx: Option<Arc<FeatureExtractor>>,
    ) -> Result<Self> {
        if ck.seed != cfg.seed {
            return Err(Error::State(format!(
                "checkpoint was trained with seed {}, config has {}",
                ck.seed, cfg.seed
            )));
        }
        Self::with_state(ck.params, ck.adam, ck.epoch, dataset, cfg, fx)
    }

    fn with_state(
        params: NetParams,
        adam: AdamState,
        epoch: u32,
        dataset: &[TrainingPair],
        cfg: TrainConfig,
        fx: Option<Arc<FeatureExtractor>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.loss.uses_features() && fx.is_none() {
            return Err(Error::arg("the loss needs a feature extractor (alpha < 1)"));
        }
        if adam.m.len() != params.tensors().len() {
            return Err(Error::State("optimizer state does not match the network".into()));
        }
        let data = prepare(dataset, params.spec(), &cfg)?;
        Ok(Self {
            cfg,
            params,
            adam,
            data,
            fx,
            cache: HashMap::new(),
            epoch,
            fixed_lr: None,
            history: Vec::new(),
        })
    }

    pub fn params(&self) -> &NetParams {
        &self.params
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    pub fn into_parts(self) -> (NetParams, AdamState, Vec<HistoryRow>) {
        (self.params, self.adam, self.history)
    }

    pub fn checkpoint(&self, manifest_hash: [u8; 32]) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            adam: self.adam.clone(),
            epoch: self.epoch,
            seed: self.cfg.seed,
            manifest_hash,
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.fixed_lr.unwrap_or_else(|| self.cfg.lr_at(self.epoch))
    }

    /// One pass over every pair in a seeded order.
    pub fn run_epoch(&mut self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(u64::from(self.epoch));
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut rng);
        let lr = self.current_lr();
        for idx in order {
            self.step(idx, lr, &mut rng)?;
        }
        self.epoch += 1;
        Ok(())
    }

    /// Runs epochs until `until` have completed, calling `on_epoch` after each.
    pub fn run_until(&mut self, until: u32, mut on_epoch: impl FnMut(&Trainer) -> Result<()>) -> Result<()> {
        while self.epoch < until {
            self.run_epoch()?;
            on_epoch(self)?;
        }
        Ok(())
    }

    /// Trains to `cfg.epochs`.
    pub fn run(&mut self, on_epoch: impl FnMut(&Trainer) -> Result<()>) -> Result<()> {
        self.run_until(self.cfg.epochs, on_epoch)
    }

    /// Replaces every target by its contrast-enhanced version and trains at
    /// `lr_after` until `epochs + finetune_epochs` epochs have completed.
    /// Base training must be complete.
    pub fn finetune_contrast(
        &mut self,
        dehaze: &DehazeParams,
        on_epoch: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<()> {
        if self.epoch < self.cfg.epochs {
            return Err(Error::State(format!(
                "fine-tuning starts after epoch {}, trainer is at {}",
                self.cfg.epochs, self.epoch
            )));
        }
        for d in &mut self.data {
            let img = RgbImage::from_tensor(d.target.clone())?;
            d.target = enhance_contrast(&img, dehaze)?.into_tensor();
        }
        self.cache.clear();
        self.fixed_lr = Some(self.cfg.lr_after);
        self.run_until(self.cfg.epochs + self.cfg.finetune_epochs, on_epoch)
    }

    fn step(&mut self, idx: usize, lr: f64, rng: &mut ChaCha8Rng) -> Result<()> {
        let r = self.params.spec().upsample;
        let d = self.params.spec().divisibility();
        let pair = &self.data[idx];
        let (_, _, ph, pw) = pair.input.dims4()?;
        let side = crop_side(self.cfg.crop_size, ph, pw, r, d);
        let y = rng.random_range(0..=ph - side);
        let x = rng.random_range(0..=pw - side);
        let transform = if self.cfg.augment {
            Dihedral::random(rng)
        } else {
            Dihedral::IDENTITY
        };
        let input = transform.apply(&pair.input.crop(y, x, side, side)?)?;
        let target = transform.apply(&pair.target.crop(y * r, x * r, side * r, side * r)?)?;

        let target_features = match (&self.fx, self.cfg.loss.uses_features()) {
            (Some(fx), true) => {
                let key = CropKey {
                    pair: idx,
                    y,
                    x,
                    transform,
                };
                Some(match self.cache.get(&key) {
                    Some(f) => f.clone(),
                    None => {
                        let f = Arc::new(fx.features(&target, self.cfg.loss.feature_layer)?);
                        if self.cache.len() < FEATURE_CACHE_LIMIT {
                            self.cache.insert(key, f.clone());
                        }
                        f
                    }
                })
            }
            _ => None,
        };

        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        let pred = self.params.forward(&vars, tape.constant(&input))?;
        let terms = loss_terms(
            pred,
            tape.constant(&target),
            &self.cfg.loss,
            self.fx.as_deref(),
            target_features,
        )?;
        let values = terms.values()?;
        if !values.total.is_finite() {
            return Err(Error::State(format!(
                "loss became non-finite at iteration {}",
                self.adam.t + 1
            )));
        }
        let mut grads = tape.backward(terms.total)?;
        let grads: Vec<Option<Tensor>> = vars.iter().map(|v| grads.take(*v)).collect();
        adam_step(&mut self.params, &grads, &mut self.adam, lr)?;
        self.history.push(HistoryRow {
            epoch: self.epoch,
            iter: self.adam.t,
            l1: values.l1,
            msssim_loss: values.msssim,
            feature_loss: values.feature,
            total: values.total,
        });
        Ok(())
    }
}

/// Largest allowed packed crop side not exceeding the request.
fn crop_side(request: Option<usize>, ph: usize, pw: usize, r: usize, d: usize) -> usize {
    let limit = ph.min(pw);
    let want = request.map_or(limit, |c| (c / r).min(limit));
    want / d * d
}

fn prepare(dataset: &[TrainingPair], spec: &NetSpec, cfg: &TrainConfig) -> Result<Vec<Prepared>> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::arg("training needs at least one pair"))?;
    let cfa = first.raw.cfa();
    if cfa.packed_channels() != spec.in_channels || cfa.pack_factor() != spec.upsample {
        return Err(Error::arg(format!(
            "{} frames do not fit a network with {} inputs and upsample {}",
            cfa.name(),
            spec.in_channels,
            spec.upsample
        )));
    }
    let r = spec.upsample;
    let d = spec.divisibility();
    let mut out = Vec::with_capacity(dataset.len());
    for (i, pair) in dataset.iter().enumerate() {
        if pair.raw.cfa() != cfa {
            return Err(Error::arg(format!(
                "pair {i} uses a {} mosaic; a run cannot mix CFA types",
                pair.raw.cfa().name()
            )));
        }
        if pair.target.height() != pair.raw.height() || pair.target.width() != pair.raw.width() {
            return Err(Error::shape(format!(
                "pair {i}: target {}x{} does not match raw {}x{}",
                pair.target.height(),
                pair.target.width(),
                pair.raw.height(),
                pair.raw.width()
            )));
        }
        let input = preprocess(&pair.raw, pair.amplification)?;
        let (_, _, ph, pw) = input.dims4()?;
        if crop_side(cfg.crop_size, ph, pw, r, d) == 0 {
            return Err(Error::shape(format!(
                "pair {i}: packed {ph}x{pw} frame has no crop divisible by {d}"
            )));
        }
        if let Some(c) = cfg.crop_size {
            if c % (r * d) != 0 {
                return Err(Error::arg(format!(
                    "crop size {c} must be a multiple of {}",
                    r * d
                )));
            }
        }
        out.push(Prepared {
            input,
            target: pair.target.tensor().clone(),
        });
    }
    Ok(out)
}

/// Final parameters and per-step losses of a run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetParams,
    pub adam: AdamState,
    pub history: Vec<HistoryRow>,
}

/// Trains a freshly initialized network for `cfg.epochs` epochs.
pub fn train(
    dataset: &[TrainingPair],
    cfg: &TrainConfig,
    spec: NetSpec,
    fx: Option<Arc<FeatureExtractor>>,
) -> Result<TrainOutcome> {
    let params = NetParams::build(spec, cfg.seed)?;
    let mut t = Trainer::new(params, dataset, cfg.clone(), fx)?;
    t.run(|_| Ok(()))?;
    let (params, adam, history) = t.into_parts();
    Ok(TrainOutcome {
        params,
        adam,
        history,
    })
}

/// Fine-tunes trained `params` on contrast-enhanced targets. Epoch indices
/// continue after `cfg.epochs`; the optimizer state starts fresh.
pub fn finetune_contrast(
    params: NetParams,
    dataset: &[TrainingPair],
    cfg: &TrainConfig,
    dehaze: &DehazeParams,
    fx: Option<Arc<FeatureExtractor>>,
) -> Result<TrainOutcome> {
    let adam = AdamState::for_net(&params);
    let mut t = Trainer::with_state(params, adam, cfg.epochs, dataset, cfg.clone(), fx)?;
    t.finetune_contrast(dehaze, |_| Ok(()))?;
    let (params, adam, history) = t.into_parts();
    Ok(TrainOutcome {
        params,
        adam,
        history,
    })
}
