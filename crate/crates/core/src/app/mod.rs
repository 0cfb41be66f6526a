//! Command-line front end: argument definitions and the six commands.
//!
//! Every command returns an [`Outcome`]; errors map to exit codes through
//! [`exit_code`].

pub mod config;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{NetOptions, RunConfig};
pub use manifest::{ManifestCore, RunManifest};

use crate::contrast::{enhance_contrast, lightness_histogram, DehazeParams};
use crate::error::{Error, Result};
use crate::image::{list_images, read_image, write_image, RgbImage};
use crate::loss::{
    max_feasible_scales, ms_ssim_value, psnr, ssim_report, FeatureExtractor, LossConfig,
};
use crate::net::{restore_frame, Checkpoint, NetParams, NetSpec};
use crate::raw::{
    amplification_from_exposures, read_llrw_file, synthesize_pair, write_llrw_file, Cfa,
    NoiseParams, REFERENCE_EXPOSURE_S,
};
use crate::train::{append_history_file, write_history_file, Trainer, TrainingPair};

pub const INDEX_FILE: &str = "index.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FINAL_CHECKPOINT: &str = "final.llck";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Parser)]
#[command(name = "lowlight", version, about = "Learned low-light RAW camera pipeline")]
pub struct Cli {
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Builds a synthetic low-light dataset from clean images.
    Synth(SynthArgs),
    /// Trains a restoration network.
    Train(TrainArgs),
    /// Restores one RAW frame.
    Infer(InferArgs),
    /// Enhances the contrast of one image.
    Enhance(EnhanceArgs),
    /// Compares predictions against references.
    Eval(EvalArgs),
    /// Trains every loss-term combination and reports PSNR.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CfaArg {
    Rggb,
    Xtrans,
}

impl CfaArg {
    pub fn cfa(self) -> Cfa {
        match self {
            CfaArg::Rggb => Cfa::RGGB,
            CfaArg::Xtrans => Cfa::XTRANS,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub input_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "rggb")]
    pub cfa: CfaArg,
    /// Exposure ratio between reference and short exposure, at least 1.
    #[arg(long, default_value_t = 100.0)]
    pub ratio: f64,
    /// Photo-electrons at full scale; 0 disables shot noise.
    #[arg(long, default_value_t = NoiseParams::default().photon_scale)]
    pub noise_photon: f64,
    /// Read-noise standard deviation in ADU; 0 disables it.
    #[arg(long, default_value_t = NoiseParams::default().read_sigma)]
    pub noise_read: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory containing `index.csv`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also save `epoch-NNNNN.llck` every this many epochs; 0 disables.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: u32,
    /// Fine-tune on contrast-enhanced targets after base training.
    #[arg(long)]
    pub finetune: bool,
    /// LLFX feature-extractor weights; a seeded extractor otherwise.
    #[arg(long)]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub raw: PathBuf,
    /// Brightening factor; overrides `--reference-exposure`.
    #[arg(long)]
    pub amplify: Option<f64>,
    /// Target exposure in seconds; the factor is its ratio to the frame's.
    #[arg(long, default_value_t = REFERENCE_EXPOSURE_S)]
    pub reference_exposure: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Ground truth; its PSNR against the output is printed.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub sixteen_bit: bool,
}

#[derive(Debug, Args)]
pub struct DehazeArgs {
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub t0: Option<f64>,
    #[arg(long)]
    pub airlight_fraction: Option<f64>,
    #[arg(long)]
    pub guided_radius: Option<usize>,
    #[arg(long)]
    pub guided_eps: Option<f64>,
}

impl DehazeArgs {
    pub fn apply(&self, base: &DehazeParams) -> DehazeParams {
        DehazeParams {
            patch_size: self.patch_size.unwrap_or(base.patch_size),
            omega: self.omega.unwrap_or(base.omega),
            t0: self.t0.unwrap_or(base.t0),
            airlight_fraction: self.airlight_fraction.unwrap_or(base.airlight_fraction),
            guided_radius: self.guided_radius.or(base.guided_radius),
            guided_eps: self.guided_eps.unwrap_or(base.guided_eps),
        }
    }
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub dehaze: DehazeArgs,
    /// Writes before/after lightness histograms as CSV.
    #[arg(long)]
    pub emit_histograms: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub bins: usize,
    #[arg(long)]
    pub sixteen_bit: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred_dir: PathBuf,
    #[arg(long)]
    pub ref_dir: PathBuf,
    /// Metrics CSV; standard output otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Result CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
}

/// How a command finished without a fatal error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some inputs were skipped; the rest were processed.
    Partial,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Partial => 2,
        }
    }
}

/// 1 for usage and validation errors, 2 for runtime failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) | Error::InvalidShape(_) | Error::UnsupportedCfa(_) => 1,
        Error::Format { .. } | Error::Io(_) | Error::State(_) => 2,
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    match cli.command {
        Command::Synth(a) => synth(&a, cfg.train.seed),
        Command::Train(a) => train(&a, &cfg),
        Command::Infer(a) => infer(&a),
        Command::Enhance(a) => enhance(&a, &cfg),
        Command::Eval(a) => eval(&a, &cfg),
        Command::Ablate(a) => ablate(&a, &cfg),
    }
}

fn io_context(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_context(dir, e.into()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn core(command: &str, cfg: &RunConfig) -> ManifestCore {
    ManifestCore {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        seed: cfg.train.seed,
        config: cfg.clone(),
        net: None,
        dataset_fingerprint: None,
        feature_extractor: None,
        finetune: false,
    }
}

/// Writes one synthetic pair per readable image under `input_dir`.
///
/// Images are cropped to a whole number of CFA tiles. Image `i` in file-name
/// order uses seed `seed + i`.
pub fn synth(a: &SynthArgs, seed: u64) -> Result<Outcome> {
    let noise = NoiseParams {
        photon_scale: a.noise_photon,
        read_sigma: a.noise_read,
    };
    if !(a.ratio.is_finite() && a.ratio >= 1.0) {
        return Err(Error::arg(format!("--ratio must be >= 1, got {}", a.ratio)));
    }
    if !(noise.photon_scale >= 0.0 && noise.read_sigma >= 0.0) {
        return Err(Error::arg("noise parameters must be >= 0"));
    }
    let cfa = a.cfa.cfa();
    let inputs = list_images(&a.input_dir).map_err(|e| io_context(&a.input_dir, e))?;
    if inputs.is_empty() {
        return Err(Error::arg(format!(
            "no PNG or PPM images in {}",
            a.input_dir.display()
        )));
    }
    ensure_dir(&a.out_dir)?;
    let mut index = csv::Writer::from_path(a.out_dir.join(INDEX_FILE)).map_err(csv_err)?;
    index.write_record(["raw", "target", "ratio"]).map_err(csv_err)?;
    let mut failed = 0usize;
    for (i, path) in inputs.iter().enumerate() {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let result = (|| -> Result<()> {
            let img = read_image(path)?;
            let p = cfa.period();
            let (h, w) = (img.height() / p * p, img.width() / p * p);
            if h == 0 || w == 0 {
                return Err(Error::shape(format!(
                    "{}x{} image is smaller than one {p}x{p} CFA tile",
                    img.height(),
                    img.width()
                )));
            }
            let img = RgbImage::from_tensor(img.tensor().crop(0, 0, h, w)?)?;
            let (raw, target) = synthesize_pair(&img, cfa, a.ratio, &noise, seed.wrapping_add(i as u64))?;
            let raw_name = format!("{stem}.llrw");
            let target_name = format!("{stem}.png");
            write_llrw_file(&a.out_dir.join(&raw_name), &raw)?;
            write_image(&a.out_dir.join(&target_name), &target, true)?;
            index
                .write_record([raw_name, target_name, a.ratio.to_string()])
                .map_err(csv_err)?;
            Ok(())
        })();
        if let Err(e) = result {
            log::error!("{}: {e}", path.display());
            eprintln!("skipped {}: {e}", path.display());
            failed += 1;
        }
    }
    index.flush()?;
    let mut c = core("synth", &RunConfig::default());
    c.seed = seed;
    c.dataset_fingerprint = Some(dataset_fingerprint(&a.out_dir)?);
    RunManifest::new(c).save(&a.out_dir.join(MANIFEST_FILE))?;
    log::info!("synthesized {} pairs", inputs.len() - failed);
    if failed == inputs.len() {
        Err(Error::State("no image could be converted".into()))
    } else if failed > 0 {
        Ok(Outcome::Partial)
    } else {
        Ok(Outcome::Success)
    }
}

#[derive(Debug, serde::Deserialize)]
struct IndexRow {
    raw: String,
    target: String,
    ratio: f64,
}

fn read_index(dir: &Path) -> Result<Vec<IndexRow>> {
    let path = dir.join(INDEX_FILE);
    if !path.is_file() {
        return Err(Error::arg(format!("{} has no {INDEX_FILE}", dir.display())));
    }
    let mut r = csv::Reader::from_path(&path).map_err(csv_err)?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<IndexRow>, _>>()
        .map_err(|e| Error::format("dataset index", e.to_string()))?;
    if rows.is_empty() {
        return Err(Error::arg(format!("{} lists no pairs", path.display())));
    }
    Ok(rows)
}

/// SHA-256 over the index and every file it lists, in index order.
pub fn dataset_fingerprint(dir: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(std::fs::read(dir.join(INDEX_FILE))?);
    for row in read_index(dir)? {
        for name in [&row.raw, &row.target] {
            let path = dir.join(name);
            h.update(std::fs::read(&path).map_err(|e| io_context(&path, e.into()))?);
        }
    }
    Ok(manifest::hex(&h.finalize()))
}

/// Loads every pair listed in `dir/index.csv`; the ratio becomes the
/// amplification factor.
pub fn load_dataset(dir: &Path) -> Result<Vec<TrainingPair>> {
    read_index(dir)?
        .into_iter()
        .map(|row| {
            let raw_path = dir.join(&row.raw);
            let target_path = dir.join(&row.target);
            Ok(TrainingPair {
                raw: read_llrw_file(&raw_path).map_err(|e| io_context(&raw_path, e))?,
                target: read_image(&target_path).map_err(|e| io_context(&target_path, e))?,
                amplification: row.ratio,
            })
        })
        .collect()
}

fn feature_extractor(
    path: Option<&Path>,
    seed: u64,
    loss: &LossConfig,
) -> Result<(Option<Arc<FeatureExtractor>>, Option<String>)> {
    if !loss.uses_features() {
        return Ok((None, None));
    }
    Ok(match path {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| io_context(p, e.into()))?;
            let fx = FeatureExtractor::read_llfx(&mut bytes.as_slice())?;
            (Some(Arc::new(fx)), Some(manifest::sha256_hex(&bytes)))
        }
        None => (
            Some(Arc::new(FeatureExtractor::seeded(seed))),
            Some(format!("seeded:{seed}")),
        ),
    })
}

fn dataset_cfa(data: &[TrainingPair]) -> Cfa {
    data[0].raw.cfa()
}

fn checkpoint_path(out: &Path, epoch: u32) -> PathBuf {
    out.join(format!("epoch-{epoch:05}.llck"))
}

/// Trains, optionally resuming and fine-tuning, and writes `final.llck`,
/// `history.csv` and `manifest.json` under `--out`.
pub fn train(a: &TrainArgs, cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let tcfg = cfg.train_config();
    let data = load_dataset(&a.data)?;
    let cfa = dataset_cfa(&data);
    let spec = cfg.net.spec_for(&cfa);
    if let Some(ch) = cfg.net.in_channels {
        if ch != cfa.packed_channels() {
            return Err(Error::arg(format!(
                "config expects {ch} input channels but the dataset is {} ({} packed channels)",
                cfa.name(),
                cfa.packed_channels()
            )));
        }
    }
    spec.validate()?;
    let (fx, fx_id) = feature_extractor(a.features.as_deref(), tcfg.feature_seed, &tcfg.loss)?;

    let mut c = core("train", cfg);
    c.net = Some(spec);
    c.dataset_fingerprint = Some(dataset_fingerprint(&a.data)?);
    c.feature_extractor = fx_id;
    c.finetune = a.finetune;
    let manifest = RunManifest::new(c);
    let hash = manifest.digest();

    let mut trainer = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p).map_err(|e| io_context(p, e))?;
            if *ck.params.spec() != spec {
                return Err(Error::arg(format!(
                    "checkpoint network {:?} differs from the configured {:?}",
                    ck.params.spec(),
                    spec
                )));
            }
            if ck.manifest_hash != hash {
                log::warn!("resuming a checkpoint produced under a different manifest");
            }
            Trainer::resume(ck, &data, tcfg.clone(), fx)?
        }
        None => Trainer::new(NetParams::build(spec, tcfg.seed)?, &data, tcfg.clone(), fx)?,
    };
    let resumed = a.resume.is_some();

    ensure_dir(&a.out)?;
    manifest.save(&a.out.join(MANIFEST_FILE))?;
    let every = a.checkpoint_every;
    let out = a.out.clone();
    let mut on_epoch = move |t: &Trainer| -> Result<()> {
        let e = t.epoch();
        log::info!("epoch {e} lr {:e}", t.current_lr());
        if every > 0 && e.is_multiple_of(every) {
            t.checkpoint(hash).save(&checkpoint_path(&out, e))?;
        }
        Ok(())
    };
    trainer.run(&mut on_epoch)?;
    if a.finetune {
        trainer.finetune_contrast(&cfg.dehaze, &mut on_epoch)?;
    }
    trainer.checkpoint(hash).save(&a.out.join(FINAL_CHECKPOINT))?;
    let history = a.out.join(HISTORY_FILE);
    if resumed {
        append_history_file(&history, trainer.history())?;
    } else {
        write_history_file(&history, trainer.history())?;
    }
    Ok(Outcome::Success)
}

/// Restores one frame and writes it as PNG (or PPM by extension).
pub fn infer(a: &InferArgs) -> Result<Outcome> {
    let ck = Checkpoint::load(&a.checkpoint).map_err(|e| io_context(&a.checkpoint, e))?;
    let raw = read_llrw_file(&a.raw).map_err(|e| io_context(&a.raw, e))?;
    let amp = match a.amplify {
        Some(f) if f.is_finite() && f > 0.0 => f,
        Some(f) => return Err(Error::arg(format!("--amplify must be positive, got {f}"))),
        None => amplification_from_exposures(a.reference_exposure, raw.exposure_s())?,
    };
    let img = restore_frame(&ck.params, &raw, amp)?;
    write_image(&a.out, &img, a.sixteen_bit).map_err(|e| io_context(&a.out, e))?;
    if let Some(r) = &a.reference {
        let reference = read_image(r).map_err(|e| io_context(r, e))?;
        println!("psnr_db={:.4}", psnr(&img, &reference)?);
    }
    Ok(Outcome::Success)
}

pub fn enhance(a: &EnhanceArgs, cfg: &RunConfig) -> Result<Outcome> {
    let params = a.dehaze.apply(&cfg.dehaze);
    params.validate()?;
    if a.bins == 0 {
        return Err(Error::arg("--bins must be positive"));
    }
    let img = read_image(&a.input).map_err(|e| io_context(&a.input, e))?;
    let out = enhance_contrast(&img, &params)?;
    write_image(&a.out, &out, a.sixteen_bit).map_err(|e| io_context(&a.out, e))?;
    if let Some(path) = &a.emit_histograms {
        write_histograms(path, &img, &out, a.bins)?;
    }
    Ok(Outcome::Success)
}

/// Columns `bin,lower,upper,before,after`.
pub fn write_histograms(path: &Path, before: &RgbImage, after: &RgbImage, bins: usize) -> Result<()> {
    let hb = lightness_histogram(before, bins);
    let ha = lightness_histogram(after, bins);
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["bin", "lower", "upper", "before", "after"]).map_err(csv_err)?;
    for (i, (b, af)) in hb.iter().zip(&ha).enumerate() {
        w.write_record([
            i.to_string(),
            (i as f64 / bins as f64).to_string(),
            ((i + 1) as f64 / bins as f64).to_string(),
            b.to_string(),
            af.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// PSNR, SSIM and MS-SSIM of one pair. MS-SSIM uses as many of the
/// configured scales as the image extent allows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub msssim: f64,
}

pub fn pair_metrics(pred: &RgbImage, reference: &RgbImage, loss: &LossConfig) -> Result<PairMetrics> {
    let scales = loss
        .msssim_scales
        .min(max_feasible_scales(pred.height().min(pred.width()), loss.window_size));
    let cfg = LossConfig {
        msssim_scales: scales.max(1),
        ..loss.clone()
    };
    let (p, r) = (pred.tensor(), reference.tensor());
    Ok(PairMetrics {
        psnr: psnr(pred, reference)?,
        ssim: ssim_report(p, r, &cfg)?.mean,
        msssim: ms_ssim_value(p, r, &cfg)?,
    })
}

fn stems(dir: &Path) -> Result<std::collections::BTreeMap<String, PathBuf>> {
    let mut map = std::collections::BTreeMap::new();
    for p in list_images(dir).map_err(|e| io_context(dir, e))? {
        if let Some(s) = p.file_stem().and_then(|s| s.to_str()) {
            map.entry(s.to_string()).or_insert(p);
        }
    }
    Ok(map)
}

/// Pairs images by file stem; unpaired or unreadable files are reported and
/// skipped.
pub fn eval(a: &EvalArgs, cfg: &RunConfig) -> Result<Outcome> {
    let preds = stems(&a.pred_dir)?;
    let refs = stems(&a.ref_dir)?;
    let mut partial = false;
    for name in preds.keys().filter(|k| !refs.contains_key(*k)) {
        eprintln!("unpaired prediction: {name}");
        partial = true;
    }
    for name in refs.keys().filter(|k| !preds.contains_key(*k)) {
        eprintln!("unpaired reference: {name}");
        partial = true;
    }
    let mut rows = Vec::new();
    for (name, pred_path) in &preds {
        let Some(ref_path) = refs.get(name) else { continue };
        let m = (|| pair_metrics(&read_image(pred_path)?, &read_image(ref_path)?, &cfg.loss))();
        match m {
            Ok(m) => rows.push((name.clone(), m)),
            Err(e) => {
                eprintln!("skipped {name}: {e}");
                partial = true;
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::arg("no prediction/reference pairs could be evaluated"));
    }
    let out: Box<dyn std::io::Write> = match &a.out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| io_context(p, e.into()))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["name", "psnr", "ssim", "msssim"]).map_err(csv_err)?;
    let n = rows.len() as f64;
    let mut sum = [0.0; 3];
    for (name, m) in &rows {
        sum[0] += m.psnr;
        sum[1] += m.ssim;
        sum[2] += m.msssim;
        w.write_record([name.clone(), m.psnr.to_string(), m.ssim.to_string(), m.msssim.to_string()])
            .map_err(csv_err)?;
    }
    w.write_record([
        "mean".to_string(),
        (sum[0] / n).to_string(),
        (sum[1] / n).to_string(),
        (sum[2] / n).to_string(),
    ])
    .map_err(csv_err)?;
    w.flush()?;
    Ok(if partial { Outcome::Partial } else { Outcome::Success })
}

/// The seven loss-term combinations compared by `ablate`, as
/// `(name, alpha, beta)`. Mixed weights come from `base`.
pub fn ablation_configs(base: &LossConfig) -> [(&'static str, f64, f64); 7] {
    let (a, b) = (base.alpha, base.beta);
    [
        ("l1", 1.0, 1.0),
        ("msssim", 1.0, 0.0),
        ("l_pix", 1.0, b),
        ("l_feat", 0.0, b),
        ("l_feat+l1", a, 1.0),
        ("l_feat+msssim", a, 0.0),
        ("final", a, b),
    ]
}

/// Mean PSNR of whole-frame restorations over `data`.
pub fn dataset_psnr(params: &NetParams, data: &[TrainingPair]) -> Result<f64> {
    let mut sum = 0.0;
    for pair in data {
        sum += psnr(&restore_frame(params, &pair.raw, pair.amplification)?, &pair.target)?;
    }
    Ok(sum / data.len() as f64)
}

/// One result row of [`ablate`].
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub config: &'static str,
    pub alpha: f64,
    pub beta: f64,
    pub psnr: f64,
}

/// Trains each loss combination from the same initialization and evaluates
/// it on the training pairs.
pub fn run_ablation(
    data: &[TrainingPair],
    cfg: &RunConfig,
    spec: NetSpec,
    features: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (name, alpha, beta) in ablation_configs(&cfg.loss) {
        let mut tcfg = cfg.train_config();
        tcfg.loss.alpha = alpha;
        tcfg.loss.beta = beta;
        let (fx, _) = feature_extractor(features, tcfg.feature_seed, &tcfg.loss)?;
        log::info!("ablation {name}: alpha {alpha} beta {beta}");
        let outcome = crate::train::train(data, &tcfg, spec, fx)?;
        rows.push(AblationRow {
            config: name,
            alpha,
            beta,
            psnr: dataset_psnr(&outcome.params, data)?,
        });
    }
    Ok(rows)
}

pub fn ablate(a: &AblateArgs, cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let data = load_dataset(&a.data)?;
    let spec = cfg.net.spec_for(&dataset_cfa(&data));
    spec.validate()?;
    let rows = run_ablation(&data, cfg, spec, a.features.as_deref())?;
    let mut w = csv::Writer::from_path(&a.out).map_err(csv_err)?;
    w.write_record(["config", "alpha", "beta", "psnr"]).map_err(csv_err)?;
    for r in &rows {
        w.write_record([r.config.to_string(), r.alpha.to_string(), r.beta.to_string(), r.psnr.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    let mut c = core("ablate", cfg);
    c.net = Some(spec);
    c.dataset_fingerprint = Some(dataset_fingerprint(&a.data)?);
    let manifest_path = a.out.with_extension("manifest.json");
    RunManifest::new(c).save(&manifest_path)?;
    Ok(Outcome::Success)
}
