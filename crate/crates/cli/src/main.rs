//! Command-line surface: noise simulation, metrics, training, enhancement,
//! detection evaluation, and length analytics.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/processing error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hullsight_core::analytics::{diagonal, flag_anomalies, to_millimeters, CalibrationScale, DEFAULT_IQR_K};
use hullsight_core::annotations::parse_detections;
use hullsight_core::detect::{evaluate, Detection, GroundTruth};
use hullsight_core::image::Image;
use hullsight_core::imageio::{load_image, save_image};
use hullsight_core::metrics::metric_report;
use hullsight_core::model::{infer, Checkpoint, ModelConfig};
use hullsight_core::noise::{NoiseKind, NoiseParams};
use hullsight_core::train::{train, TrainConfig};
use hullsight_core::Error;

#[derive(Parser)]
#[command(name = "hullsight", version, about = "Radiation-degraded imaging toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    /// Salt-and-pepper noise.
    Sp,
    /// Poisson shot noise.
    Shot,
}

impl From<KindArg> for NoiseKind {
    fn from(k: KindArg) -> NoiseKind {
        match k {
            KindArg::Sp => NoiseKind::SaltPepper,
            KindArg::Shot => NoiseKind::Shot,
        }
    }
}

/// `WxH` image extent, e.g. `640x480`.
#[derive(Clone, Copy)]
struct ImgSize {
    w: usize,
    h: usize,
}

fn parse_img_size(s: &str) -> Result<ImgSize, String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got '{s}'"))?;
    let parse = |v: &str| v.parse::<usize>().map_err(|_| format!("invalid extent '{v}'"));
    let (w, h) = (parse(w)?, parse(h)?);
    if w == 0 || h == 0 {
        return Err("image extents must be positive".into());
    }
    Ok(ImgSize { w, h })
}

#[derive(Subcommand)]
enum Command {
    /// Corrupt an image with salt-and-pepper or shot noise.
    Noise(NoiseCmd),
    /// PSNR and SSIM of a test image against a reference.
    Metrics(MetricsCmd),
    /// Train the denoise + super-resolution model.
    Train(TrainCmd),
    /// Run a trained model over an image.
    Enhance(EnhanceCmd),
    /// Evaluate detection files against ground truth (mAP, PR).
    EvalDet(EvalDetCmd),
    /// Bounding-box diagonal lengths from a prediction file.
    Measure(MeasureCmd),
    /// IQR-based length anomaly flagging from a prediction file.
    Anomaly(AnomalyCmd),
}

#[derive(Args)]
struct NoiseCmd {
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Salt probability (kind sp).
    #[arg(long, default_value_t = 0.0)]
    ps: f64,
    /// Pepper probability (kind sp).
    #[arg(long, default_value_t = 0.0)]
    pp: f64,
    /// Per-pixel corruption probability (kind shot).
    #[arg(long, default_value_t = 0.0)]
    p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    input: PathBuf,
    output: PathBuf,
}

#[derive(Args)]
struct MetricsCmd {
    /// Reference (ground-truth) image.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Image under test.
    #[arg(long = "test")]
    test: PathBuf,
}

#[derive(Args)]
struct TrainCmd {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory of clean reference images.
    #[arg(long)]
    data: PathBuf,
    /// Noise kind applied during training (overrides the config).
    #[arg(long, value_enum)]
    noise: Option<KindArg>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnhanceCmd {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out-denoised")]
    out_denoised: PathBuf,
    #[arg(long = "out-sr")]
    out_sr: PathBuf,
}

#[derive(Args)]
struct EvalDetCmd {
    /// Directory of ground-truth .txt files (`class cx cy w h`).
    #[arg(long)]
    gt: PathBuf,
    /// Directory of prediction .txt files (`class cx cy w h conf`).
    #[arg(long)]
    pred: PathBuf,
    /// Image extent the normalized boxes refer to, as WxH.
    #[arg(long = "img-size", value_parser = parse_img_size)]
    img_size: ImgSize,
}

#[derive(Args)]
struct MeasureCmd {
    /// Prediction .txt file (`class cx cy w h conf`).
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "img-size", value_parser = parse_img_size)]
    img_size: ImgSize,
    /// Isotropic calibration scale; adds millimeter lengths when given.
    #[arg(long = "mm-per-px")]
    mm_per_px: Option<f64>,
    /// Input image to draw the boxes on (requires --overlay).
    #[arg(long, requires = "overlay")]
    image: Option<PathBuf>,
    /// Write a PNG with the predicted boxes drawn in.
    #[arg(long, requires = "image")]
    overlay: Option<PathBuf>,
}

#[derive(Args)]
struct AnomalyCmd {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "img-size", value_parser = parse_img_size)]
    img_size: ImgSize,
    /// IQR multiplier for the upper outlier bound.
    #[arg(long, default_value_t = DEFAULT_IQR_K)]
    k: f64,
}

/// TOML run configuration: model and optimizer sections plus a run seed.
#[derive(Default, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    seed: Option<u64>,
    model: ModelConfigToml,
    train: TrainConfig,
}

/// ModelConfig with TOML-friendly per-field defaults.
#[derive(serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ModelConfigToml {
    base_channels: usize,
    r1: usize,
    r2: usize,
    sr_scale: usize,
    in_channels: usize,
}

impl Default for ModelConfigToml {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelConfigToml {
            base_channels: m.base_channels,
            r1: m.r1,
            r2: m.r2,
            sr_scale: m.sr_scale,
            in_channels: m.in_channels,
        }
    }
}

impl From<&ModelConfigToml> for ModelConfig {
    fn from(t: &ModelConfigToml) -> ModelConfig {
        ModelConfig {
            base_channels: t.base_channels,
            r1: t.r1,
            r2: t.r2,
            sr_scale: t.sr_scale,
            in_channels: t.in_channels,
        }
    }
}

fn env_seed() -> Result<Option<u64>, Error> {
    match std::env::var("HULLSIGHT_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::Config(format!("HULLSIGHT_SEED '{v}' is not a valid seed"))),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are successful terminations; anything else is a
            // usage error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Noise(cmd) => {
            let seed = env_seed()?.unwrap_or(cmd.seed);
            let params = match cmd.kind {
                KindArg::Sp => NoiseParams::salt_pepper(cmd.ps, cmd.pp, seed),
                KindArg::Shot => NoiseParams::shot(cmd.p, seed),
            };
            params.validate()?;
            let img = load_image(&cmd.input)?;
            save_image(&cmd.output, &params.apply(&img)?)
        }
        Command::Metrics(cmd) => {
            let reference = load_image(&cmd.reference)?;
            let test = load_image(&cmd.test)?;
            let report = metric_report(&reference, &test)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Train(cmd) => {
            let text = std::fs::read_to_string(&cmd.config)?;
            let run_cfg: RunConfig = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", cmd.config.display())))?;
            let model_cfg = ModelConfig::from(&run_cfg.model);
            let mut train_cfg = run_cfg.train;
            if let Some(seed) = run_cfg.seed {
                train_cfg.seed = seed;
            }
            if let Some(seed) = env_seed()? {
                train_cfg.seed = seed;
            }
            if let Some(kind) = cmd.noise {
                train_cfg.noise = kind.into();
            }
            let outcome = train(&cmd.data, &model_cfg, &train_cfg)?;
            for log in &outcome.logs {
                eprintln!(
                    "epoch {:3}  lambda {:.1} beta {:.1}  loss {:.5}  val denoise {:.2} dB/{:.4}  val sr {:.2} dB/{:.4}",
                    log.epoch,
                    log.lambda,
                    log.beta,
                    log.mean_loss,
                    log.val_psnr_denoise,
                    log.val_ssim_denoise,
                    log.val_psnr_sr,
                    log.val_ssim_sr
                );
            }
            outcome.checkpoint.save(&cmd.out)?;
            let last = outcome.logs.last().expect("at least one epoch");
            println!("{}", serde_json::to_string_pretty(last)?);
            Ok(())
        }
        Command::Enhance(cmd) => {
            let ckpt = Checkpoint::load(&cmd.ckpt)?;
            let img = load_image(&cmd.input)?;
            let (denoised, sr) = infer(&ckpt, &img)?;
            save_image(&cmd.out_denoised, &denoised)?;
            save_image(&cmd.out_sr, &sr)
        }
        Command::EvalDet(cmd) => {
            let (dets, gts) = load_detection_dirs(&cmd.gt, &cmd.pred, cmd.img_size)?;
            let report = evaluate(&dets, &gts);
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Measure(cmd) => {
            let records = load_predictions(&cmd.pred, cmd.img_size)?;
            let scale = cmd.mm_per_px.map(CalibrationScale::new).transpose()?;
            let measurements: Vec<Measurement> = records
                .iter()
                .enumerate()
                .map(|(index, det)| {
                    let diagonal_px = diagonal(&det.bbox);
                    Measurement {
                        index,
                        class_id: det.class_id,
                        confidence: det.confidence,
                        diagonal_px,
                        length_mm: scale.as_ref().map(|s| to_millimeters(diagonal_px, s)),
                    }
                })
                .collect();
            if let (Some(image), Some(overlay)) = (&cmd.image, &cmd.overlay) {
                let mut img = load_image(image)?;
                for det in &records {
                    draw_box(&mut img, &det.bbox);
                }
                save_image(overlay, &img)?;
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&MeasureReport { measurements })?
            );
            Ok(())
        }
        Command::Anomaly(cmd) => {
            let records = load_predictions(&cmd.pred, cmd.img_size)?;
            let diagonals: Vec<f64> = records.iter().map(|d| diagonal(&d.bbox)).collect();
            let result = flag_anomalies(&diagonals, cmd.k)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
            Ok(())
        }
    }
}

#[derive(serde::Serialize)]
struct Measurement {
    index: usize,
    class_id: u32,
    confidence: f64,
    diagonal_px: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    length_mm: Option<f64>,
}

#[derive(serde::Serialize)]
struct MeasureReport {
    measurements: Vec<Measurement>,
}

fn load_predictions(path: &Path, size: ImgSize) -> Result<Vec<Detection>, Error> {
    let text = std::fs::read_to_string(path)?;
    let image_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_detections(&text, &image_id, size.w, size.h)
}

/// Pair ground-truth and prediction files by name (stem = image id). A
/// ground-truth file without a prediction counterpart contributes only
/// misses; a prediction file without ground truth contributes only false
/// positives.
fn load_detection_dirs(
    gt_dir: &Path,
    pred_dir: &Path,
    size: ImgSize,
) -> Result<(Vec<Detection>, Vec<GroundTruth>), Error> {
    let list = |dir: &Path| -> Result<Vec<PathBuf>, Error> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("txt"))
            .collect();
        files.sort();
        Ok(files)
    };
    let mut gts = Vec::new();
    for path in list(gt_dir)? {
        let image_id = path.file_stem().unwrap().to_string_lossy().into_owned();
        let text = std::fs::read_to_string(&path)?;
        gts.extend(hullsight_core::annotations::parse_ground_truths(
            &text, &image_id, size.w, size.h,
        )?);
    }
    let mut dets = Vec::new();
    for path in list(pred_dir)? {
        let image_id = path.file_stem().unwrap().to_string_lossy().into_owned();
        let text = std::fs::read_to_string(&path)?;
        dets.extend(parse_detections(&text, &image_id, size.w, size.h)?);
    }
    Ok((dets, gts))
}

/// One-pixel rectangle outline; white on grayscale, red on RGB.
fn draw_box(img: &mut Image, bbox: &hullsight_core::detect::BBox) {
    let w = img.width();
    let h = img.height();
    let x0 = (bbox.x_min.round() as usize).min(w.saturating_sub(1));
    let x1 = (bbox.x_max.round() as usize).min(w.saturating_sub(1));
    let y0 = (bbox.y_min.round() as usize).min(h.saturating_sub(1));
    let y1 = (bbox.y_max.round() as usize).min(h.saturating_sub(1));
    let channels = img.channels();
    let paint = |x: usize, y: usize, img: &mut Image| {
        let base = img.pixel_index(x, y);
        let data = img.data_mut();
        if channels == 1 {
            data[base] = 255;
        } else {
            data[base] = 255;
            data[base + 1] = 0;
            data[base + 2] = 0;
        }
    };
    for x in x0..=x1 {
        paint(x, y0, img);
        paint(x, y1, img);
    }
    for y in y0..=y1 {
        paint(x0, y, img);
        paint(x1, y, img);
    }
}
