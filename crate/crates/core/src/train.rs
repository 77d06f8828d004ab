//! Training loop: deterministic patch sampling, on-the-fly corruption,
//! the scheduled joint loss, and SGD with momentum.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::loss::{distance_node, joint_loss_node};
use crate::metrics::{psnr_tensor, schedule_weights, ssim_tensor, SSIM_WINDOW};
use crate::model::{build, Checkpoint, DdsrNet, ModelConfig};
use crate::noise::{sample_training_severity, NoiseKind, NoiseParams};
use crate::rng::{stream_key, SplitMix64};
use crate::sgd::{sgd_step, SgdConfig, SgdState};
use crate::tensor::Tensor;

/// Training hyperparameters. The optimizer defaults follow the reference
/// regime (lr 1e-5, momentum 0.9, weight decay 1e-4); batch, patch, and
/// epochs are sized for desk-scale runs.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: u32,
    /// Low-resolution patch extent; the high-resolution target is
    /// patch * sr_scale on each side.
    pub patch: usize,
    pub seed: u64,
    pub noise: NoiseKind,
    /// When set, every sample is corrupted at this fixed severity
    /// (p_s = p_p = value for salt-and-pepper, P = value for shot noise)
    /// instead of drawing a fresh severity per sample.
    pub fixed_severity: Option<f64>,
    /// Leading fraction of the (name-sorted) images used for training;
    /// the remainder is held out for validation.
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-5,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch: 8,
            epochs: 50,
            patch: 32,
            seed: 0,
            noise: NoiseKind::SaltPepper,
            fixed_severity: None,
            train_fraction: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        SgdConfig { lr: self.lr, momentum: self.momentum, weight_decay: self.weight_decay }
            .validate()?;
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::Config("batch and epochs must be positive".into()));
        }
        if self.patch < SSIM_WINDOW || self.patch % 2 != 0 {
            return Err(Error::Config(format!(
                "patch must be even and at least {SSIM_WINDOW}, got {}",
                self.patch
            )));
        }
        if let Some(v) = self.fixed_severity {
            let limit = match self.noise {
                NoiseKind::SaltPepper => 0.5,
                NoiseKind::Shot => 1.0,
            };
            if !(0.0..=limit).contains(&v) {
                return Err(Error::Config(format!(
                    "fixed_severity {v} outside [0, {limit}] for this noise kind"
                )));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config("train_fraction must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-epoch trace: schedule weights, mean training loss, and held-out
/// quality for both heads.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct EpochLog {
    pub epoch: u32,
    pub lambda: f64,
    pub beta: f64,
    pub mean_loss: f64,
    pub val_psnr_denoise: f64,
    pub val_ssim_denoise: f64,
    pub val_psnr_sr: f64,
    pub val_ssim_sr: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub logs: Vec<EpochLog>,
}

/// One prepared sample: corrupted low-res input plus both clean targets.
struct Sample {
    noisy_lr: Image,
    clean_lr: Image,
    clean_hr: Image,
}

const CROP_STREAM: u64 = 1;

fn prepare_sample(
    img: &Image,
    patch: usize,
    sr_scale: usize,
    noise: NoiseKind,
    fixed_severity: Option<f64>,
    sample_seed: u64,
    center_crop: bool,
) -> Result<Sample> {
    let hr = patch * sr_scale;
    let clean_hr = if img.width() == hr && img.height() == hr {
        img.clone()
    } else {
        let (x0, y0) = if center_crop {
            ((img.width() - hr) / 2, (img.height() - hr) / 2)
        } else {
            let mut rng = SplitMix64::stream(sample_seed, CROP_STREAM);
            (
                rng.next_below((img.width() - hr + 1) as u64) as usize,
                rng.next_below((img.height() - hr + 1) as u64) as usize,
            )
        };
        img.crop(x0, y0, hr, hr)?
    };
    let clean_lr = clean_hr.downscale_box(sr_scale)?;
    let severity = match fixed_severity {
        Some(v) => match noise {
            NoiseKind::SaltPepper => NoiseParams::salt_pepper(v, v, sample_seed),
            NoiseKind::Shot => NoiseParams::shot(v, sample_seed),
        },
        None => sample_training_severity(noise, sample_seed),
    };
    let noisy_lr = severity.apply(&clean_lr)?;
    Ok(Sample { noisy_lr, clean_lr, clean_hr })
}

fn stack(images: &[&Image]) -> Tensor<f32> {
    let first = images[0];
    let (c, h, w) = (first.channels(), first.height(), first.width());
    let mut out = Tensor::zeros([images.len(), c, h, w]);
    for (n, img) in images.iter().enumerate() {
        let t: Tensor<f32> = img.to_tensor();
        let plane = c * h * w;
        out.data_mut()[n * plane..(n + 1) * plane].copy_from_slice(t.data());
    }
    out
}

/// Load every .png/.pgm/.ppm in `dir`, sorted by file name.
pub fn load_image_dir(dir: &Path) -> Result<Vec<(String, Image)>> {
    let mut names: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png") | Some("pgm") | Some("ppm")
            )
        })
        .collect();
    names.sort();
    let mut out = Vec::with_capacity(names.len());
    for path in names {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.push((name, crate::imageio::load_image(&path)?));
    }
    Ok(out)
}

fn epoch_sample_seed(seed: u64, epoch: u32, index: usize) -> u64 {
    stream_key(stream_key(seed, 0x7000_0000 + epoch as u64), index as u64)
}

/// Train a model on the clean reference images in `data_dir`.
pub fn train(
    data_dir: &Path,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    cfg.validate()?;
    let images = load_image_dir(data_dir)?;
    if images.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no training images (.png/.pgm/.ppm) in {}",
            data_dir.display()
        )));
    }
    let hr = cfg.patch * model_cfg.sr_scale;
    for (name, img) in &images {
        if img.channels() != model_cfg.in_channels {
            return Err(Error::Config(format!(
                "{name}: {} channels, model expects {}",
                img.channels(),
                model_cfg.in_channels
            )));
        }
        if img.width() < hr || img.height() < hr {
            return Err(Error::Config(format!(
                "{name}: {}x{} smaller than the {hr}x{hr} training patch",
                img.width(),
                img.height()
            )));
        }
    }
    let n_train = ((images.len() as f64 * cfg.train_fraction).floor() as usize)
        .clamp(1, images.len());
    let (train_imgs, val_imgs) = images.split_at(n_train);
    let batch = cfg.batch.min(n_train);

    // Training graph: the network plus the differentiable joint loss.
    let mut net: DdsrNet<f32> = build(model_cfg, batch, cfg.patch, cfg.patch, cfg.seed)?;
    let c = model_cfg.in_channels;
    let target_dn = net.graph.input("target_dn", [batch, c, cfg.patch, cfg.patch]);
    let target_sr = net.graph.input("target_sr", [batch, c, hr, hr]);
    let lambda = net.graph.input("lambda", [1, 1, 1, 1]);
    let beta = net.graph.input("beta", [1, 1, 1, 1]);
    let d_dn = distance_node(&mut net.graph, target_dn, net.denoised)?;
    let d_sr = distance_node(&mut net.graph, target_sr, net.sr)?;
    let loss = joint_loss_node(&mut net.graph, d_dn, d_sr, lambda, beta)?;
    net.graph.mark_output("loss", loss);

    // Separate single-image graph for validation; parameters are copied in
    // before each evaluation.
    let mut val_net: DdsrNet<f32> = build(model_cfg, 1, cfg.patch, cfg.patch, cfg.seed)?;

    let sgd_cfg = SgdConfig {
        lr: cfg.lr,
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
    };
    let mut sgd_state = SgdState::new();
    let mut logs = Vec::with_capacity(cfg.epochs as usize);

    for epoch in 1..=cfg.epochs {
        let weights = schedule_weights(epoch)?;
        let mut order: Vec<usize> = (0..n_train).collect();
        let mut shuffle_rng = SplitMix64::stream(cfg.seed, 0x0e9c_0000 + epoch as u64);
        for i in (1..order.len()).rev() {
            order.swap(i, shuffle_rng.next_below((i + 1) as u64) as usize);
        }

        let mut loss_sum = 0.0;
        let n_batches = n_train / batch;
        for b in 0..n_batches {
            let mut noisy = Vec::with_capacity(batch);
            let mut clean_lr = Vec::with_capacity(batch);
            let mut clean_hr = Vec::with_capacity(batch);
            for &idx in &order[b * batch..(b + 1) * batch] {
                let sample = prepare_sample(
                    &train_imgs[idx].1,
                    cfg.patch,
                    model_cfg.sr_scale,
                    cfg.noise,
                    cfg.fixed_severity,
                    epoch_sample_seed(cfg.seed, epoch, idx),
                    false,
                )?;
                noisy.push(sample.noisy_lr);
                clean_lr.push(sample.clean_lr);
                clean_hr.push(sample.clean_hr);
            }
            let outputs = net.graph.forward(&[
                ("input", stack(&noisy.iter().collect::<Vec<_>>())),
                ("target_dn", stack(&clean_lr.iter().collect::<Vec<_>>())),
                ("target_sr", stack(&clean_hr.iter().collect::<Vec<_>>())),
                ("lambda", Tensor::scalar(weights.lambda as f32)),
                ("beta", Tensor::scalar(weights.beta as f32)),
            ])?;
            let loss_val = outputs["loss"].scalar_value()? as f64;
            if !loss_val.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss (epoch {epoch}, batch {b})"
                )));
            }
            loss_sum += loss_val;

            let grads = net.graph.backward("loss", &Tensor::scalar(1.0))?;
            let ids = net.graph.param_ids().to_vec();
            let grad_list: Vec<Tensor<f32>> = ids.iter().map(|id| grads[id].clone()).collect();
            let mut values: Vec<(String, Tensor<f32>)> = ids
                .iter()
                .map(|&id| (net.graph.param_name(id).to_string(), net.graph.param_value(id).clone()))
                .collect();
            {
                let mut refs: Vec<(&str, &mut Tensor<f32>)> =
                    values.iter_mut().map(|(n, t)| (n.as_str(), t)).collect();
                sgd_step(&mut refs, &grad_list, &mut sgd_state, &sgd_cfg)?;
            }
            for (id, (_, value)) in ids.into_iter().zip(values) {
                net.graph.set_param_value(id, value)?;
            }
        }

        let val_set = if val_imgs.is_empty() { train_imgs } else { val_imgs };
        let (vp_dn, vs_dn, vp_sr, vs_sr) =
            validate(&mut val_net, &net, val_set, model_cfg, cfg)?;
        logs.push(EpochLog {
            epoch,
            lambda: weights.lambda,
            beta: weights.beta,
            mean_loss: loss_sum / n_batches as f64,
            val_psnr_denoise: vp_dn,
            val_ssim_denoise: vs_dn,
            val_psnr_sr: vp_sr,
            val_ssim_sr: vs_sr,
        });
    }

    Ok(TrainOutcome {
        checkpoint: net.to_checkpoint(cfg.seed, cfg.epochs),
        logs,
    })
}

/// Held-out quality for both heads, averaged over the validation images.
/// Crops and corruption severities are epoch-independent so the series is
/// comparable across epochs.
fn validate(
    val_net: &mut DdsrNet<f32>,
    trained: &DdsrNet<f32>,
    val_imgs: &[(String, Image)],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(f64, f64, f64, f64)> {
    let ids: Vec<_> = trained.graph.param_ids().to_vec();
    let val_ids: Vec<_> = val_net.graph.param_ids().to_vec();
    for (&src, &dst) in ids.iter().zip(&val_ids) {
        val_net
            .graph
            .set_param_value(dst, trained.graph.param_value(src).clone())?;
    }
    let mut sums = [0.0f64; 4];
    for (idx, (_, img)) in val_imgs.iter().enumerate() {
        let sample = prepare_sample(
            img,
            cfg.patch,
            model_cfg.sr_scale,
            cfg.noise,
            cfg.fixed_severity,
            stream_key(cfg.seed, 0x0a11_0000 + idx as u64),
            true,
        )?;
        let outputs = val_net.graph.forward(&[("input", sample.noisy_lr.to_tensor())])?;
        let clamp01 = |t: &Tensor<f32>| t.map(|v| v.clamp(0.0, 1.0)).cast::<f64>();
        let denoised = clamp01(&outputs["denoised"]);
        let sr = clamp01(&outputs["sr"]);
        let ref_lr: Tensor<f64> = sample.clean_lr.to_tensor();
        let ref_hr: Tensor<f64> = sample.clean_hr.to_tensor();
        sums[0] += psnr_tensor(&ref_lr, &denoised)?;
        sums[1] += ssim_tensor(&ref_lr, &denoised)?;
        sums[2] += psnr_tensor(&ref_hr, &sr)?;
        sums[3] += ssim_tensor(&ref_hr, &sr)?;
    }
    let n = val_imgs.len() as f64;
    Ok((sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n))
}
