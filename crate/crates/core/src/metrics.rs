//! Full-reference quality metrics (PSNR, SSIM), the composite distance D,
//! the weighted joint loss, and the epoch-dependent weight schedule.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{Scalar, Tensor};

/// PSNR reported for identical images (MSE = 0).
pub const PSNR_SATURATION_DB: f64 = 100.0;
/// PSNR floor applied inside the 100/PSNR loss term.
pub const PSNR_FLOOR_DB: f64 = 0.1;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// The (lambda, beta) pair weighting denoise vs. super-resolution loss.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub beta: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidArgument("loss weights must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// PSNR and SSIM for one image pair.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
}

fn check_same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            context: what.to_string(),
            expected: a.shape(),
            actual: b.shape(),
        });
    }
    Ok(())
}

/// PSNR in decibels over normalized [0, 1] tensors; saturates at
/// [`PSNR_SATURATION_DB`] when MSE is zero.
pub fn psnr_tensor<T: Scalar>(reference: &Tensor<T>, test: &Tensor<T>) -> Result<f64> {
    check_same_shape(reference, test, "psnr")?;
    let n = reference.numel();
    if n == 0 {
        return Err(Error::InvalidArgument("psnr of empty tensors".into()));
    }
    let mut mse = 0.0;
    for (&a, &b) in reference.data().iter().zip(test.data()) {
        let d = a.to_f64() - b.to_f64();
        mse += d * d;
    }
    mse /= n as f64;
    if mse == 0.0 {
        return Ok(PSNR_SATURATION_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_SATURATION_DB))
}

pub fn psnr(reference: &Image, test: &Image) -> Result<f64> {
    psnr_tensor::<f64>(&reference.to_tensor(), &test.to_tensor())
}

/// Normalized 11-tap Gaussian (sigma 1.5) used by SSIM.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Full separable 11x11 window (outer product of [`gaussian_window`]).
pub fn gaussian_window_2d() -> Vec<f64> {
    let k = gaussian_window();
    let mut out = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for &a in &k {
        for &b in &k {
            out.push(a * b);
        }
    }
    out
}

/// Separable valid-region Gaussian filter of one (H, W) plane.
fn gauss_filter(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian_window();
    let ow = w - SSIM_WINDOW + 1;
    // Horizontal pass: h rows by ow columns.
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * plane[y * w + x + i];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let oh = h - SSIM_WINDOW + 1;
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean local SSIM over valid window positions, averaged across channels.
pub fn ssim_tensor<T: Scalar>(reference: &Tensor<T>, test: &Tensor<T>) -> Result<f64> {
    check_same_shape(reference, test, "ssim")?;
    let [n, c, h, w] = reference.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let mut total = 0.0;
    let mut planes = 0usize;
    for ni in 0..n {
        for ci in 0..c {
            let mut a = vec![0.0; h * w];
            let mut b = vec![0.0; h * w];
            for y in 0..h {
                for x in 0..w {
                    a[y * w + x] = reference.at(ni, ci, y, x).to_f64();
                    b[y * w + x] = test.at(ni, ci, y, x).to_f64();
                }
            }
            total += ssim_plane(&a, &b, h, w);
            planes += 1;
        }
    }
    Ok(total / planes as f64)
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = gauss_filter(a, h, w);
    let mu_b = gauss_filter(b, h, w);
    let m_aa = gauss_filter(&aa, h, w);
    let m_bb = gauss_filter(&bb, h, w);
    let m_ab = gauss_filter(&ab, h, w);
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = m_aa[i] - ma * ma;
        let vb = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
        sum += num / den;
    }
    sum / mu_a.len() as f64
}

pub fn ssim(reference: &Image, test: &Image) -> Result<f64> {
    ssim_tensor::<f64>(&reference.to_tensor(), &test.to_tensor())
}

pub fn metric_report(reference: &Image, test: &Image) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr_db: psnr(reference, test)?,
        ssim: ssim(reference, test)?,
    })
}

/// Composite distance: MAE + 10 * (1 - SSIM) + 100 / PSNR, with PSNR
/// clamped into [[`PSNR_FLOOR_DB`], [`PSNR_SATURATION_DB`]].
pub fn distance_d_tensor<T: Scalar>(reference: &Tensor<T>, output: &Tensor<T>) -> Result<f64> {
    check_same_shape(reference, output, "distance_d")?;
    let mut mae = 0.0;
    for (&a, &b) in reference.data().iter().zip(output.data()) {
        mae += (a.to_f64() - b.to_f64()).abs();
    }
    mae /= reference.numel() as f64;
    let s = ssim_tensor(reference, output)?;
    let p = psnr_tensor(reference, output)?.clamp(PSNR_FLOOR_DB, PSNR_SATURATION_DB);
    Ok(mae + 10.0 * (1.0 - s) + 100.0 / p)
}

pub fn distance_d(reference: &Image, output: &Image) -> Result<f64> {
    distance_d_tensor::<f64>(&reference.to_tensor(), &output.to_tensor())
}

/// Loss = lambda * D_denoise + beta * D_super_resolution.
pub fn joint_loss(d_denoise: f64, d_sr: f64, weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    Ok(weights.lambda * d_denoise + weights.beta * d_sr)
}

/// Epoch-dependent weights: lambda = max(0.5, 1 - 0.1 * floor(epoch / 10)),
/// beta = 1 - lambda. Constant (0.5, 0.5) from epoch 50 on.
pub fn schedule_weights(epoch: u32) -> Result<LossWeights> {
    if epoch < 1 {
        return Err(Error::InvalidArgument("epoch must be >= 1".into()));
    }
    // Integer tenths keep the decade steps exact in floating point.
    let tenths = 10 - (epoch / 10).min(5);
    Ok(LossWeights {
        lambda: tenths as f64 / 10.0,
        beta: (10 - tenths) as f64 / 10.0,
    })
}
