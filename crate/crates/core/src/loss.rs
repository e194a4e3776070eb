//! Training losses and full-reference metrics.
//!
//! Predicted and ground-truth stacks are `B×N×C×H×W` tensors; every loss is
//! averaged over the batch. `P` is the number of values per frame,
//! `H·W·C`, and is recorded in every [`LossReport`].
//!
//! The Charbonnier and edge terms take one square root per frame over the
//! whole frame's squared error (not per pixel), so at `pred == gt` they
//! collapse to the floor `N·ε/P`. The SSIM term is averaged over frames
//! (`1/N`) rather than divided by `P`: SSIM is already a per-frame mean, and
//! a `1/P` prefactor would leave its weight negligible.

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::code::ExposureCode;
use crate::error::{Error, Result};
use crate::forward::{reblur_tensor, Normalization};
use crate::frames::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Reported PSNR when the two frames are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 0.05,
            alpha3: 0.05,
            gamma1: 1.0,
            gamma2: 0.2,
            epsilon: 1e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha1, self.alpha2, self.alpha3, self.gamma1, self.gamma2];
        if w.iter().any(|v| !(*v >= 0.0)) || !(self.epsilon > 0.0) {
            return Err(Error::Config(
                "loss weights must be non-negative and epsilon positive".into(),
            ));
        }
        Ok(())
    }
}

/// Where the Charbonnier square root is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CharbonnierMode {
    /// `sqrt(‖Î_n − I_n‖² + ε²)` per frame.
    #[default]
    FrameNorm,
    /// `Σ_pixels sqrt(d² + ε²)`, the common per-pixel variant.
    PerPixel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub char: f64,
    pub ssim: f64,
    pub edge: f64,
    pub bd: f64,
    pub reblur: f64,
    pub total: f64,
    #[serde(rename = "P")]
    pub p: usize,
    #[serde(rename = "N")]
    pub n: usize,
}

/// Differentiable loss terms together with their reported values.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub total: Tensor,
    pub report: LossReport,
}

fn dims(pred: &Tensor, gt: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    if pred.dims() != gt.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    Ok(pred.dims5()?)
}

/// Per-frame `sqrt(Σ d² + ε²)` summed over frames and divided by `P`.
fn frame_norm_term(diff: &Tensor, eps: f64, p: usize) -> Result<Tensor> {
    let sq = diff.sqr()?.flatten_from(2)?.sum(D::Minus1)?; // B×N
    let per_frame = (sq + eps * eps)?.sqrt()?;
    Ok((per_frame.sum(1)? / p as f64)?.mean_all()?)
}

pub fn charbonnier_loss(pred: &Tensor, gt: &Tensor, eps: f64) -> Result<Tensor> {
    charbonnier_loss_with(pred, gt, eps, CharbonnierMode::FrameNorm)
}

pub fn charbonnier_loss_with(
    pred: &Tensor,
    gt: &Tensor,
    eps: f64,
    mode: CharbonnierMode,
) -> Result<Tensor> {
    let (_, _, c, h, w) = dims(pred, gt)?;
    let p = c * h * w;
    let diff = (pred - gt)?;
    match mode {
        CharbonnierMode::FrameNorm => frame_norm_term(&diff, eps, p),
        CharbonnierMode::PerPixel => {
            let per_px = (diff.sqr()? + eps * eps)?.sqrt()?;
            Ok((per_px.flatten_from(1)?.sum(1)? / p as f64)?.mean_all()?)
        }
    }
}

fn gaussian_window(dtype: DType, channels: usize, device: &Device) -> Result<Tensor> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    let mut w2 = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW * channels);
    for _ in 0..channels {
        for a in &g {
            for b in &g {
                w2.push(a * b);
            }
        }
    }
    Ok(Tensor::from_vec(w2, (channels, 1, SSIM_WINDOW, SSIM_WINDOW), device)?.to_dtype(dtype)?)
}

/// Mean SSIM of each image in an `M×C×H×W` pair, Gaussian-weighted over
/// valid window positions and averaged over channels. Returns shape `M`.
pub fn mean_ssim(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.dims() != y.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", x.dims(), y.dims())));
    }
    let (_, c, h, w) = x.dims4()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let win = gaussian_window(x.dtype(), c, x.device())?;
    let filt = |t: &Tensor| t.conv2d(&win, 0, 1, 1, c);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mu_x = filt(x)?;
    let mu_y = filt(y)?;
    let mu_xx = mu_x.sqr()?;
    let mu_yy = mu_y.sqr()?;
    let mu_xy = (&mu_x * &mu_y)?;
    let s_xx = (filt(&x.sqr()?)? - &mu_xx)?;
    let s_yy = (filt(&y.sqr()?)? - &mu_yy)?;
    let s_xy = (filt(&(x * y)?)? - &mu_xy)?;
    let num = ((mu_xy * 2.0)? + c1)?.mul(&((s_xy * 2.0)? + c2)?)?;
    let den = ((mu_xx + mu_yy)? + c1)?.mul(&((s_xx + s_yy)? + c2)?)?;
    Ok((num / den)?.flatten_from(1)?.mean(1)?)
}

pub fn ssim_loss(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    let (b, n, c, h, w) = dims(pred, gt)?;
    let s = mean_ssim(
        &pred.reshape((b * n, c, h, w))?,
        &gt.reshape((b * n, c, h, w))?,
    )?;
    Ok((1.0 - s)?.mean_all()?)
}

/// 4-neighbour Laplacian per channel with replicate padding, on `M×C×H×W`.
pub fn laplacian(x: &Tensor) -> Result<Tensor> {
    let (_, c, _, _) = x.dims4()?;
    let k = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];
    let kernel: Vec<f64> = (0..c).flat_map(|_| k).collect();
    let kernel = Tensor::from_vec(kernel, (c, 1, 3, 3), x.device())?.to_dtype(x.dtype())?;
    let padded = x.pad_with_same(2, 1, 1)?.pad_with_same(3, 1, 1)?;
    Ok(padded.conv2d(&kernel, 0, 1, 1, c)?)
}

pub fn edge_loss(pred: &Tensor, gt: &Tensor, eps: f64) -> Result<Tensor> {
    let (b, n, c, h, w) = dims(pred, gt)?;
    let lp = laplacian(&pred.reshape((b * n, c, h, w))?)?;
    let lg = laplacian(&gt.reshape((b * n, c, h, w))?)?;
    let diff = (lp - lg)?.reshape((b, n, c, h, w))?;
    frame_norm_term(&diff, eps, c * h * w)
}

/// `(N/P)·sqrt(‖reblur(pred) − B‖² + ε²)` with `snapshot` shaped `B×C×H×W`.
pub fn reblur_loss(
    pred: &Tensor,
    code: &ExposureCode,
    snapshot: &Tensor,
    eps: f64,
    normalization: Normalization,
) -> Result<Tensor> {
    let (_, n, c, h, w) = pred.dims5()?;
    let rb = reblur_tensor(pred, code, normalization)?;
    if rb.dims() != snapshot.dims() {
        return Err(Error::Shape(format!(
            "reblurred {:?} vs snapshot {:?}",
            rb.dims(),
            snapshot.dims()
        )));
    }
    let p = c * h * w;
    let sq = (rb - snapshot)?.sqr()?.flatten_from(1)?.sum(1)?;
    Ok(((sq + eps * eps)?.sqrt()? * (n as f64 / p as f64))?.mean_all()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossOptions {
    pub charbonnier: CharbonnierMode,
    pub normalization: Normalization,
}

pub fn total_loss(
    pred: &Tensor,
    gt: &Tensor,
    code: &ExposureCode,
    snapshot: &Tensor,
    weights: &LossWeights,
) -> Result<LossTerms> {
    total_loss_with(pred, gt, code, snapshot, weights, LossOptions::default())
}

pub fn total_loss_with(
    pred: &Tensor,
    gt: &Tensor,
    code: &ExposureCode,
    snapshot: &Tensor,
    weights: &LossWeights,
    opts: LossOptions,
) -> Result<LossTerms> {
    let (_, n, c, h, w) = dims(pred, gt)?;
    let eps = weights.epsilon;
    let char = charbonnier_loss_with(pred, gt, eps, opts.charbonnier)?;
    let ssim = ssim_loss(pred, gt)?;
    let edge = edge_loss(pred, gt, eps)?;
    let reblur = reblur_loss(pred, code, snapshot, eps, opts.normalization)?;
    let bd = ((&char * weights.alpha1)? + (&ssim * weights.alpha2)?)?;
    let bd = (bd + (&edge * weights.alpha3)?)?;
    let total = ((&bd * weights.gamma1)? + (&reblur * weights.gamma2)?)?;
    let scalar = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
    let report = LossReport {
        char: scalar(&char)?,
        ssim: scalar(&ssim)?,
        edge: scalar(&edge)?,
        bd: scalar(&bd)?,
        reblur: scalar(&reblur)?,
        total: scalar(&total)?,
        p: c * h * w,
        n,
    };
    Ok(LossTerms { total, report })
}

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// PSNR in dB for unit peak; identical frames report [`PSNR_CAP_DB`].
pub fn psnr(pred: &Image, gt: &Image) -> Result<f64> {
    check_same(pred, gt)?;
    let mse = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean SSIM between two frames (higher is better).
pub fn ssim_metric(pred: &Image, gt: &Image) -> Result<f64> {
    check_same(pred, gt)?;
    let dev = Device::Cpu;
    let a = pred.to_tensor(DType::F64, &dev)?.unsqueeze(0)?;
    let b = gt.to_tensor(DType::F64, &dev)?.unsqueeze(0)?;
    Ok(mean_ssim(&a, &b)?.to_vec1::<f64>()?[0])
}
