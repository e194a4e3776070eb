use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::code::ExposureCode;
use crate::data::{derive_seed, load_window, window_refs, DatasetManifest, SampleMode};
use crate::error::{Error, Result};
use crate::forward::{add_noise, synthesize_with, CodedSnapshot, Normalization};
use crate::frames::{FrameStack, Image};
use crate::loss::{psnr, ssim_metric};
use crate::nn::Bdinr;

/// Anything that turns a coded snapshot into its frame sequence.
pub trait Decomposer {
    fn code(&self) -> &ExposureCode;

    /// `truth` is available for reference implementations; real models
    /// ignore it.
    fn decompose_window(&self, snapshot: &CodedSnapshot, truth: &FrameStack) -> Result<FrameStack>;
}

impl Decomposer for Bdinr {
    fn code(&self) -> &ExposureCode {
        &self.config().code
    }

    fn decompose_window(&self, snapshot: &CodedSnapshot, _truth: &FrameStack) -> Result<FrameStack> {
        self.decompose(snapshot, None)
    }
}

/// Returns the ground truth unchanged.
#[derive(Debug, Clone)]
pub struct OracleDecomposer {
    pub code: ExposureCode,
}

impl Decomposer for OracleDecomposer {
    fn code(&self) -> &ExposureCode {
        &self.code
    }

    fn decompose_window(&self, _snapshot: &CodedSnapshot, truth: &FrameStack) -> Result<FrameStack> {
        Ok(truth.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub noise_sigma: f64,
    pub seed: u64,
    pub normalization: Normalization,
    /// Evaluate a centered square of this size instead of the full frame.
    pub crop: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            noise_sigma: 0.0,
            seed: 0,
            normalization: Normalization::OnesCount,
            crop: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub video_id: String,
    pub start: usize,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSummary {
    pub video_id: String,
    pub windows: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub code: String,
    pub rows: Vec<WindowRow>,
    pub videos: Vec<VideoSummary>,
    pub psnr: f64,
    pub ssim: f64,
    /// Perceptual metric slot; no backend is bundled.
    pub lpips: Option<f64>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Largest centered region whose sides are multiples of 4.
fn crop_divisible(img: &Image) -> Result<Image> {
    let (h, w, c) = img.shape();
    let (nh, nw) = (h - h % 4, w - w % 4);
    if (nh, nw) == (h, w) {
        return Ok(img.clone());
    }
    crop_region(img, (h - nh) / 2, (w - nw) / 2, nh, nw, c)
}

fn crop_region(img: &Image, top: usize, left: usize, nh: usize, nw: usize, c: usize) -> Result<Image> {
    let mut out = Image::filled(nh, nw, c, 0.0)?;
    for y in 0..nh {
        for x in 0..nw {
            for k in 0..c {
                out.set(y, x, k, img.get(top + y, left + x, k));
            }
        }
    }
    Ok(out)
}

fn prepare(stack: FrameStack, crop: Option<usize>) -> Result<FrameStack> {
    let frames = stack
        .frames()
        .iter()
        .map(|f| match crop {
            None => crop_divisible(f),
            Some(s) => {
                let (h, w, c) = f.shape();
                if s > h.min(w) {
                    return Err(Error::InvalidArgument(format!(
                        "crop {s} does not fit a {h}x{w} frame"
                    )));
                }
                crop_region(f, (h - s) / 2, (w - s) / 2, s, s, c)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    FrameStack::with_indices(frames, stack.indices().to_vec())
}

/// Scores a decomposer on every non-overlapping window of the manifest.
pub fn evaluate(
    decomposer: &dyn Decomposer,
    manifest: &DatasetManifest,
    window: usize,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let code = decomposer.code().clone();
    if code.len() != window {
        return Err(Error::LengthMismatch {
            what: "checkpoint code length vs evaluation window",
            expected: window,
            actual: code.len(),
        });
    }
    let refs = window_refs(manifest, window, SampleMode::Eval)?;
    let mut rows = Vec::with_capacity(refs.len());
    for (wi, r) in refs.iter().enumerate() {
        let gt = prepare(load_window(manifest, *r, window)?, opts.crop)?;
        let clean = synthesize_with(&gt, &code, opts.normalization)?;
        let snapshot = add_noise(&clean, opts.noise_sigma, derive_seed(opts.seed, 5, wi as u64))?;
        let pred = decomposer.decompose_window(&snapshot, &gt)?;
        if pred.len() != gt.len() {
            return Err(Error::LengthMismatch {
                what: "decomposed frames vs window",
                expected: gt.len(),
                actual: pred.len(),
            });
        }
        let mut p = Vec::with_capacity(window);
        let mut s = Vec::with_capacity(window);
        for (a, b) in pred.frames().iter().zip(gt.frames()) {
            p.push(psnr(a, b)?);
            s.push(ssim_metric(a, b)?);
        }
        rows.push(WindowRow {
            video_id: manifest.videos[r.video].video_id.clone(),
            start: r.start,
            mean_psnr: mean(&p),
            mean_ssim: mean(&s),
            psnr: p,
            ssim: s,
        });
    }

    let mut videos: Vec<VideoSummary> = Vec::new();
    for v in &manifest.videos {
        let mine: Vec<&WindowRow> = rows.iter().filter(|r| r.video_id == v.video_id).collect();
        let p: Vec<f64> = mine.iter().flat_map(|r| r.psnr.iter().copied()).collect();
        let s: Vec<f64> = mine.iter().flat_map(|r| r.ssim.iter().copied()).collect();
        videos.push(VideoSummary {
            video_id: v.video_id.clone(),
            windows: mine.len(),
            psnr: mean(&p),
            ssim: mean(&s),
        });
    }
    let all_p: Vec<f64> = rows.iter().flat_map(|r| r.psnr.iter().copied()).collect();
    let all_s: Vec<f64> = rows.iter().flat_map(|r| r.ssim.iter().copied()).collect();
    Ok(EvalReport {
        code: code.id_string(),
        psnr: mean(&all_p),
        ssim: mean(&all_s),
        rows,
        videos,
        lpips: None,
    })
}

impl EvalReport {
    /// Tab-separated table: one `window` line per evaluated window, one
    /// `video` line per video and a final `overall` line.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# code {}", self.code);
        let _ = writeln!(out, "kind\tvideo\tstart\tpsnr_db\tssim");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "window\t{}\t{}\t{:.4}\t{:.5}",
                r.video_id, r.start, r.mean_psnr, r.mean_ssim
            );
        }
        for v in &self.videos {
            let _ = writeln!(out, "video\t{}\t-\t{:.4}\t{:.5}", v.video_id, v.psnr, v.ssim);
        }
        let _ = writeln!(out, "overall\t-\t-\t{:.4}\t{:.5}", self.psnr, self.ssim);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}
