//! Sliding-window sampling, augmentation and training-example assembly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{frame_path, DatasetManifest};
use crate::code::ExposureCode;
use crate::error::{Error, Result};
use crate::forward::{add_noise, synthesize_with, CodedSnapshot, Normalization};
use crate::frames::{FrameStack, Image};

/// Derives an independent seed for a sub-stream.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 over the three inputs
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Contiguous, non-overlapping windows covering each video in order.
    Eval,
    /// `⌊frames/window⌋` windows per video at seeded random starts.
    Train { seed: u64, epoch: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowRef {
    pub video: usize,
    pub start: usize,
}

/// Window positions for one pass over the manifest.
pub fn window_refs(
    manifest: &DatasetManifest,
    window: usize,
    mode: SampleMode,
) -> Result<Vec<WindowRef>> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    if let Some(v) = manifest.videos.iter().find(|v| v.frame_count < window) {
        return Err(Error::VideoTooShort {
            video: v.video_id.clone(),
            frames: v.frame_count,
            window,
        });
    }
    let mut out = Vec::new();
    for (vi, v) in manifest.videos.iter().enumerate() {
        let count = v.frame_count / window;
        match mode {
            SampleMode::Eval => {
                out.extend((0..count).map(|k| WindowRef {
                    video: vi,
                    start: k * window,
                }));
            }
            SampleMode::Train { seed, epoch } => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch, vi as u64));
                let max_start = v.frame_count - window;
                out.extend((0..count).map(|_| WindowRef {
                    video: vi,
                    start: rng.random_range(0..=max_start),
                }));
            }
        }
    }
    Ok(out)
}

pub fn load_window(
    manifest: &DatasetManifest,
    window_ref: WindowRef,
    window: usize,
) -> Result<FrameStack> {
    let video = manifest
        .videos
        .get(window_ref.video)
        .ok_or_else(|| Error::InvalidArgument(format!("no video #{}", window_ref.video)))?;
    if window_ref.start + window > video.frame_count {
        return Err(Error::InvalidArgument(format!(
            "window {}..{} exceeds {} frames of {}",
            window_ref.start,
            window_ref.start + window,
            video.frame_count,
            video.video_id
        )));
    }
    let dir = manifest.video_dir(video);
    let frames = (window_ref.start..window_ref.start + window)
        .map(|i| Image::load_png(&frame_path(&dir, i)))
        .collect::<Result<Vec<_>>>()?;
    FrameStack::new(frames)
}

/// Loads the windows of one pass, in order.
pub fn sample_windows<'a>(
    manifest: &'a DatasetManifest,
    window: usize,
    mode: SampleMode,
) -> Result<impl Iterator<Item = Result<FrameStack>> + 'a> {
    let refs = window_refs(manifest, window, mode)?;
    Ok(refs
        .into_iter()
        .map(move |r| load_window(manifest, r, window)))
}

/// One draw of the geometric augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augmentation {
    pub top: usize,
    pub left: usize,
    pub crop: usize,
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise quarter turns, `0..4`.
    pub quarter_turns: u8,
}

impl Augmentation {
    pub fn identity(crop: usize) -> Self {
        Self {
            top: 0,
            left: 0,
            crop,
            hflip: false,
            vflip: false,
            quarter_turns: 0,
        }
    }

    /// Centered square crop without flips.
    pub fn center(height: usize, width: usize, crop: usize) -> Result<Self> {
        if crop == 0 || crop > height.min(width) {
            return Err(Error::InvalidArgument(format!(
                "crop {crop} does not fit a {height}x{width} frame"
            )));
        }
        Ok(Self {
            top: (height - crop) / 2,
            left: (width - crop) / 2,
            ..Self::identity(crop)
        })
    }

    pub fn draw(height: usize, width: usize, crop: usize, seed: u64) -> Result<Self> {
        if crop == 0 || crop > height.min(width) {
            return Err(Error::InvalidArgument(format!(
                "crop {crop} does not fit a {height}x{width} frame"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            top: rng.random_range(0..=height - crop),
            left: rng.random_range(0..=width - crop),
            crop,
            hflip: rng.random(),
            vflip: rng.random(),
            quarter_turns: rng.random_range(0..4),
        })
    }

    pub fn apply_image(&self, img: &Image) -> Result<Image> {
        let (h, w, c) = img.shape();
        if self.top + self.crop > h || self.left + self.crop > w {
            return Err(Error::InvalidArgument(format!(
                "crop {} at ({}, {}) does not fit a {h}x{w} frame",
                self.crop, self.top, self.left
            )));
        }
        let n = self.crop;
        let mut out = Image::filled(n, n, c, 0.0)?;
        for y in 0..n {
            for x in 0..n {
                // output (y, x) -> source in the cropped square
                let (mut sy, mut sx) = (y, x);
                for _ in 0..self.quarter_turns {
                    // inverse of a counter-clockwise quarter turn
                    (sy, sx) = (sx, n - 1 - sy);
                }
                if self.hflip {
                    sx = n - 1 - sx;
                }
                if self.vflip {
                    sy = n - 1 - sy;
                }
                for k in 0..c {
                    out.set(y, x, k, img.get(self.top + sy, self.left + sx, k));
                }
            }
        }
        Ok(out)
    }

    pub fn apply(&self, stack: &FrameStack) -> Result<FrameStack> {
        let frames = stack
            .frames()
            .iter()
            .map(|f| self.apply_image(f))
            .collect::<Result<Vec<_>>>()?;
        FrameStack::with_indices(frames, stack.indices().to_vec())
    }
}

/// Random crop, flips and quarter-turn rotation applied identically to every frame.
pub fn augment(stack: &FrameStack, crop: usize, seed: u64) -> Result<FrameStack> {
    let (h, w, _) = stack.frame_shape();
    Augmentation::draw(h, w, crop, seed)?.apply(stack)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub snapshot: CodedSnapshot,
    pub gt: FrameStack,
    pub code: ExposureCode,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl TrainingExample {
    /// Rebuilds the snapshot from the stored ground truth, sigma and seed.
    pub fn regenerate(&self) -> Result<CodedSnapshot> {
        let clean = synthesize_with(&self.gt, &self.code, self.snapshot.normalization)?;
        add_noise(&clean, self.noise_sigma, derive_seed(self.seed, 1, 0))
    }
}

pub fn make_training_example(
    stack: &FrameStack,
    code: &ExposureCode,
    sigma_range: (f64, f64),
    seed: u64,
    normalization: Normalization,
) -> Result<TrainingExample> {
    let (lo, hi) = sigma_range;
    if !(0.0 <= lo && lo <= hi) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma range must satisfy 0 <= lo <= hi, got [{lo}, {hi}]"
        )));
    }
    let noise_sigma = if hi > lo {
        ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 0)).random_range(lo..hi)
    } else {
        lo
    };
    let clean = synthesize_with(stack, code, normalization)?;
    let snapshot = add_noise(&clean, noise_sigma, derive_seed(seed, 1, 0))?;
    Ok(TrainingExample {
        snapshot,
        gt: stack.clone(),
        code: code.clone(),
        noise_sigma,
        seed,
    })
}
