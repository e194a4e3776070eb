//! Coded-exposure image formation.
//!
//! A snapshot is the code-weighted sum of the sharp frames, divided by the
//! number of open segments (the default) or by the code length, then clamped
//! to `[0, 1]`. Noise is added after normalization. [`reblur`] and
//! [`reblur_tensor`] apply the same weighting without the clamp so they can
//! sit inside a differentiable loss.
//!
//! Accumulation is done in `f64`. For `f32` inputs in `[0, 1]` the sums are
//! exact, so a palindromic code gives bit-identical snapshots for a scene and
//! its time reversal regardless of summation order.

use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::code::ExposureCode;
use crate::error::{Error, Result};
use crate::frames::{FrameStack, Image};

/// Divisor applied to the code-weighted frame sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the number of open segments; mean brightness is code-invariant.
    #[default]
    OnesCount,
    /// Divide by the code length; brightness scales with the duty ratio.
    Length,
}

impl Normalization {
    pub fn divisor(self, code: &ExposureCode) -> f64 {
        match self {
            Normalization::OnesCount => code.ones_count() as f64,
            Normalization::Length => code.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodedSnapshot {
    pub image: Image,
    pub code: ExposureCode,
    pub noise_sigma: f64,
    pub normalization: Normalization,
}

fn check_inputs(stack: &FrameStack, code: &ExposureCode) -> Result<()> {
    code.ensure_light()?;
    if code.len() != stack.len() {
        return Err(Error::LengthMismatch {
            what: "code length vs frame count",
            expected: stack.len(),
            actual: code.len(),
        });
    }
    Ok(())
}

fn weighted_sum(stack: &FrameStack, code: &ExposureCode, norm: Normalization) -> Vec<f64> {
    let first = &stack.frames()[0];
    let mut acc = vec![0.0f64; first.len()];
    for (frame, _) in stack.frames().iter().zip(code.bits()).filter(|(_, &b)| b) {
        for (a, &v) in acc.iter_mut().zip(frame.data()) {
            *a += v as f64;
        }
    }
    let d = norm.divisor(code);
    acc.iter_mut().for_each(|a| *a /= d);
    acc
}

/// Synthesizes a noiseless coded snapshot with the default normalization.
pub fn synthesize_coded_blur(stack: &FrameStack, code: &ExposureCode) -> Result<CodedSnapshot> {
    synthesize_with(stack, code, Normalization::OnesCount)
}

pub fn synthesize_with(
    stack: &FrameStack,
    code: &ExposureCode,
    normalization: Normalization,
) -> Result<CodedSnapshot> {
    check_inputs(stack, code)?;
    let (h, w, c) = stack.frame_shape();
    let data = weighted_sum(stack, code, normalization)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0) as f32)
        .collect();
    Ok(CodedSnapshot {
        image: Image::new(h, w, c, data)?,
        code: code.clone(),
        noise_sigma: 0.0,
        normalization,
    })
}

/// Adds seeded zero-mean Gaussian noise and re-clamps to `[0, 1]`.
pub fn add_noise(snapshot: &CodedSnapshot, sigma: f64, seed: u64) -> Result<CodedSnapshot> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be a finite non-negative number, got {sigma}"
        )));
    }
    let mut out = snapshot.clone();
    out.noise_sigma = sigma;
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.image.data_mut() {
        *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
    }
    Ok(out)
}

/// Code-weighted recombination of frames without clamping.
pub fn reblur(stack: &FrameStack, code: &ExposureCode) -> Result<Image> {
    reblur_with(stack, code, Normalization::OnesCount)
}

pub fn reblur_with(
    stack: &FrameStack,
    code: &ExposureCode,
    normalization: Normalization,
) -> Result<Image> {
    check_inputs(stack, code)?;
    let (h, w, c) = stack.frame_shape();
    let data = weighted_sum(stack, code, normalization)
        .into_iter()
        .map(|v| v as f32)
        .collect();
    Image::new(h, w, c, data)
}

/// Differentiable reblur of a `B×N×C×H×W` batch of predicted frames.
///
/// Returns `B×C×H×W`.
pub fn reblur_tensor(
    frames: &Tensor,
    code: &ExposureCode,
    normalization: Normalization,
) -> Result<Tensor> {
    code.ensure_light()?;
    let (_, n, _, _, _) = frames.dims5()?;
    if n != code.len() {
        return Err(Error::LengthMismatch {
            what: "code length vs predicted frame count",
            expected: n,
            actual: code.len(),
        });
    }
    let d = normalization.divisor(code);
    let weights: Vec<f64> = code.weights().iter().map(|w| w / d).collect();
    let weights = Tensor::from_vec(weights, (1, n, 1, 1, 1), frames.device())?
        .to_dtype(frames.dtype())?;
    Ok(frames.broadcast_mul(&weights)?.sum(1)?)
}

/// Motion direction of the toy scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> i64 {
        match self {
            Direction::Forward => 1,
            Direction::Backward => -1,
        }
    }
}

/// Intensity of the toy object; the background is 0.
pub const TOY_OBJECT_LEVEL: f32 = 1.0;

/// One-row grayscale frames of a bright bar translating over a dark
/// background, centered in the row. `Backward` traverses the same span in
/// the opposite order.
pub fn toy_translation_scene(
    width: usize,
    object_extent: usize,
    shift_per_bit: usize,
    direction: Direction,
    n: usize,
) -> Result<FrameStack> {
    if n == 0 || object_extent == 0 {
        return Err(Error::InvalidArgument(
            "toy scene needs at least one frame and a non-empty object".into(),
        ));
    }
    let span = object_extent + (n - 1) * shift_per_bit;
    if span > width {
        return Err(Error::OutOfBounds(format!(
            "object of extent {object_extent} moving {shift_per_bit} px over {n} frames spans {span} px, wider than {width}"
        )));
    }
    let start = (width - span) / 2;
    let frames = (0..n)
        .map(|i| {
            let step = match direction {
                Direction::Forward => i,
                Direction::Backward => n - 1 - i,
            };
            let left = start + step * shift_per_bit;
            let data = (0..width)
                .map(|x| {
                    if (left..left + object_extent).contains(&x) {
                        TOY_OBJECT_LEVEL
                    } else {
                        0.0
                    }
                })
                .collect();
            Image::new(1, width, 1, data)
        })
        .collect::<Result<Vec<_>>>()?;
    FrameStack::new(frames)
}

/// Converts a tensor to `f64` for comparisons in tests and reports.
#[cfg(test)]
pub(crate) fn tensor_to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(candle_core::DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}
