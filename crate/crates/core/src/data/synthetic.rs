//! Procedural high-frame-rate clips for tests, demos and toy-scale training.
//!
//! Each scene is a smooth static background with a few soft-edged discs
//! moving at constant integer velocities. A scene can be written together
//! with its time reversal (the same frames in opposite order), which under a
//! palindromic exposure code produces exactly the same snapshot.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::frame_path;
use super::windows::derive_seed;
use crate::error::{Error, Result};
use crate::frames::{FrameStack, Image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySceneConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub objects: usize,
    /// Largest per-frame displacement along each axis, in pixels.
    pub max_speed: i64,
    pub radius: (f64, f64),
}

impl Default for ToySceneConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            frames: 8,
            objects: 2,
            max_speed: 1,
            radius: (3.0, 6.0),
        }
    }
}

struct Disc {
    cy: f64,
    cx: f64,
    vy: f64,
    vx: f64,
    radius: f64,
    color: [f64; 3],
    /// Colour of the half facing +x, so the object is not rotation-invariant.
    accent: [f64; 3],
}

pub fn render_scene(cfg: &ToySceneConfig, seed: u64) -> Result<FrameStack> {
    if cfg.frames == 0 || cfg.height == 0 || cfg.width == 0 {
        return Err(Error::InvalidArgument("toy scene dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (cfg.height as f64, cfg.width as f64);

    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.45));
    let amp: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.15));
    let fy = rng.random_range(0.05..0.25);
    let fx = rng.random_range(0.05..0.25);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);

    let travel = (cfg.frames.saturating_sub(1)) as f64;
    let mut discs = Vec::with_capacity(cfg.objects);
    for _ in 0..cfg.objects {
        let radius = rng.random_range(cfg.radius.0..=cfg.radius.1);
        let mut v = || loop {
            let s = rng.random_range(-cfg.max_speed..=cfg.max_speed) as f64;
            if cfg.max_speed == 0 || s != 0.0 {
                break s;
            }
        };
        let (vy, vx) = (v(), v());
        let span = |vel: f64, extent: f64| -> Result<(f64, f64)> {
            let lo = radius + 1.0 - (vel * travel).min(0.0);
            let hi = extent - radius - 1.0 - (vel * travel).max(0.0);
            if lo > hi {
                return Err(Error::OutOfBounds(format!(
                    "a disc of radius {radius:.1} moving {vel} px/frame does not fit {extent} px"
                )));
            }
            Ok((lo, hi))
        };
        let (ylo, yhi) = span(vy, h)?;
        let (xlo, xhi) = span(vx, w)?;
        discs.push(Disc {
            cy: rng.random_range(ylo..=yhi),
            cx: rng.random_range(xlo..=xhi),
            vy,
            vx,
            radius,
            color: std::array::from_fn(|_| rng.random_range(0.55..0.95)),
            accent: std::array::from_fn(|_| rng.random_range(0.05..0.5)),
        });
    }

    let frames = (0..cfg.frames)
        .map(|t| {
            let mut img = Image::filled(cfg.height, cfg.width, 3, 0.0)?;
            for y in 0..cfg.height {
                for x in 0..cfg.width {
                    let s = ((fy * y as f64 + fx * x as f64) + phase).sin();
                    let mut px: [f64; 3] = std::array::from_fn(|k| base[k] + amp[k] * s);
                    for d in &discs {
                        let cy = d.cy + d.vy * t as f64;
                        let cx = d.cx + d.vx * t as f64;
                        let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                        let dist = (dy * dy + dx * dx).sqrt();
                        let cover = (d.radius + 0.5 - dist).clamp(0.0, 1.0);
                        if cover > 0.0 {
                            let col = if dx > 0.0 { &d.accent } else { &d.color };
                            for k in 0..3 {
                                px[k] = px[k] * (1.0 - cover) + col[k] * cover;
                            }
                        }
                    }
                    for (k, v) in px.iter().enumerate() {
                        // quantize like an 8-bit capture
                        img.set(y, x, k, ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32);
                    }
                }
            }
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    FrameStack::new(frames)
}

pub fn write_video(dir: &Path, frames: &[Image]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        f.save_png(&frame_path(dir, i))?;
    }
    Ok(())
}

/// Writes `scenes` clips as `root/sceneNN_fwd/`, and with `reversed_pairs`
/// also `root/sceneNN_rev/` holding the same frames in reverse order.
pub fn write_toy_dataset(
    root: &Path,
    scenes: usize,
    cfg: &ToySceneConfig,
    reversed_pairs: bool,
    seed: u64,
) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for s in 0..scenes {
        let stack = render_scene(cfg, derive_seed(seed, 7, s as u64))?;
        let id = format!("scene{s:02}_fwd");
        write_video(&root.join(&id), stack.frames())?;
        ids.push(id);
        if reversed_pairs {
            let rev: Vec<Image> = stack.frames().iter().rev().cloned().collect();
            let id = format!("scene{s:02}_rev");
            write_video(&root.join(&id), &rev)?;
            ids.push(id);
        }
    }
    Ok(ids)
}
