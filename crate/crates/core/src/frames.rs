//! Images and ordered frame stacks, plus 8-bit PNG I/O.

use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

/// An `H×W×C` image stored row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::Shape(format!(
                "image must be non-empty with 1 or 3 channels, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Values per image (`H·W·C`).
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// `C×H×W` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, (self.height, self.width, self.channels), device)?
            .permute((2, 0, 1))?
            .to_dtype(dtype)?;
        Ok(t.contiguous()?)
    }

    /// Inverse of [`Image::to_tensor`]; accepts `C×H×W` or `1×C×H×W`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = if t.rank() == 4 { t.squeeze(0)? } else { t.clone() };
        let (c, h, w) = t.dims3()?;
        let data = t
            .permute((1, 2, 0))?
            .to_dtype(DType::F32)?
            .flatten_all()?
            .to_vec1::<f32>()?;
        Self::new(h, w, c, data)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (channels, w, h, bytes) = if img.color().has_color() {
            let rgb = img.to_rgb8();
            (3, rgb.width(), rgb.height(), rgb.into_raw())
        } else {
            let l = img.to_luma8();
            (1, l.width(), l.height(), l.into_raw())
        };
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Self::new(h as usize, w as usize, channels, data)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = if self.channels == 3 {
            image::ExtendedColorType::Rgb8
        } else {
            image::ExtendedColorType::L8
        };
        image::save_buffer(
            path,
            &self.to_u8(),
            self.width as u32,
            self.height as u32,
            color,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Normalized timestamps `i/(N-1)` for `N` frames (`[0.0]` when `N == 1`).
pub fn normalized_indices(n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0; n];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Ordered sharp frames of one exposure window.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    frames: Vec<Image>,
    indices: Vec<f64>,
}

impl FrameStack {
    /// Builds a stack with evenly spaced normalized indices.
    pub fn new(frames: Vec<Image>) -> Result<Self> {
        let indices = normalized_indices(frames.len());
        Self::with_indices(frames, indices)
    }

    pub fn with_indices(frames: Vec<Image>, indices: Vec<f64>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Shape("frame stack must hold at least one frame".into()))?;
        let shape = first.shape();
        if let Some(bad) = frames.iter().find(|f| f.shape() != shape) {
            return Err(Error::Shape(format!(
                "frame shapes differ: {:?} vs {:?}",
                shape,
                bad.shape()
            )));
        }
        if indices.len() != frames.len() {
            return Err(Error::LengthMismatch {
                what: "frame indices",
                expected: frames.len(),
                actual: indices.len(),
            });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "frame indices must be strictly increasing".into(),
            ));
        }
        if indices.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidArgument(
                "frame indices must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { frames, indices })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn indices(&self) -> &[f64] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_shape(&self) -> (usize, usize, usize) {
        self.frames[0].shape()
    }

    pub fn into_frames(self) -> Vec<Image> {
        self.frames
    }

    /// Same frames in reverse temporal order (indices re-normalized).
    pub fn time_reversed(&self) -> Self {
        let frames: Vec<Image> = self.frames.iter().rev().cloned().collect();
        let indices = self.indices.iter().rev().map(|t| 1.0 - t).collect();
        Self { frames, indices }
    }

    /// `N×C×H×W` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let ts = self
            .frames
            .iter()
            .map(|f| f.to_tensor(dtype, device))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&ts, 0)?)
    }

    /// Inverse of [`FrameStack::to_tensor`] (`N×C×H×W`).
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let n = t.dim(0)?;
        let frames = (0..n)
            .map(|i| Image::from_tensor(&t.get(i)?))
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames)
    }

    pub fn scaled(&self, a: f32) -> Self {
        Self {
            frames: self.frames.iter().map(|f| f.map(|v| v * a)).collect(),
            indices: self.indices.clone(),
        }
    }
}
