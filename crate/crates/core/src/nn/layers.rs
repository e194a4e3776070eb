use candle_core::{Tensor, D};
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// `k×k` convolution with "same" padding, initialized like PyTorch's
    /// default (`U(±1/sqrt(fan_in))`).
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((in_ch * k * k) as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), &[out_ch, in_ch, k, k], bound, rng)?;
        let bias = store.uniform(format!("{name}.bias"), &[out_ch], bound, rng)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding: k / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        let b = self.bias.reshape((1, (), 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), &[out_dim, in_dim], bound, rng)?;
        let bias = store.uniform(format!("{name}.bias"), &[out_dim], bound, rng)?;
        Ok(Self { weight, bias })
    }

    /// `x` is `M×in`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

/// `x + conv(act(conv(x)))`.
#[derive(Debug, Clone)]
pub struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, ch: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(store, rng, &format!("{name}.conv1"), ch, ch, 3, 1)?,
            conv2: Conv2d::new(store, rng, &format!("{name}.conv2"), ch, ch, 3, 1)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let r = self.conv2.forward(&act(&self.conv1.forward(x)?)?)?;
        Ok((x + r)?)
    }
}

/// Smooth activation used throughout the network.
pub fn act(x: &Tensor) -> Result<Tensor> {
    Ok(x.silu()?)
}

/// Nearest-neighbour ×2 upsampling of `B×C×H×W`.
pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    Ok(x.upsample_nearest2d(h * 2, w * 2)?)
}

/// Channel concatenation.
pub fn cat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(Tensor::cat(&[a, b], 1)?)
}

/// Splits the last dimension in half.
pub fn split_half(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let n = x.dim(D::Minus1)? / 2;
    Ok((x.narrow(D::Minus1, 0, n)?, x.narrow(D::Minus1, n, n)?))
}
