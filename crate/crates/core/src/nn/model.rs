//! The BDINR decomposition network.
//!
//! ```text
//! snapshot ─ SEM ─ se ─┬──────────────────────────── INRV(se, te_0) ─ OutBlock ─ frame 0
//!                      └─ Fusion(se, feature_{i-1}) ─ INRV(·, te_i) ─ OutBlock ─ frame i
//! (t_i, c_i) ─ position encoding ─ TEM ─ te_i
//! ```
//!
//! INRV is a two-level encoder/decoder. At the bottleneck, `te` is mapped by
//! one affine layer to a per-channel `(scale, shift)` pair applied as
//! `f·(1 + scale) + shift`. The decoder feature map is returned alongside the
//! frame and, with self-recursion enabled, fused with `se` to condition the
//! next frame. One Fusion/INRV/OutBlock parameter set is shared by every step,
//! so the parameter count does not depend on the code length.
//!
//! OutBlock predicts a residual on top of the snapshot. Outputs are clamped
//! to `[0, 1]` only in inference mode.

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoding::{position_encode, PositionEncoding};
use super::layers::{act, cat_channels, split_half, upsample2, Conv2d, Linear, ResBlock};
use super::params::ParamStore;
use crate::code::ExposureCode;
use crate::error::{Error, Result};
use crate::forward::CodedSnapshot;
use crate::frames::{normalized_indices, FrameStack, Image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub code: ExposureCode,
    pub image_channels: usize,
    /// Frequency base of the position encoding.
    pub b: f64,
    /// Number of sin/cos frequency pairs.
    pub l: usize,
    /// Width of the spatial embedding (`C_s`).
    pub sem_channels: usize,
    /// INRV encoder widths after the first and second downsampling; the
    /// second is the bottleneck.
    pub enc_channels: [usize; 2],
    pub temporal_hidden: usize,
    /// Width of the temporal embedding (`W_t`).
    pub temporal_width: usize,
    pub use_recursion: bool,
    pub use_tem: bool,
}

impl NetworkConfig {
    pub fn new(code: ExposureCode) -> Self {
        Self {
            code,
            image_channels: 3,
            b: 1.25,
            l: 80,
            sem_channels: 32,
            enc_channels: [64, 128],
            temporal_hidden: 256,
            temporal_width: 256,
            use_recursion: true,
            use_tem: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.image_channels,
            self.sem_channels,
            self.enc_channels[0],
            self.enc_channels[1],
            self.temporal_hidden,
            self.temporal_width,
        ];
        if widths.contains(&0) || self.l == 0 {
            return Err(Error::Config("network widths and l must be positive".into()));
        }
        if !(self.image_channels == 1 || self.image_channels == 3) {
            return Err(Error::Config("image_channels must be 1 or 3".into()));
        }
        if !(self.b > 0.0) {
            return Err(Error::Config("position-encoding base b must be positive".into()));
        }
        self.code.ensure_light()
    }

    pub fn frames(&self) -> usize {
        self.code.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Unclamped outputs for gradient flow.
    Train,
    /// Outputs clamped to `[0, 1]`.
    Inference,
}

#[derive(Debug)]
struct Sem {
    head: Conv2d,
    blocks: Vec<ResBlock>,
}

#[derive(Debug)]
struct Tem {
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug)]
struct Inrv {
    enc0: Conv2d,
    enc0_res: ResBlock,
    down1: Conv2d,
    down1_res: ResBlock,
    down2: Conv2d,
    down2_res: ResBlock,
    modulation: Linear,
    mid_res: ResBlock,
    up1: Conv2d,
    up1_res: ResBlock,
    up0: Conv2d,
    up0_res: ResBlock,
}

#[derive(Debug)]
struct OutBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

#[derive(Debug)]
pub struct Bdinr {
    config: NetworkConfig,
    store: ParamStore,
    sem: Sem,
    tem: Tem,
    /// Stand-in for the temporal embedding when TEM is ablated.
    tem_const: Tensor,
    fusion: Conv2d,
    inrv: Inrv,
    out: OutBlock,
    /// Position encodings of every frame index, `N×2l`.
    encodings: Tensor,
}

impl Bdinr {
    pub fn new(config: NetworkConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(dtype, Device::Cpu);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = &mut store;
        let r = &mut rng;
        let cs = config.sem_channels;
        let [c1, c2] = config.enc_channels;
        let ci = config.image_channels;
        let wt = config.temporal_width;

        let sem = Sem {
            head: Conv2d::new(s, r, "sem.head", ci, cs, 3, 1)?,
            blocks: (0..3)
                .map(|i| ResBlock::new(s, r, &format!("sem.block{i}"), cs))
                .collect::<Result<_>>()?,
        };
        let tem = Tem {
            fc1: Linear::new(s, r, "tem.fc1", 2 * config.l, config.temporal_hidden)?,
            fc2: Linear::new(s, r, "tem.fc2", config.temporal_hidden, wt)?,
        };
        let tem_const = s.uniform("tem.constant".into(), &[1, wt], 1.0, r)?;
        let fusion = Conv2d::new(s, r, "fusion", 2 * cs, cs, 3, 1)?;
        let inrv = Inrv {
            enc0: Conv2d::new(s, r, "inrv.enc0", cs, cs, 3, 1)?,
            enc0_res: ResBlock::new(s, r, "inrv.enc0_res", cs)?,
            down1: Conv2d::new(s, r, "inrv.down1", cs, c1, 3, 2)?,
            down1_res: ResBlock::new(s, r, "inrv.down1_res", c1)?,
            down2: Conv2d::new(s, r, "inrv.down2", c1, c2, 3, 2)?,
            down2_res: ResBlock::new(s, r, "inrv.down2_res", c2)?,
            modulation: Linear::new(s, r, "inrv.modulation", wt, 2 * c2)?,
            mid_res: ResBlock::new(s, r, "inrv.mid_res", c2)?,
            up1: Conv2d::new(s, r, "inrv.up1", c2, c1, 3, 1)?,
            up1_res: ResBlock::new(s, r, "inrv.up1_res", c1)?,
            up0: Conv2d::new(s, r, "inrv.up0", c1, cs, 3, 1)?,
            up0_res: ResBlock::new(s, r, "inrv.up0_res", cs)?,
        };
        let out = OutBlock {
            conv1: Conv2d::new(s, r, "out.conv1", cs, cs, 3, 1)?,
            conv2: Conv2d::new(s, r, "out.conv2", cs, ci, 3, 1)?,
        };

        let encodings = frame_encodings(&config, dtype)?;
        Ok(Self {
            config,
            store,
            sem,
            tem,
            tem_const,
            fusion,
            inrv,
            out,
            encodings,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    pub fn check_dims(&self, height: usize, width: usize) -> Result<()> {
        if height % 4 != 0 || width % 4 != 0 || height == 0 || width == 0 {
            return Err(Error::IndivisibleDims {
                height,
                width,
                padded_height: height.div_ceil(4).max(1) * 4,
                padded_width: width.div_ceil(4).max(1) * 4,
            });
        }
        Ok(())
    }

    /// Spatial embedding of a `B×C×H×W` snapshot: `B×C_s×H×W`.
    pub fn spatial_embed(&self, snapshot: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = snapshot.dims4()?;
        if c != self.config.image_channels {
            return Err(Error::Shape(format!(
                "snapshot has {c} channels, network expects {}",
                self.config.image_channels
            )));
        }
        self.check_dims(h, w)?;
        let mut x = self.sem.head.forward(snapshot)?;
        for b in &self.sem.blocks {
            x = b.forward(&x)?;
        }
        Ok(x)
    }

    /// Temporal embeddings of `M×2l` position encodings: `M×W_t`.
    pub fn temporal_embed(&self, encodings: &Tensor) -> Result<Tensor> {
        let (m, width) = encodings.dims2()?;
        if width != 2 * self.config.l {
            return Err(Error::Shape(format!(
                "position encoding width {width}, expected {}",
                2 * self.config.l
            )));
        }
        if !self.config.use_tem {
            return Ok(self.tem_const.repeat((m, 1))?);
        }
        let h = act(&self.tem.fc1.forward(encodings)?)?;
        self.tem.fc2.forward(&h)
    }

    /// Temporal embedding of one position encoding, `1×W_t`.
    pub fn temporal_embed_one(&self, pe: &PositionEncoding) -> Result<Tensor> {
        let t = Tensor::from_slice(&pe.values, (1, pe.values.len()), self.store.device())?
            .to_dtype(self.dtype())?;
        self.temporal_embed(&t)
    }

    /// Concatenates `se` with the previous frame's feature and maps back to `C_s`.
    pub fn fuse_recursive(&self, se: &Tensor, prev_feature: &Tensor) -> Result<Tensor> {
        if se.dims() != prev_feature.dims() {
            return Err(Error::Shape(format!(
                "spatial embedding {:?} vs previous feature {:?}",
                se.dims(),
                prev_feature.dims()
            )));
        }
        self.fusion.forward(&cat_channels(se, prev_feature)?)
    }

    /// Decodes one frame. `se` is `B×C_s×H×W`, `te` is `1×W_t` or `B×W_t`,
    /// `snapshot` is `B×C×H×W`. Returns the unclamped frame and the feature map.
    pub fn inrv_decode(
        &self,
        se: &Tensor,
        te: &Tensor,
        snapshot: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let (b, cs, _, _) = se.dims4()?;
        if cs != self.config.sem_channels {
            return Err(Error::Shape(format!(
                "spatial embedding has {cs} channels, expected {}",
                self.config.sem_channels
            )));
        }
        let (tb, tw) = te.dims2()?;
        if tw != self.config.temporal_width || !(tb == 1 || tb == b) {
            return Err(Error::Shape(format!(
                "temporal embedding {:?} does not match batch {b} / width {}",
                te.dims(),
                self.config.temporal_width
            )));
        }
        let n = &self.inrv;
        let s0 = n.enc0_res.forward(&act(&n.enc0.forward(se)?)?)?;
        let s1 = n.down1_res.forward(&act(&n.down1.forward(&s0)?)?)?;
        let bott = n.down2_res.forward(&act(&n.down2.forward(&s1)?)?)?;

        let (scale, shift) = split_half(&n.modulation.forward(te)?)?;
        let c2 = self.config.enc_channels[1];
        let scale = (scale + 1.0)?.reshape((tb, c2, 1, 1))?;
        let shift = shift.reshape((tb, c2, 1, 1))?;
        let fused = bott.broadcast_mul(&scale)?.broadcast_add(&shift)?;
        let mid = n.mid_res.forward(&fused)?;

        let u1 = (act(&n.up1.forward(&upsample2(&mid)?)?)? + s1)?;
        let u1 = n.up1_res.forward(&u1)?;
        let u0 = (act(&n.up0.forward(&upsample2(&u1)?)?)? + s0)?;
        let feature = n.up0_res.forward(&u0)?;

        let head = self
            .out
            .conv2
            .forward(&act(&self.out.conv1.forward(&feature)?)?)?;
        Ok(((head + snapshot)?, feature))
    }

    /// All `N` frames of a `B×C×H×W` snapshot batch as `B×N×C×H×W`.
    pub fn forward(&self, snapshot: &Tensor, mode: Mode) -> Result<Tensor> {
        let n = self.config.frames();
        let frames = self.forward_indices(snapshot, &(0..n).collect::<Vec<_>>(), mode)?;
        Ok(Tensor::stack(&frames, 1)?)
    }

    /// Frames at the requested indices, each `B×C×H×W`.
    ///
    /// With self-recursion the chain must start at frame 0 and run in order,
    /// so only the full index list is accepted; without it each index is
    /// decoded independently from the snapshot embedding.
    pub fn forward_indices(
        &self,
        snapshot: &Tensor,
        indices: &[usize],
        mode: Mode,
    ) -> Result<Vec<Tensor>> {
        let n = self.config.frames();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        let full: Vec<usize> = (0..n).collect();
        if self.config.use_recursion && indices != full.as_slice() {
            return Err(Error::SelectiveOnRecursive);
        }
        let snapshot = snapshot.to_dtype(self.dtype())?;
        let se = self.spatial_embed(&snapshot)?;
        let te_all = self.temporal_embed(&self.encodings)?;
        let mut out = Vec::with_capacity(indices.len());
        let mut prev: Option<Tensor> = None;
        for &i in indices {
            let te = te_all.narrow(0, i, 1)?;
            let se_i = match (&prev, self.config.use_recursion) {
                (Some(p), true) => self.fuse_recursive(&se, p)?,
                _ => se.clone(),
            };
            let (frame, feature) = self.inrv_decode(&se_i, &te, &snapshot)?;
            out.push(match mode {
                Mode::Train => frame,
                Mode::Inference => frame.clamp(0.0, 1.0)?,
            });
            prev = Some(feature);
        }
        Ok(out)
    }

    /// Decomposes a snapshot into its latent frames.
    ///
    /// `indices == None` returns all `N` frames in order. Selective indices
    /// are sorted and de-duplicated; they require a checkpoint trained
    /// without self-recursion.
    pub fn decompose(
        &self,
        snapshot: &CodedSnapshot,
        indices: Option<&[usize]>,
    ) -> Result<FrameStack> {
        let n = self.config.frames();
        if snapshot.code.len() != n {
            return Err(Error::LengthMismatch {
                what: "snapshot code length vs network code length",
                expected: n,
                actual: snapshot.code.len(),
            });
        }
        let wanted: Vec<usize> = match indices {
            None => (0..n).collect(),
            Some(idx) => {
                if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
                    return Err(Error::IndexOutOfRange { index: bad, len: n });
                }
                if self.config.use_recursion {
                    return Err(Error::SelectiveOnRecursive);
                }
                let mut v = idx.to_vec();
                v.sort_unstable();
                v.dedup();
                v
            }
        };
        let x = snapshot
            .image
            .to_tensor(self.dtype(), self.store.device())?
            .unsqueeze(0)?;
        let frames = self
            .forward_indices(&x, &wanted, Mode::Inference)?
            .iter()
            .map(Image::from_tensor)
            .collect::<Result<Vec<_>>>()?;
        let all_t = normalized_indices(n);
        FrameStack::with_indices(frames, wanted.iter().map(|&i| all_t[i]).collect())
    }
}

fn frame_encodings(config: &NetworkConfig, dtype: DType) -> Result<Tensor> {
    let n = config.frames();
    let ts = normalized_indices(n);
    let mut data = Vec::with_capacity(n * 2 * config.l);
    for (i, &t) in ts.iter().enumerate() {
        data.extend(position_encode(t, config.code.bit(i), config.b, config.l)?.values);
    }
    Ok(Tensor::from_vec(data, (n, 2 * config.l), &Device::Cpu)?.to_dtype(dtype)?)
}
