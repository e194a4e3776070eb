use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adan::OptimizerConfig;
use crate::code::ExposureCode;
use crate::error::{Error, Result};
use crate::forward::Normalization;
use crate::loss::{CharbonnierMode, LossWeights};
use crate::nn::NetworkConfig;

/// Network widths; the code and ablation switches live on [`TrainConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkWidths {
    pub image_channels: usize,
    pub b: f64,
    pub l: usize,
    pub sem_channels: usize,
    pub enc_channels: [usize; 2],
    pub temporal_hidden: usize,
    pub temporal_width: usize,
}

impl Default for NetworkWidths {
    fn default() -> Self {
        let n = NetworkConfig::new(ExposureCode::all_ones(1).expect("non-empty"));
        Self {
            image_channels: n.image_channels,
            b: n.b,
            l: n.l,
            sem_channels: n.sem_channels,
            enc_channels: n.enc_channels,
            temporal_hidden: n.temporal_hidden,
            temporal_width: n.temporal_width,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Relative paths resolve against the config file's directory.
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> candle_core::DType {
        match self {
            Precision::F32 => candle_core::DType::F32,
            Precision::F64 => candle_core::DType::F64,
        }
    }
}

/// Full description of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub code: String,
    pub window: usize,
    pub crop: usize,
    pub batch_size: usize,
    pub epochs: u64,
    pub lr_init: f64,
    pub lr_final: f64,
    pub warmup_epochs: u64,
    pub seed: u64,
    pub use_coded_exposure: bool,
    pub use_recursion: bool,
    pub use_tem: bool,
    pub augment: bool,
    pub noise_sigma_range: [f64; 2],
    /// Fixed noise level used when synthesizing evaluation snapshots.
    pub eval_noise_sigma: f64,
    pub normalization: Normalization,
    pub charbonnier: CharbonnierMode,
    /// Validation every this many epochs (and after the last epoch).
    pub val_every: u64,
    pub precision: Precision,
    pub optimizer: OptimizerConfig,
    pub loss_weights: LossWeights,
    pub network: NetworkWidths,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            code: "11100101".into(),
            window: 8,
            crop: 256,
            batch_size: 8,
            epochs: 500,
            lr_init: 5e-4,
            lr_final: 1e-6,
            warmup_epochs: 2,
            seed: 0,
            use_coded_exposure: true,
            use_recursion: true,
            use_tem: true,
            augment: true,
            noise_sigma_range: [0.0, 0.01],
            eval_noise_sigma: 0.0,
            normalization: Normalization::OnesCount,
            charbonnier: CharbonnierMode::FrameNorm,
            val_every: 10,
            precision: Precision::F32,
            optimizer: OptimizerConfig::default(),
            loss_weights: LossWeights::default(),
            network: NetworkWidths::default(),
            data: DataConfig::default(),
        }
    }
}

impl TrainConfig {
    /// The small configuration used for desk-scale runs: 32×32 crops, one
    /// clip per batch, narrow layers, no augmentation or noise.
    pub fn tiny() -> Self {
        Self {
            crop: 32,
            batch_size: 1,
            epochs: 200,
            lr_init: 5e-3,
            lr_final: 1e-6,
            warmup_epochs: 2,
            augment: false,
            noise_sigma_range: [0.0, 0.0],
            val_every: 50,
            optimizer: OptimizerConfig {
                grad_clip: Some(0.1),
                ..OptimizerConfig::default()
            },
            network: NetworkWidths {
                sem_channels: 16,
                enc_channels: [32, 64],
                temporal_hidden: 128,
                temporal_width: 128,
                ..NetworkWidths::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a config file, resolving data paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.train_manifest, &mut cfg.data.val_manifest]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// The code actually used: all-ones of length `window` when coded
    /// exposure is disabled.
    pub fn effective_code(&self) -> Result<ExposureCode> {
        if !self.use_coded_exposure {
            return ExposureCode::all_ones(self.window);
        }
        let code: ExposureCode = self.code.parse()?;
        if code.len() != self.window {
            return Err(Error::Config(format!(
                "code {} has {} bits but the window is {}",
                code,
                code.len(),
                self.window
            )));
        }
        code.ensure_light()?;
        Ok(code)
    }

    pub fn network_config(&self) -> Result<NetworkConfig> {
        let w = &self.network;
        let cfg = NetworkConfig {
            code: self.effective_code()?,
            image_channels: w.image_channels,
            b: w.b,
            l: w.l,
            sem_channels: w.sem_channels,
            enc_channels: w.enc_channels,
            temporal_hidden: w.temporal_hidden,
            temporal_width: w.temporal_width,
            use_recursion: self.use_recursion,
            use_tem: self.use_tem,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.window == 0 {
            return fail("window must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.crop == 0 || self.crop % 4 != 0 {
            return fail("crop must be a positive multiple of 4");
        }
        if !(self.lr_final <= self.lr_init) || self.lr_final < 0.0 {
            return fail("learning rates must satisfy 0 <= lr_final <= lr_init");
        }
        if self.warmup_epochs >= self.epochs {
            return fail("warmup_epochs must be smaller than epochs");
        }
        let [lo, hi] = self.noise_sigma_range;
        if !(0.0 <= lo && lo <= hi) {
            return fail("noise_sigma_range must satisfy 0 <= lo <= hi");
        }
        if self.eval_noise_sigma < 0.0 {
            return fail("eval_noise_sigma must be non-negative");
        }
        if self.val_every == 0 {
            return fail("val_every must be at least 1");
        }
        self.optimizer.validate()?;
        self.loss_weights.validate()?;
        self.network_config().map(|_| ())
    }
}
