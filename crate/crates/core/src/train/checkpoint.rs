//! Single-file checkpoints.
//!
//! A safetensors file whose string metadata holds the format version, the
//! network config (including the code id string, `b` and `l`), the training
//! config, the step counter and the best-validation record, all as JSON.
//! Tensors are named `param/<name>` for weights and
//! `adan/{m,v,n,prev}/<name>` for optimizer state. Raw little-endian bytes
//! are stored, so a reload is bit-exact.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use super::adan::{Adan, AdanSlot, OptimizerConfig};
use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{Bdinr, NetworkConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub epoch: u64,
    pub step: u64,
    pub psnr: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    pub slots: BTreeMap<String, AdanSlot>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    pub train: Option<TrainConfig>,
    /// Optimizer steps completed.
    pub step: u64,
    pub best: Option<BestRecord>,
    pub params: BTreeMap<String, Tensor>,
    pub optimizer: Option<OptimizerState>,
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Snapshot of a network's current weights (copied, so later training
    /// does not alter the checkpoint).
    pub fn from_network(net: &Bdinr) -> Result<Self> {
        let params = net
            .params()
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self {
            network: net.config().clone(),
            train: None,
            step: 0,
            best: None,
            params,
            optimizer: None,
        })
    }

    pub fn with_optimizer(mut self, opt: &Adan) -> Result<Self> {
        let slots = opt
            .slots()
            .iter()
            .map(|(k, s)| {
                Ok((
                    k.clone(),
                    AdanSlot {
                        m: s.m.copy()?,
                        v: s.v.copy()?,
                        n: s.n.copy()?,
                        prev_grad: s.prev_grad.copy()?,
                    },
                ))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        self.optimizer = Some(OptimizerState {
            config: opt.config().clone(),
            step: opt.step_count(),
            slots,
        });
        Ok(self)
    }

    /// Rebuilds the network with the stored weights.
    pub fn build_network(&self) -> Result<Bdinr> {
        let dtype = self
            .params
            .values()
            .next()
            .map(|t| t.dtype())
            .ok_or_else(|| ckpt_err("checkpoint holds no parameters"))?;
        let net = Bdinr::new(self.network.clone(), 0, dtype)?;
        let expected: Vec<&String> = net.params().names().collect();
        let stored: Vec<&String> = self.params.keys().collect();
        if expected != stored {
            return Err(ckpt_err(format!(
                "parameter names do not match the network layout ({} stored, {} expected)",
                stored.len(),
                expected.len()
            )));
        }
        for (name, t) in &self.params {
            net.params().set(name, t)?;
        }
        Ok(net)
    }

    pub fn build_optimizer(&self) -> Result<Option<Adan>> {
        self.optimizer
            .as_ref()
            .map(|s| Adan::from_state(s.config.clone(), s.step, s.slots.clone()))
            .transpose()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries: Vec<(String, Dtype, Vec<usize>, Vec<u8>)> = Vec::new();
        let mut push = |name: String, t: &Tensor| -> Result<()> {
            let (dtype, bytes) = tensor_bytes(t)?;
            entries.push((name, dtype, t.dims().to_vec(), bytes));
            Ok(())
        };
        for (k, t) in &self.params {
            push(format!("param/{k}"), t)?;
        }
        if let Some(opt) = &self.optimizer {
            for (k, s) in &opt.slots {
                push(format!("adan/m/{k}"), &s.m)?;
                push(format!("adan/v/{k}"), &s.v)?;
                push(format!("adan/n/{k}"), &s.n)?;
                push(format!("adan/prev/{k}"), &s.prev_grad)?;
            }
        }
        let views = entries
            .iter()
            .map(|(name, dtype, shape, bytes)| {
                TensorView::new(*dtype, shape.clone(), bytes)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| ckpt_err(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;

        let json = |v: &dyn erased::Json| v.to_json();
        let mut meta = HashMap::new();
        meta.insert("format_version".into(), FORMAT_VERSION.to_string());
        meta.insert("network_config".into(), json(&self.network)?);
        meta.insert("step".into(), self.step.to_string());
        if let Some(t) = &self.train {
            meta.insert("train_config".into(), json(t)?);
        }
        if let Some(b) = &self.best {
            meta.insert("best".into(), json(b)?);
        }
        if let Some(opt) = &self.optimizer {
            meta.insert("optimizer".into(), json(&opt.config)?);
            meta.insert("optimizer_step".into(), opt.step.to_string());
        }
        safetensors::tensor::serialize_to_file(views, Some(meta), path)
            .map_err(|e| ckpt_err(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (_, metadata) = SafeTensors::read_metadata(&buf)
            .map_err(|e| ckpt_err(format!("{}: {e}", path.display())))?;
        let meta = metadata
            .metadata()
            .clone()
            .ok_or_else(|| ckpt_err("missing metadata"))?;
        let get = |k: &str| meta.get(k).ok_or_else(|| ckpt_err(format!("missing metadata key {k}")));
        let version: u32 = get("format_version")?
            .parse()
            .map_err(|_| ckpt_err("bad format_version"))?;
        if version != FORMAT_VERSION {
            return Err(ckpt_err(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let from_json = |k: &str| -> Result<Option<serde_json::Value>> {
            meta.get(k)
                .map(|s| serde_json::from_str(s).map_err(|e| ckpt_err(format!("{k}: {e}"))))
                .transpose()
        };
        let parse = |v: serde_json::Value, k: &str| ckpt_err(format!("{k}: {v}"));
        let network: NetworkConfig = serde_json::from_value(from_json("network_config")?.unwrap())
            .map_err(|e| ckpt_err(format!("network_config: {e}")))?;
        let train = from_json("train_config")?
            .map(|v| serde_json::from_value::<TrainConfig>(v.clone()).map_err(|_| parse(v, "train_config")))
            .transpose()?;
        let best = from_json("best")?
            .map(|v| serde_json::from_value::<BestRecord>(v.clone()).map_err(|_| parse(v, "best")))
            .transpose()?;
        let step: u64 = get("step")?.parse().map_err(|_| ckpt_err("bad step"))?;

        let st = SafeTensors::deserialize(&buf).map_err(|e| ckpt_err(e.to_string()))?;
        let mut params = BTreeMap::new();
        let mut moments: BTreeMap<String, [Option<Tensor>; 4]> = BTreeMap::new();
        for (name, view) in st.tensors() {
            let t = view_to_tensor(&view)?;
            if let Some(k) = name.strip_prefix("param/") {
                params.insert(k.to_string(), t);
            } else if let Some(rest) = name.strip_prefix("adan/") {
                let (kind, k) = rest
                    .split_once('/')
                    .ok_or_else(|| ckpt_err(format!("bad tensor name {name}")))?;
                let idx = match kind {
                    "m" => 0,
                    "v" => 1,
                    "n" => 2,
                    "prev" => 3,
                    _ => return Err(ckpt_err(format!("bad tensor name {name}"))),
                };
                moments.entry(k.to_string()).or_default()[idx] = Some(t);
            } else {
                return Err(ckpt_err(format!("unexpected tensor {name}")));
            }
        }
        let optimizer = match meta.get("optimizer") {
            None => None,
            Some(s) => {
                let config: OptimizerConfig =
                    serde_json::from_str(s).map_err(|e| ckpt_err(format!("optimizer: {e}")))?;
                let step = get("optimizer_step")?
                    .parse()
                    .map_err(|_| ckpt_err("bad optimizer_step"))?;
                let slots = moments
                    .into_iter()
                    .map(|(k, [m, v, n, p])| match (m, v, n, p) {
                        (Some(m), Some(v), Some(n), Some(prev_grad)) => Ok((
                            k,
                            AdanSlot {
                                m,
                                v,
                                n,
                                prev_grad,
                            },
                        )),
                        _ => Err(ckpt_err(format!("incomplete optimizer state for {k}"))),
                    })
                    .collect::<Result<BTreeMap<_, _>>>()?;
                Some(OptimizerState { config, step, slots })
            }
        };
        Ok(Self {
            network,
            train,
            step,
            best,
            params,
            optimizer,
        })
    }
}

mod erased {
    use crate::error::{Error, Result};

    pub trait Json {
        fn to_json(&self) -> Result<String>;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_json(&self) -> Result<String> {
            serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
        }
    }
}

fn tensor_bytes(t: &Tensor) -> Result<(Dtype, Vec<u8>)> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F32 => (
            Dtype::F32,
            flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        DType::F64 => (
            Dtype::F64,
            flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        other => return Err(ckpt_err(format!("unsupported dtype {other:?}"))),
    })
}

fn view_to_tensor(view: &TensorView<'_>) -> Result<Tensor> {
    let shape = view.shape().to_vec();
    let data = view.data();
    let t = match view.dtype() {
        Dtype::F32 => {
            let v: Vec<f32> = data
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        Dtype::F64 => {
            let v: Vec<f64> = data
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        other => return Err(ckpt_err(format!("unsupported dtype {other:?}"))),
    };
    Ok(t)
}
