//! Binary parameter checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` metadata length, the
//! metadata as JSON, then every tensor's values as little-endian `f64` in
//! metadata order. Metadata maps component names to named, shaped tensors.

use std::fs;
use std::path::Path;

use labelnoise_core::models::{Component, InputShape, ModelConfig, Network};
use labelnoise_core::nn::ParamStore;
use labelnoise_core::semi::{SemiConfig, SemiHeads, SemiPart};
use labelnoise_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::dataset::write_bytes;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LNCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentEntry {
    pub name: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    kind: String,
    config: serde_json::Value,
    components: Vec<ComponentEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// What the tensors rebuild: `network` or `semi`.
    pub kind: String,
    /// Architecture needed to rebuild the model before loading values.
    pub config: serde_json::Value,
    pub components: Vec<(String, Vec<(String, Tensor)>)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Metadata {
            kind: self.kind.clone(),
            config: self.config.clone(),
            components: self
                .components
                .iter()
                .map(|(name, ts)| ComponentEntry {
                    name: name.clone(),
                    tensors: ts
                        .iter()
                        .map(|(n, t)| TensorEntry {
                            name: n.clone(),
                            shape: t.shape().to_vec(),
                        })
                        .collect(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&meta).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, ts) in &self.components {
            for (_, t) in ts {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(path, m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let meta_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let meta_end = 20usize
            .checked_add(meta_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated metadata"))?;
        let meta: Metadata = serde_json::from_slice(&bytes[20..meta_end]).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let total: usize = meta
            .components
            .iter()
            .flat_map(|c| &c.tensors)
            .map(|t| t.shape.iter().product::<usize>())
            .sum();
        let expected = meta_end + total * 8;
        if bytes.len() != expected {
            return Err(Error::SizeMismatch {
                path: path.to_path_buf(),
                expected: expected as u64,
                actual: bytes.len() as u64,
            });
        }
        let mut values = bytes[meta_end..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()));
        let mut components = Vec::with_capacity(meta.components.len());
        for c in meta.components {
            let mut ts = Vec::with_capacity(c.tensors.len());
            for t in c.tensors {
                let n: usize = t.shape.iter().product();
                let data: Vec<f64> = values.by_ref().take(n).collect();
                ts.push((t.name, Tensor::from_vec(&t.shape, data)?));
            }
            components.push((c.name, ts));
        }
        Ok(Checkpoint {
            kind: meta.kind,
            config: meta.config,
            components,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    fn config_field<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self
            .config
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Config(format!("checkpoint config lacks `{key}`")))?;
        serde_json::from_value(v).map_err(|e| Error::Config(format!("checkpoint `{key}`: {e}")))
    }

    /// Copies every stored tensor into the same-named parameter of `store`.
    fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        let mut loaded = 0;
        for (_, ts) in &self.components {
            for (name, t) in ts {
                let id = store
                    .ids()
                    .find(|&id| store.name(id) == name)
                    .ok_or_else(|| Error::Config(format!("checkpoint tensor `{name}` has no matching parameter")))?;
                if store.value(id).shape() != t.shape() {
                    return Err(Error::Config(format!(
                        "checkpoint tensor `{name}` has shape {:?}, model expects {:?}",
                        t.shape(),
                        store.value(id).shape()
                    )));
                }
                *store.value_mut(id) = t.clone();
                loaded += 1;
            }
        }
        if loaded != store.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {loaded} of {} parameters",
                store.len()
            )));
        }
        Ok(())
    }
}

pub fn network_checkpoint(net: &Network) -> Checkpoint {
    Checkpoint {
        kind: "network".into(),
        config: serde_json::json!({
            "model": net.config,
            "input": net.input,
            "num_classes": net.num_classes,
        }),
        components: Component::ALL
            .iter()
            .map(|&c| (c.name().to_string(), net.component_tensors(c)))
            .collect(),
    }
}

pub fn network_from_checkpoint(ckpt: &Checkpoint) -> Result<Network> {
    if ckpt.kind != "network" {
        return Err(Error::Config(format!(
            "expected a network checkpoint, found `{}`",
            ckpt.kind
        )));
    }
    let model: ModelConfig = ckpt.config_field("model")?;
    let input: InputShape = ckpt.config_field("input")?;
    let k: usize = ckpt.config_field("num_classes")?;
    let mut net = Network::new(&model, input, k, 0)?;
    ckpt.load_into(&mut net.store)?;
    Ok(net)
}

pub fn semi_checkpoint(heads: &SemiHeads) -> Checkpoint {
    Checkpoint {
        kind: "semi".into(),
        config: serde_json::json!({
            "semi": heads.config,
            "input": heads.input,
            "num_classes": heads.num_classes,
        }),
        components: SemiPart::ALL
            .iter()
            .map(|&p| {
                let ts = heads
                    .params(p)
                    .into_iter()
                    .map(|id| (heads.store.name(id).to_string(), heads.store.value(id).clone()))
                    .collect();
                (p.name().to_string(), ts)
            })
            .collect(),
    }
}

pub fn semi_from_checkpoint(ckpt: &Checkpoint) -> Result<SemiHeads> {
    if ckpt.kind != "semi" {
        return Err(Error::Config(format!(
            "expected a semi checkpoint, found `{}`",
            ckpt.kind
        )));
    }
    let cfg: SemiConfig = ckpt.config_field("semi")?;
    let input: InputShape = ckpt.config_field("input")?;
    let k: usize = ckpt.config_field("num_classes")?;
    let mut heads = SemiHeads::new(&cfg, input, k, 0)?;
    ckpt.load_into(&mut heads.store)?;
    Ok(heads)
}
