//! Checkpoint directories: `meta.json` plus one raw little-endian `f32`
//! file per named parameter (and per Adam moment).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DepthNet, ModelConfig};
use crate::nn::{Adam, Parameters};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    SourcePretrain,
    DomainAdapt,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::SourcePretrain => "source_pretrain",
            Phase::DomainAdapt => "domain_adapt",
        }
    }
}

/// Validation summary recorded after an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub val_rmse_mm: Option<f64>,
    pub val_delta1: Option<f64>,
    pub train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: DepthNet,
    pub optimizer: Adam,
    pub epoch: usize,
    pub phase: Phase,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerMeta {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    step: u64,
    /// Moment files in parameter order; empty before the first step.
    moments: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    model_config: ModelConfig,
    epoch: usize,
    phase: Phase,
    seed: u64,
    history: Vec<EpochRecord>,
    params: Vec<TensorEntry>,
    optimizer: OptimizerMeta,
}

fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::ShapeMismatch(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

impl Checkpoint {
    pub fn model_config(&self) -> &ModelConfig {
        self.net.config()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("optim")).map_err(|e| Error::io(dir, e))?;
        let mut net = self.net.clone();
        let mut params = Vec::new();
        let mut result = Ok(());
        net.visit("", &mut |name, p| {
            let file = format!("{name}.f32");
            if result.is_ok() {
                result = write_f32(&dir.join(&file), &p.value);
            }
            params.push(TensorEntry { name: name.to_string(), shape: p.shape.clone(), file });
        });
        result?;
        let mut moments = Vec::new();
        for (entry, (m, v)) in params.iter().zip(&self.optimizer.moments) {
            let mf = format!("optim/{}.m.f32", entry.name);
            let vf = format!("optim/{}.v.f32", entry.name);
            write_f32(&dir.join(&mf), m)?;
            write_f32(&dir.join(&vf), v)?;
            moments.push((mf, vf));
        }
        let meta = Meta {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model_config: self.net.config().clone(),
            epoch: self.epoch,
            phase: self.phase,
            seed: self.seed,
            history: self.history.clone(),
            params,
            optimizer: OptimizerMeta {
                lr: self.optimizer.lr,
                beta1: self.optimizer.beta1,
                beta2: self.optimizer.beta2,
                eps: self.optimizer.eps,
                step: self.optimizer.step,
                moments,
            },
        };
        let path = dir.join(META_FILE);
        let body = serde_json::to_vec_pretty(&meta).expect("meta serializes");
        fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let meta: Meta = serde_json::from_slice(&bytes).map_err(|source| Error::Json { path: path.clone(), source })?;
        if meta.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::ConfigInvalid(format!("unsupported checkpoint format {}", meta.format_version)));
        }
        let mut net = DepthNet::new(meta.model_config.clone(), meta.seed)?;
        let mut by_name: HashMap<&str, &TensorEntry> = HashMap::new();
        for e in &meta.params {
            if by_name.insert(e.name.as_str(), e).is_some() {
                return Err(Error::ConfigInvalid(format!("parameter {} listed twice", e.name)));
            }
        }
        let mut result = Ok(());
        let mut seen = 0;
        net.visit("", &mut |name, p| {
            if result.is_err() {
                return;
            }
            let Some(entry) = by_name.get(name) else {
                result = Err(Error::ConfigInvalid(format!("checkpoint lacks parameter {name}")));
                return;
            };
            if entry.shape != p.shape {
                result = Err(Error::ShapeMismatch(format!("{name}: {:?} vs {:?}", entry.shape, p.shape)));
                return;
            }
            match read_f32(&dir.join(&entry.file), p.len()) {
                Ok(v) => {
                    p.value = v;
                    seen += 1;
                }
                Err(e) => result = Err(e),
            }
        });
        result?;
        if seen != meta.params.len() {
            return Err(Error::ConfigInvalid("checkpoint lists parameters the model does not have".into()));
        }
        let mut optimizer = Adam::new(meta.optimizer.lr, meta.optimizer.beta1, meta.optimizer.beta2);
        optimizer.eps = meta.optimizer.eps;
        optimizer.step = meta.optimizer.step;
        for (entry, (mf, vf)) in meta.params.iter().zip(&meta.optimizer.moments) {
            let n: usize = entry.shape.iter().product();
            optimizer.moments.push((read_f32(&dir.join(mf), n)?, read_f32(&dir.join(vf), n)?));
        }
        Ok(Checkpoint { net, optimizer, epoch: meta.epoch, phase: meta.phase, seed: meta.seed, history: meta.history })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn round_trip_reproduces_forward_bitwise() {
        let cfg = ModelConfig { image_size: 32, ..ModelConfig::desk() };
        let mut net = DepthNet::new(cfg, 17).unwrap();
        // Perturb so loaded weights cannot coincide with a fresh init.
        net.visit("", &mut |_, p| p.value.iter_mut().for_each(|v| *v += 0.001));
        let mut optimizer = Adam::new(1e-4, 0.9, 0.999);
        optimizer.step = 3;
        net.visit("", &mut |_, p| optimizer.moments.push((vec![0.5; p.len()], vec![0.25; p.len()])));
        let ckpt = Checkpoint {
            net,
            optimizer,
            epoch: 4,
            phase: Phase::SourcePretrain,
            seed: 17,
            history: vec![EpochRecord {
                phase: Phase::SourcePretrain,
                epoch: 4,
                val_rmse_mm: Some(3.0),
                val_delta1: Some(0.9),
                train_loss: 1.0,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        ckpt.save(dir.path()).unwrap();
        let mut loaded = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(loaded.epoch, 4);
        assert_eq!(loaded.phase, Phase::SourcePretrain);
        assert_eq!(loaded.history, ckpt.history);
        assert_eq!(loaded.optimizer.step, 3);
        assert_eq!(loaded.optimizer.moments[0].1[0], 0.25);
        let probe = Tensor::full([2, 3, 32, 32], 0.3);
        let a = ckpt.net.clone().predict(&probe).unwrap();
        let b = loaded.net.predict(&probe).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn truncated_tensor_is_rejected() {
        let cfg = ModelConfig { image_size: 16, base_width: 2, n_res_blocks: 1, disc_hidden: 4, ..ModelConfig::desk() };
        let ckpt = Checkpoint {
            net: DepthNet::new(cfg, 0).unwrap(),
            optimizer: Adam::new(1e-4, 0.9, 0.999),
            epoch: 0,
            phase: Phase::DomainAdapt,
            seed: 0,
            history: Vec::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        ckpt.save(dir.path()).unwrap();
        fs::write(dir.path().join("features.stem.conv.bias.f32"), [0u8; 3]).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::ShapeMismatch(_))));
    }
}
