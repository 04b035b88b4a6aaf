//! Binary checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic      8 bytes  "SUBBANDC"
//! version    u32
//! config     u32 length + UTF-8 TOML
//! count      u32
//! tensors    count x { u32 name length, name, u8 dtype, u32 rank, rank x u64 dims, payload }
//! crc32      u32 over every preceding byte
//! ```
//!
//! dtype tags: 1 = f32, 2 = f64, 3 = u64.

use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Scalar;
use crate::train::{Optimizer, PlateauSchedule, TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"SUBBANDC";
pub const VERSION: u32 = 1;
const TAG_U64: u8 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dtype: u8,
    pub dims: Vec<u64>,
    /// Little-endian element bytes.
    pub payload: Vec<u8>,
}

impl NamedTensor {
    fn elem_size(dtype: u8) -> Option<usize> {
        match dtype {
            1 => Some(4),
            2 | TAG_U64 => Some(8),
            _ => None,
        }
    }

    pub fn from_slice<T: Scalar>(name: impl Into<String>, dims: &[usize], data: &[T]) -> Self {
        let mut payload = Vec::with_capacity(data.len() * T::DTYPE.size());
        for &v in data {
            v.write_le(&mut payload);
        }
        NamedTensor {
            name: name.into(),
            dtype: T::DTYPE.tag(),
            dims: dims.iter().map(|&d| d as u64).collect(),
            payload,
        }
    }

    pub fn from_u64(name: impl Into<String>, data: &[u64]) -> Self {
        NamedTensor {
            name: name.into(),
            dtype: TAG_U64,
            dims: vec![data.len() as u64],
            payload: data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().product::<u64>() as usize
    }

    pub fn to_vec<T: Scalar>(&self) -> Result<Vec<T>, CheckpointError> {
        if self.dtype != T::DTYPE.tag() {
            return Err(CheckpointError::Param {
                name: self.name.clone(),
                msg: format!("stored dtype tag {} but {:?} requested", self.dtype, T::DTYPE),
            });
        }
        Ok(self.payload.chunks_exact(T::DTYPE.size()).map(T::read_le).collect())
    }

    pub fn to_u64(&self) -> Result<Vec<u64>, CheckpointError> {
        if self.dtype != TAG_U64 {
            return Err(CheckpointError::Param { name: self.name.clone(), msg: "expected u64 data".into() });
        }
        Ok(self
            .payload
            .chunks_exact(8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub tensors: Vec<NamedTensor>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated {
            offset: self.pos,
            needed: n,
            len: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn require(&self, name: &str) -> Result<&NamedTensor, CheckpointError> {
        self.get(name).ok_or_else(|| CheckpointError::Param { name: name.into(), msg: "missing".into() })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut out, self.config.len());
        out.extend_from_slice(self.config.as_bytes());
        put_u32(&mut out, self.tensors.len());
        for t in &self.tensors {
            put_u32(&mut out, t.name.len());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dtype);
            put_u32(&mut out, t.dims.len());
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(&t.payload);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < MAGIC.len() + 8 {
            return Err(CheckpointError::Truncated { offset: MAGIC.len(), needed: 8, len: bytes.len() });
        }
        let body = &bytes[..bytes.len() - 4];
        let mut r = Reader { bytes: body, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version { found: version, expected: VERSION });
        }
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }
        let n = r.u32()? as usize;
        let config = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("config is not UTF-8".into()))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
            let dtype = r.u8()?;
            let size = NamedTensor::elem_size(dtype)
                .ok_or_else(|| CheckpointError::Param { name: name.clone(), msg: format!("unknown dtype tag {dtype}") })?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
            let len = dims
                .iter()
                .try_fold(size as u64, |a, &d| a.checked_mul(d))
                .ok_or_else(|| CheckpointError::Param { name: name.clone(), msg: "dimensions overflow".into() })?;
            let payload = r.take(len as usize)?.to_vec();
            tensors.push(NamedTensor { name, dtype, dims, payload });
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Checkpoint { config, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        // Write-then-rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(Self::from_bytes(&bytes)?)
    }

    /// Snapshot of the model parameters and, optionally, training state.
    pub fn capture<T: Scalar>(model: &Model<T>, train: Option<(&TrainState<T>, &TrainConfig)>) -> Self {
        let info = model.param_info();
        let mut tensors: Vec<NamedTensor> = info
            .iter()
            .zip(model.params())
            .map(|(p, data)| NamedTensor::from_slice(format!("param/{}", p.name), &p.dims, data))
            .collect();
        if let Some((state, cfg)) = train {
            let opt = &state.optimizer;
            for (p, v) in info.iter().zip(&opt.velocities) {
                if p.trainable {
                    tensors.push(NamedTensor::from_slice(format!("velocity/{}", p.name), &p.dims, v));
                }
            }
            tensors.push(NamedTensor::from_u64("state/epoch", &[state.epoch as u64]));
            tensors.push(NamedTensor::from_u64("state/seed", &[state.seed]));
            let s = &state.schedule;
            let floats = [
                opt.lr_main,
                opt.lr_frontend,
                opt.momentum,
                opt.weight_decay,
                s.patience as f64,
                s.threshold,
                s.factor,
                s.floor,
                s.best,
                s.stale as f64,
            ];
            tensors.push(NamedTensor::from_slice("state/optimizer", &[floats.len()], &floats));
            let tc = [
                cfg.batch_size as f64,
                cfg.lr,
                cfg.lr_frontend_ratio,
                cfg.momentum,
                cfg.weight_decay,
                cfg.patience as f64,
                cfg.threshold,
                cfg.lr_floor,
                if cfg.augment { 1.0 } else { 0.0 },
                cfg.val_fraction,
            ];
            tensors.push(NamedTensor::from_slice("state/train_config", &[tc.len()], &tc));
        }
        Checkpoint { config: model.config().to_toml(), tensors }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        ModelConfig::from_toml(&self.config)
    }

    /// Copies stored parameters into `model`. Every check runs before the
    /// first write, so a refused load leaves the model untouched.
    pub fn apply_to<T: Scalar>(&self, model: &mut Model<T>) -> Result<()> {
        let stored = self.model_config()?;
        if &stored != model.config() {
            return Err(CheckpointError::ConfigMismatch(format!(
                "checkpoint holds {} ({}), model is {} ({})",
                stored.name,
                stored.architecture,
                model.config().name,
                model.config().architecture
            ))
            .into());
        }
        let mut values = Vec::new();
        for p in model.param_info() {
            let name = format!("param/{}", p.name);
            let t = self.require(&name)?;
            let dims: Vec<u64> = p.dims.iter().map(|&d| d as u64).collect();
            if t.dims != dims {
                return Err(CheckpointError::Param { name, msg: format!("shape {:?}, expected {:?}", t.dims, dims) }.into());
            }
            values.push(t.to_vec::<T>()?);
        }
        for (dst, src) in model.params_mut().into_iter().zip(values) {
            dst.copy_from_slice(&src);
        }
        Ok(())
    }

    /// Builds the stored model.
    pub fn model<T: Scalar>(&self) -> Result<Model<T>> {
        let mut m = Model::build(&self.model_config()?, 0)?;
        self.apply_to(&mut m)?;
        Ok(m)
    }

    pub fn has_train_state(&self) -> bool {
        self.get("state/epoch").is_some()
    }

    /// Training state and configuration for resuming on `model`.
    pub fn train_state<T: Scalar>(&self, model: &Model<T>) -> Result<(TrainState<T>, TrainConfig)> {
        let epoch = self.require("state/epoch")?.to_u64()?;
        let seed = self.require("state/seed")?.to_u64()?;
        let f = self.require("state/optimizer")?.to_vec::<f64>()?;
        let tc = self.require("state/train_config")?.to_vec::<f64>()?;
        if epoch.len() != 1 || seed.len() != 1 || f.len() != 10 || tc.len() != 10 {
            return Err(CheckpointError::Malformed("training state has unexpected sizes".into()).into());
        }
        let cfg = TrainConfig {
            batch_size: tc[0] as usize,
            lr: tc[1],
            lr_frontend_ratio: tc[2],
            momentum: tc[3],
            weight_decay: tc[4],
            patience: tc[5] as usize,
            threshold: tc[6],
            lr_floor: tc[7],
            augment: tc[8] != 0.0,
            val_fraction: tc[9],
            ..TrainConfig::default()
        };
        let info = model.param_info();
        let velocities = info
            .iter()
            .map(|p| {
                if !p.trainable {
                    return Ok(Vec::new());
                }
                let name = format!("velocity/{}", p.name);
                let t = self.require(&name)?;
                if t.element_count() != p.len() {
                    return Err(CheckpointError::Param { name, msg: "size differs from parameter".into() });
                }
                t.to_vec::<T>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let state = TrainState {
            epoch: epoch[0] as usize,
            seed: seed[0],
            optimizer: Optimizer {
                lr_main: f[0],
                lr_frontend: f[1],
                momentum: f[2],
                weight_decay: f[3],
                velocities,
            },
            schedule: PlateauSchedule {
                patience: f[4] as usize,
                threshold: f[5],
                factor: f[6],
                floor: f[7],
                best: f[8],
                stale: f[9] as usize,
            },
        };
        Ok((state, cfg))
    }
}
