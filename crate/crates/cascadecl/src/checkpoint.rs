//! Model checkpoints: versioned binary files holding the architecture
//! config, the flat parameter vector, optional optimizer state, the
//! normalization statistics the model was trained with, and the training
//! metadata needed to reproduce its evaluation split.
//!
//! The round trip is exact: parameters and optimizer moments are stored as
//! little-endian 64-bit floats bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::write_atomic;
use crate::features::NormStats;
use crate::gnn::{DiffPoolModel, ModelConfig, ModelError};
use crate::optim::AdamState;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"DPCK";

/// How the checkpointed model was trained; enough to regenerate the exact
/// train/test split it was evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub train_frac: f64,
    /// Which repeat's split produced this model.
    pub repeat_index: u32,
    /// 1 after single-dataset training, 2 after incremental training.
    pub phase: u8,
    /// "single", "naive", "gem" or "ewc".
    pub method: String,
}

/// Everything needed to resume or evaluate a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Vec<f64>,
    pub adam: Option<AdamState>,
    /// Normalization statistics in task order: entry 0 for the first
    /// dataset, entry 1 (if present) for the incremental dataset.
    pub norms: Vec<NormStats>,
    pub meta: TrainMeta,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: bad magic (not a checkpoint)")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported checkpoint version {got} (expected {CHECKPOINT_VERSION})")]
    UnsupportedVersion { path: PathBuf, got: u32 },
    #[error("{path}: corrupt checkpoint at byte {offset}: {message}")]
    Corrupt {
        path: PathBuf,
        offset: usize,
        message: String,
    },
    #[error("checkpoint parameters ({got}) do not fit the stored architecture ({expected})")]
    ParamLengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());

        let config_json = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&config_json);

        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for &p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }

        match &self.adam {
            Some(st) => {
                out.push(1);
                out.extend_from_slice(&st.t.to_le_bytes());
                for &m in &st.m {
                    out.extend_from_slice(&m.to_le_bytes());
                }
                for &v in &st.v {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            None => out.push(0),
        }

        out.push(self.norms.len() as u8);
        for stats in &self.norms {
            let json = serde_json::to_vec(stats).expect("norm stats serialize");
            out.extend_from_slice(&(json.len() as u32).to_le_bytes());
            out.extend_from_slice(&json);
        }

        let meta_json = serde_json::to_vec(&self.meta).expect("meta serializes");
        out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta_json);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, CheckpointError> {
        let mut r = ByteReader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic {
                path: path.to_path_buf(),
            });
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion {
                path: path.to_path_buf(),
                got: version,
            });
        }

        let config_len = r.u32()? as usize;
        let config: ModelConfig =
            serde_json::from_slice(r.take(config_len)?).map_err(|source| CheckpointError::Json {
                path: path.to_path_buf(),
                source,
            })?;

        let param_len = r.u64()? as usize;
        let mut params = Vec::with_capacity(param_len);
        for _ in 0..param_len {
            params.push(r.f64()?);
        }

        let adam = match r.u8()? {
            0 => None,
            1 => {
                let t = r.u64()?;
                let mut m = Vec::with_capacity(param_len);
                for _ in 0..param_len {
                    m.push(r.f64()?);
                }
                let mut v = Vec::with_capacity(param_len);
                for _ in 0..param_len {
                    v.push(r.f64()?);
                }
                Some(AdamState { t, m, v })
            }
            other => {
                return Err(r.corrupt(format!("invalid optimizer flag {other}")));
            }
        };

        let norm_count = r.u8()? as usize;
        if norm_count > 2 {
            return Err(r.corrupt(format!("too many normalization entries: {norm_count}")));
        }
        let mut norms = Vec::with_capacity(norm_count);
        for _ in 0..norm_count {
            let len = r.u32()? as usize;
            let stats: NormStats =
                serde_json::from_slice(r.take(len)?).map_err(|source| CheckpointError::Json {
                    path: path.to_path_buf(),
                    source,
                })?;
            norms.push(stats);
        }

        let meta_len = r.u32()? as usize;
        let meta: TrainMeta =
            serde_json::from_slice(r.take(meta_len)?).map_err(|source| CheckpointError::Json {
                path: path.to_path_buf(),
                source,
            })?;

        if r.pos != bytes.len() {
            return Err(r.corrupt("trailing bytes"));
        }
        Ok(Checkpoint {
            config,
            params,
            adam,
            norms,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        write_atomic(path, &self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, path)
    }

    /// Reconstructs the model: builds the architecture from the stored
    /// config and installs the stored parameters.
    pub fn build_model(&self) -> Result<DiffPoolModel, CheckpointError> {
        let mut model = DiffPoolModel::new(self.config.clone(), 0)?;
        if model.param_count() != self.params.len() {
            return Err(CheckpointError::ParamLengthMismatch {
                expected: model.param_count(),
                got: self.params.len(),
            });
        }
        model
            .set_flat_params(&self.params)
            .map_err(ModelError::from)?;
        Ok(model)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn corrupt(&self, message: impl Into<String>) -> CheckpointError {
        CheckpointError::Corrupt {
            path: self.path.to_path_buf(),
            offset: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + len > self.bytes.len() {
            return Err(self.corrupt(format!(
                "needed {len} bytes, only {} remain",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
