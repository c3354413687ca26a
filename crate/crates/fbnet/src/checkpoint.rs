//! Checkpoint container: the exact training state needed to resume a run
//! bit-for-bit, in one file.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        "FBN1"
//! digest       32 bytes, sha256 of the canonical config text
//! config len   u32, followed by that many utf8 bytes
//! step         u64
//! entry count  u32
//! entries      u32 name len, utf8 name, tensor record
//! ```
//!
//! Entries hold the parameters under their registered names plus the
//! optimizer velocities under `opt.v.` prefixes, so a resumed run replays
//! the next step exactly. The digest binds the tensors to the config that
//! produced them; loading verifies it against the embedded text.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::Config;
use crate::params::ParamSet;
use crate::serialize::{read_tensor, write_tensor, SerializeError};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"FBN1";

/// Prefix distinguishing optimizer-velocity entries from parameters.
pub const VELOCITY_PREFIX: &str = "opt.v.";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] SerializeError),
    #[error("not a checkpoint: bad magic")]
    BadMagic,
    #[error("config digest does not match embedded config text")]
    DigestMismatch,
    #[error("embedded config rejected: {0}")]
    BadConfig(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint does not fit the model: {0}")]
    Incompatible(String),
}

pub fn config_digest(canonical_text: &str) -> [u8; 32] {
    Sha256::digest(canonical_text.as_bytes()).into()
}

/// In-memory checkpoint. `entries` preserves write order; parameters come
/// first, velocities after, each in registration order.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_text: String,
    pub step: u64,
    pub entries: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    /// Captures the full training state. `velocities` runs parallel to
    /// `params` registration order.
    pub fn capture(
        config: &Config,
        step: u64,
        params: &ParamSet<f64>,
        velocities: &[Tensor<f64>],
    ) -> Result<Checkpoint, CheckpointError> {
        let config_text = config
            .to_text()
            .map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
        if velocities.len() != params.len() {
            return Err(CheckpointError::Incompatible(format!(
                "{} velocity slots for {} parameters",
                velocities.len(),
                params.len()
            )));
        }
        let mut entries: Vec<(String, Tensor<f64>)> = params
            .iter()
            .map(|(name, value)| (name.to_string(), value.clone()))
            .collect();
        for ((name, _), v) in params.iter().zip(velocities) {
            entries.push((format!("{VELOCITY_PREFIX}{name}"), v.clone()));
        }
        Ok(Checkpoint { config_text, step, entries })
    }

    pub fn config(&self) -> Result<Config, CheckpointError> {
        Config::parse(&self.config_text).map_err(|e| CheckpointError::BadConfig(e.to_string()))
    }

    fn find(&self, name: &str) -> Option<&Tensor<f64>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies stored parameter values into `params`, requiring an exact
    /// name and shape match in both directions.
    pub fn apply_params(&self, params: &mut ParamSet<f64>) -> Result<(), CheckpointError> {
        let stored = self
            .entries
            .iter()
            .filter(|(n, _)| !n.starts_with(VELOCITY_PREFIX))
            .count();
        if stored != params.len() {
            return Err(CheckpointError::Incompatible(format!(
                "checkpoint stores {stored} parameters, model registers {}",
                params.len()
            )));
        }
        for id in params.ids().collect::<Vec<_>>() {
            let name = params.name(id).to_string();
            let tensor = self.find(&name).ok_or_else(|| {
                CheckpointError::Incompatible(format!("missing parameter `{name}`"))
            })?;
            params.set(id, tensor.clone()).map_err(|e| {
                CheckpointError::Incompatible(format!("parameter `{name}`: {e}"))
            })?;
        }
        Ok(())
    }

    /// Velocity tensors in `params` registration order; zeros when the
    /// checkpoint predates a velocity entry is not tolerated: every
    /// parameter must have one.
    pub fn velocities(&self, params: &ParamSet<f64>) -> Result<Vec<Tensor<f64>>, CheckpointError> {
        params
            .ids()
            .map(|id| {
                let name = params.name(id);
                self.find(&format!("{VELOCITY_PREFIX}{name}"))
                    .cloned()
                    .ok_or_else(|| {
                        CheckpointError::Incompatible(format!("missing velocity for `{name}`"))
                    })
            })
            .collect()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        w.write_all(&config_digest(&self.config_text))?;
        write_block(w, self.config_text.as_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.entries {
            write_block(w, name.as_bytes())?;
            write_tensor(w, tensor)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Checkpoint, CheckpointError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest)?;
        let config_text = String::from_utf8(read_block(r)?)
            .map_err(|_| CheckpointError::Malformed("config text is not utf8".into()))?;
        if config_digest(&config_text) != digest {
            return Err(CheckpointError::DigestMismatch);
        }
        let mut step = [0u8; 8];
        r.read_exact(&mut step)?;
        let mut count = [0u8; 4];
        r.read_exact(&mut count)?;
        let count = u32::from_le_bytes(count) as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name = String::from_utf8(read_block(r)?)
                .map_err(|_| CheckpointError::Malformed("entry name is not utf8".into()))?;
            entries.push((name, read_tensor(r)?));
        }
        Ok(Checkpoint { config_text, step: u64::from_le_bytes(step), entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let mut r = BufReader::new(fs::File::open(path)?);
        let ckpt = Self::read_from(&mut r)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        Ok(ckpt)
    }
}

fn write_block(w: &mut impl Write, bytes: &[u8]) -> std::io::Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)
}

fn read_block(r: &mut impl Read) -> Result<Vec<u8>, CheckpointError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(CheckpointError::Malformed(format!("block length {len} is absurd")));
    }
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes)?;
    Ok(bytes)
}
