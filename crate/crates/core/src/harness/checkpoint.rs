//! Policy checkpoints.
//!
//! Layout: one line of JSON metadata terminated by `\n`, then the flat
//! parameter vector as little-endian `f64`. When `normalizer_dim > 0` the
//! payload continues with the observation count as little-endian `u64` and
//! the per-channel mean and squared-deviation sums as little-endian `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::RunningNormalizer;
use crate::policy::{ActionBounds, PolicyParams, PolicyShape};

pub const FORMAT: &str = "pmtg-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub shape: PolicyShape,
    pub bounds: ActionBounds,
    /// Master seed of the run that produced the parameters.
    pub seed: u64,
    pub config_hash: String,
    /// Optimizer iterations completed when the checkpoint was written.
    pub iteration: u64,
    pub n_params: usize,
    pub normalizer_dim: usize,
}

impl CheckpointHeader {
    fn payload_len(&self) -> usize {
        let stats = if self.normalizer_dim > 0 { 8 + 16 * self.normalizer_dim } else { 0 };
        8 * self.n_params + stats
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: PolicyParams,
    pub normalizer: Option<RunningNormalizer>,
}

impl Checkpoint {
    pub fn new(
        params: PolicyParams,
        normalizer: Option<RunningNormalizer>,
        bounds: ActionBounds,
        seed: u64,
        config_hash: String,
        iteration: u64,
    ) -> Self {
        let header = CheckpointHeader {
            format: FORMAT.into(),
            version: VERSION,
            shape: params.shape.clone(),
            bounds,
            seed,
            config_hash,
            iteration,
            n_params: params.len(),
            normalizer_dim: normalizer.as_ref().map_or(0, RunningNormalizer::dim),
        };
        Self {
            header,
            params,
            normalizer,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("checkpoint header serializes");
        out.push(b'\n');
        for p in &self.params.flat {
            out.extend_from_slice(&p.to_le_bytes());
        }
        if let Some(n) = &self.normalizer {
            out.extend_from_slice(&n.count().to_le_bytes());
            for v in n.mean().iter().chain(n.m2()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::CorruptHeader("no header line".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[..split]).map_err(|e| Error::CorruptHeader(e.to_string()))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::CorruptHeader(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        if header.shape.param_count() != header.n_params {
            return Err(Error::CorruptHeader(format!(
                "shape {} has {} parameters but header declares {}",
                header.shape,
                header.shape.param_count(),
                header.n_params
            )));
        }
        let payload = &bytes[split + 1..];
        if payload.len() != header.payload_len() {
            return Err(Error::PayloadLength {
                expected: header.payload_len(),
                found: payload.len(),
            });
        }
        let mut words = payload.chunks_exact(8).map(|c| <[u8; 8]>::try_from(c).expect("8-byte chunk"));
        let flat: Vec<f64> = words.by_ref().take(header.n_params).map(f64::from_le_bytes).collect();
        let normalizer = if header.normalizer_dim > 0 {
            let count = u64::from_le_bytes(words.next().expect("length checked"));
            let rest: Vec<f64> = words.map(f64::from_le_bytes).collect();
            let (mean, m2) = rest.split_at(header.normalizer_dim);
            Some(RunningNormalizer::from_parts(count, mean.to_vec(), m2.to_vec())?)
        } else {
            None
        };
        let params = PolicyParams::from_flat(header.shape.clone(), flat)?;
        Ok(Self {
            header,
            params,
            normalizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Check the stored config hash. With `force` a mismatch is downgraded
    /// to a returned warning.
    pub fn verify_hash(&self, expected: &str, force: bool) -> Result<Option<String>> {
        if self.header.config_hash == expected {
            return Ok(None);
        }
        let err = Error::HashMismatch {
            expected: expected.into(),
            found: self.header.config_hash.clone(),
        };
        if force {
            Ok(Some(format!("warning: {err}; continuing because of --force")))
        } else {
            Err(err)
        }
    }

    /// Check that the parameters fit a policy of `shape`.
    pub fn verify_shape(&self, shape: &PolicyShape) -> Result<()> {
        if &self.header.shape == shape {
            Ok(())
        } else {
            Err(Error::CheckpointShape {
                checkpoint: self.header.shape.to_string(),
                config: shape.to_string(),
            })
        }
    }
}
