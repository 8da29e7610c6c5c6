//! Binary checkpoint format.
//!
//! `"RGFM"`, a little-endian `u32` format version, then little-endian `f64`
//! values in this order:
//!
//! 1. model: `dim_h, dim_s, kappa_h, kappa_s, layers, hidden`
//! 2. init: `k` (0 = factor dimension), `eigen_mode` (0 largest, 1 smallest)
//! 3. training: `epochs, batch_size, learning_rate, dropout, seed_hi,
//!    seed_lo, samples_per_anchor, tree_depth, branch_cap, temperature,
//!    negative_pool` (0 batch, 1 full), `freeze_samples` (0/1)
//! 4. progress: `step, epochs_done`
//! 5. parameters, then Adam first moments, then Adam second moments, each
//!    flattened in layer order, H factor before S, tensors in
//!    [`FactorParams::tensors`](crate::layer::FactorParams::tensors) order.
//!
//! The seed is split into two 32-bit halves so it survives the `f64`
//! encoding exactly. The random streams are derived from the seed and the
//! epoch counter, so these two values are the complete RNG state.

use std::fs;
use std::path::Path;

use super::adam::AdamState;
use super::{NegativePool, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::EigenMode;
use crate::init::InitConfig;
use crate::layer::{ModelConfig, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RGFM";
pub const CHECKPOINT_VERSION: u32 = 1;

const HEADER_FIELDS: usize = 22;

/// Everything needed to embed new graphs or resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub init: InitConfig,
    pub train: TrainConfig,
    pub adam: AdamState,
    pub epochs_done: u64,
}

impl Checkpoint {
    pub fn model(&self) -> &ModelConfig {
        &self.params.config
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.params.config;
        let t = &self.train;
        let mut vals: Vec<f64> = vec![
            c.dim_h as f64,
            c.dim_s as f64,
            c.kappa_h,
            c.kappa_s,
            c.layers as f64,
            c.hidden as f64,
            self.init.k.unwrap_or(0) as f64,
            match self.init.eigen_mode {
                EigenMode::Largest => 0.0,
                EigenMode::Smallest => 1.0,
            },
            t.epochs as f64,
            t.batch_size as f64,
            t.learning_rate,
            t.dropout,
            (t.seed >> 32) as f64,
            (t.seed & 0xffff_ffff) as f64,
            t.samples_per_anchor as f64,
            t.tree_depth as f64,
            t.branch_cap as f64,
            t.temperature,
            match t.negative_pool {
                NegativePool::Batch => 0.0,
                NegativePool::Full => 1.0,
            },
            if t.freeze_samples { 1.0 } else { 0.0 },
            self.adam.step as f64,
            self.epochs_done as f64,
        ];
        debug_assert_eq!(vals.len(), HEADER_FIELDS);
        for t in self.params.tensors() {
            vals.extend_from_slice(t);
        }
        vals.extend_from_slice(&self.adam.m);
        vals.extend_from_slice(&self.adam.v);

        let mut out = Vec::with_capacity(8 + 8 * vals.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing RGFM magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let body = &bytes[8..];
        if !body.len().is_multiple_of(8) {
            return Err(bad("body is not a whole number of f64 values"));
        }
        let vals: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if vals.len() < HEADER_FIELDS {
            return Err(bad("truncated header"));
        }
        let count = |x: f64, what: &str| -> Result<usize> {
            if x >= 0.0 && x.fract() == 0.0 && x < 2f64.powi(53) {
                Ok(x as usize)
            } else {
                Err(Error::Checkpoint(format!("{what} is not a count: {x}")))
            }
        };
        let config = ModelConfig {
            dim_h: count(vals[0], "dim_h")?,
            dim_s: count(vals[1], "dim_s")?,
            kappa_h: vals[2],
            kappa_s: vals[3],
            layers: count(vals[4], "layers")?,
            hidden: count(vals[5], "hidden")?,
        };
        config
            .validate()
            .map_err(|e| Error::Checkpoint(format!("invalid model config: {e}")))?;
        let init = InitConfig {
            k: match count(vals[6], "k")? {
                0 => None,
                k => Some(k),
            },
            eigen_mode: if vals[7] == 0.0 {
                EigenMode::Largest
            } else {
                EigenMode::Smallest
            },
        };
        let seed = ((count(vals[12], "seed")? as u64) << 32) | count(vals[13], "seed")? as u64;
        let train = TrainConfig {
            epochs: count(vals[8], "epochs")?,
            batch_size: count(vals[9], "batch_size")?,
            learning_rate: vals[10],
            dropout: vals[11],
            seed,
            samples_per_anchor: count(vals[14], "samples_per_anchor")?,
            tree_depth: count(vals[15], "tree_depth")?,
            branch_cap: count(vals[16], "branch_cap")?,
            temperature: vals[17],
            negative_pool: if vals[18] == 0.0 {
                NegativePool::Batch
            } else {
                NegativePool::Full
            },
            freeze_samples: vals[19] != 0.0,
        };
        let step = count(vals[20], "step")? as u64;
        let epochs_done = count(vals[21], "epochs_done")? as u64;

        let mut params = ModelParams::zeros(config);
        let n = params.num_scalars();
        if vals.len() != HEADER_FIELDS + 3 * n {
            return Err(Error::Checkpoint(format!(
                "expected {} values for this model, found {}",
                HEADER_FIELDS + 3 * n,
                vals.len()
            )));
        }
        let mut off = HEADER_FIELDS;
        for t in params.tensors_mut() {
            t.copy_from_slice(&vals[off..off + t.len()]);
            off += t.len();
        }
        let adam = AdamState {
            lr: train.learning_rate,
            step,
            m: vals[off..off + n].to_vec(),
            v: vals[off + n..off + 2 * n].to_vec(),
        };
        Ok(Self {
            params,
            init,
            train,
            adam,
            epochs_done,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
