//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "LGNETCKP"
//! version  u32      FORMAT_VERSION
//! meta     u32 byte length, then UTF-8 `key=value` lines
//! count    u32 number of tensors
//! table    per tensor: u32 name length, name bytes, u32 rank, rank × u64 dims
//! payload  every tensor's f64 values in table order, row-major
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a save/load round trip is exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use lgnet_core::critic::{CriticConfig, CriticParams};
use lgnet_core::data::NormStats;
use lgnet_core::forecaster::{ModelConfig, ModelParams};
use lgnet_core::params::Parameters;
use lgnet_core::Tensor;

use crate::error::AppError;

pub const MAGIC: &[u8; 8] = b"LGNETCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let mut meta = String::new();
        for (k, v) in &self.metadata {
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        put_u32(&mut out, meta.len());
        out.extend_from_slice(meta.as_bytes());
        put_u32(&mut out, self.tensors.len());
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape().len());
            for &dim in t.shape() {
                out.extend_from_slice(&(dim as u64).to_le_bytes());
            }
        }
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AppError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(AppError::input("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(AppError::input(format!(
                "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let meta_len = r.u32()? as usize;
        let meta = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| AppError::input("checkpoint metadata is not UTF-8"))?;
        let mut metadata = BTreeMap::new();
        for line in meta.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| AppError::input(format!("bad checkpoint metadata line {line:?}")))?;
            metadata.insert(k.to_owned(), v.to_owned());
        }
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| AppError::input("tensor name is not UTF-8"))?
                .to_owned();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| AppError::input("tensor dimension overflows"))?);
            }
            table.push((name, shape));
        }
        let mut tensors = Vec::with_capacity(table.len());
        for (name, shape) in table {
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| AppError::input(format!("tensor {name} is too large")))?;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| AppError::input("tensor too large"))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(&shape, data).map_err(|e| AppError::input(format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(AppError::input("trailing bytes after checkpoint payload"));
        }
        Ok(Checkpoint { metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), AppError> {
        fs::write(path, self.to_bytes()).map_err(|e| AppError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let bytes = fs::read(path).map_err(|e| AppError::input(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| AppError::input(format!("{}: {e}", path.display())))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("section fits in u32").to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AppError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| AppError::input("checkpoint is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, AppError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, AppError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// A trained model with everything needed to evaluate it.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedModel {
    pub model: ModelParams,
    pub critic: Option<CriticParams>,
    pub norm: NormStats,
    /// Free-form extras, e.g. the resolved run configuration.
    pub extra: BTreeMap<String, String>,
}

impl SavedModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut metadata = self.extra.clone();
        let c = &self.model.config;
        for (k, v) in [
            ("model.vars", c.vars.to_string()),
            ("model.hidden", c.hidden.to_string()),
            ("model.memory_slots", c.memory_slots.to_string()),
            ("model.slot_dim", c.slot_dim.to_string()),
            ("model.use_memory", c.use_memory.to_string()),
        ] {
            metadata.insert(k.into(), v);
        }
        let mut tensors: Vec<(String, Tensor)> =
            self.model.named().into_iter().map(|(n, t)| (n.to_owned(), t.clone())).collect();
        if let Some(cr) = &self.critic {
            let cc = &cr.config;
            for (k, v) in [
                ("critic.rows", cr.rows.to_string()),
                ("critic.cols", cr.cols.to_string()),
                ("critic.conv1_channels", cc.conv1_channels.to_string()),
                ("critic.conv2_channels", cc.conv2_channels.to_string()),
                ("critic.hidden", cc.hidden.to_string()),
                // Exact bits of the leak slope.
                ("critic.leak_bits", format!("{:016x}", cc.leak.to_bits())),
            ] {
                metadata.insert(k.into(), v);
            }
            tensors.extend(cr.named().into_iter().map(|(n, t)| (n.to_owned(), t.clone())));
        }
        tensors.push(("norm.mean".into(), Tensor::row_vector(&self.norm.mean)));
        tensors.push(("norm.std".into(), Tensor::row_vector(&self.norm.std)));
        Checkpoint { metadata, tensors }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, AppError> {
        let mut extra = ck.metadata.clone();
        let mut take = |key: &str| {
            extra.remove(key).ok_or_else(|| AppError::input(format!("checkpoint metadata lacks {key}")))
        };
        let num = |s: String, key: &str| {
            s.parse::<usize>().map_err(|_| AppError::input(format!("checkpoint {key} is not an integer")))
        };
        let config = ModelConfig {
            vars: num(take("model.vars")?, "model.vars")?,
            hidden: num(take("model.hidden")?, "model.hidden")?,
            memory_slots: num(take("model.memory_slots")?, "model.memory_slots")?,
            slot_dim: num(take("model.slot_dim")?, "model.slot_dim")?,
            use_memory: take("model.use_memory")?
                .parse()
                .map_err(|_| AppError::input("checkpoint model.use_memory is not a bool"))?,
        };
        let mut model = ModelParams::zeros(config);
        fill(&mut model, ck)?;
        let critic = if ck.metadata.contains_key("critic.rows") {
            let leak = u64::from_str_radix(&take("critic.leak_bits")?, 16)
                .map(f64::from_bits)
                .map_err(|_| AppError::input("bad critic.leak_bits"))?;
            let cc = CriticConfig {
                conv1_channels: num(take("critic.conv1_channels")?, "critic.conv1_channels")?,
                conv2_channels: num(take("critic.conv2_channels")?, "critic.conv2_channels")?,
                hidden: num(take("critic.hidden")?, "critic.hidden")?,
                leak,
            };
            let rows = num(take("critic.rows")?, "critic.rows")?;
            let cols = num(take("critic.cols")?, "critic.cols")?;
            let mut c = CriticParams::zeros(rows, cols, cc);
            fill(&mut c, ck)?;
            Some(c)
        } else {
            None
        };
        let row = |name: &str| {
            ck.tensor(name)
                .filter(|t| t.len() == config.vars)
                .map(|t| t.data().to_vec())
                .ok_or_else(|| AppError::input(format!("checkpoint lacks a {}-wide {name}", config.vars)))
        };
        let norm = NormStats { mean: row("norm.mean")?, std: row("norm.std")? };
        Ok(SavedModel { model, critic, norm, extra })
    }
}

fn fill<P: Parameters>(params: &mut P, ck: &Checkpoint) -> Result<(), AppError> {
    for (name, slot) in params.named_mut() {
        let t = ck.tensor(name).ok_or_else(|| AppError::input(format!("checkpoint lacks tensor {name}")))?;
        if t.shape() != slot.shape() {
            return Err(AppError::input(format!(
                "tensor {name} has shape {:?}, configuration expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t.clone();
    }
    Ok(())
}
