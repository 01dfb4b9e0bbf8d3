//! Binary checkpoint files.
//!
//! Layout, all integers little-endian: magic `TGMD`, format version `u32`,
//! metadata length `u64` and that many bytes of JSON, tensor count `u64`,
//! then per tensor: name length `u64`, UTF-8 name, dtype `u8` (0 = f32),
//! rank `u32`, `rank` dims as `u64`, and the raw f32 data.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::ScheduleKind;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parameters, TextVocab};
use crate::tensor::Tensor;
use crate::tokenizer::Vocabulary;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 4] = b"TGMD";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub vocab: Vec<String>,
    pub text_vocab: Vec<String>,
    pub schedule: ScheduleKind,
    pub step: usize,
    /// `one`, `two` or `joint`.
    pub phase: String,
    pub train: TrainConfig,
}

impl CheckpointMeta {
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_tokens(self.vocab.iter().map(String::as_str))
    }

    pub fn text_vocabulary(&self) -> Result<TextVocab> {
        TextVocab::from_words(self.text_vocab.clone())
    }
}

pub fn encode(meta: &CheckpointMeta, params: &Parameters<f32>) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(meta).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(json.len() + 4 * params.numel() + 64 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("implausible length {v}")))
    }
}

/// Parses a checkpoint. Tensor shapes are validated against `expected`
/// when given, otherwise against the stored model config.
pub fn decode(
    bytes: &[u8],
    expected: Option<&ModelConfig>,
) -> Result<(CheckpointMeta, Parameters<f32>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = r.len()?;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(n)?).map_err(|e| Error::Format(e.to_string()))?;
    let count = r.len()?;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.len()?;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|e| Error::Format(e.to_string()))?
            .to_string();
        let dtype = r.take(1)?[0];
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("tensor {name}: unknown dtype {dtype}")));
        }
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.len()?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= bytes.len())
            .ok_or_else(|| Error::Format(format!("tensor {name}: implausible shape {shape:?}")))?;
        let data = r
            .take(numel * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        named.push((name, Tensor::new(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let params = Parameters::from_named(expected.unwrap_or(&meta.model), named)?;
    Ok((meta, params))
}

pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, params: &Parameters<f32>) -> Result<()> {
    fs::write(path, encode(meta, params)?).map_err(|e| Error::file(path, e))
}

pub fn load_checkpoint(
    path: &Path,
    expected: Option<&ModelConfig>,
) -> Result<(CheckpointMeta, Parameters<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode(&bytes, expected)
}
