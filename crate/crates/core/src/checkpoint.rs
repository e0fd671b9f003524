//! The "DDPM" parameter container shared by the denoiser and classifier.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "DDPM"  u16 version
//! u32 config_len   config_len bytes of UTF-8 `key=value` lines (sorted by key)
//! u32 n_entries    per entry: u16 name_len, name, u8 ndim, ndim × u32 dims, u64 offset
//! u64 n_values     n_values × f64
//! ```
//!
//! Offsets count values, not bytes, from the start of the value block.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::codec::Cursor;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DDPM";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Entry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    config: BTreeMap<String, String>,
    entries: Vec<Entry>,
    values: Vec<f64>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Snapshot of every parameter in store order.
    pub fn from_params(params: &ParamStore) -> Self {
        let mut ck = Self::new();
        for (name, t) in params.iter() {
            ck.entries.push(Entry { name: name.to_string(), shape: t.shape().to_vec(), offset: ck.values.len() });
            ck.values.extend_from_slice(t.data());
        }
        ck
    }

    /// Appends a tensor that is not part of a parameter store.
    pub fn push_tensor(&mut self, name: &str, t: &Tensor) {
        self.entries.push(Entry { name: name.to_string(), shape: t.shape().to_vec(), offset: self.values.len() });
        self.values.extend_from_slice(t.data());
    }

    /// Removes a named entry from the manifest and returns its values.
    pub fn take_tensor(&mut self, name: &str) -> Option<Tensor> {
        let t = self.tensor(name)?;
        self.entries.retain(|e| e.name != name);
        Some(t)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        let value = value.to_string();
        if key.is_empty() || key.contains(['=', '\n']) || value.contains('\n') {
            return Err(Error::Validation(format!("config entry '{key}' is not a single key=value line")));
        }
        self.config.insert(key.to_string(), value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.config.get(key).map(String::as_str)
    }

    pub fn config(&self) -> &BTreeMap<String, String> {
        &self.config
    }

    /// Parses a required config value.
    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key).ok_or_else(|| Error::Validation(format!("checkpoint config lacks '{key}'")))?;
        raw.parse().map_err(|_| Error::Validation(format!("checkpoint config '{key}={raw}' is malformed")))
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        let e = self.entries.iter().find(|e| e.name == name)?;
        Tensor::new(e.shape.clone(), self.values[e.offset..e.offset + e.numel()].to_vec()).ok()
    }

    /// Copies values into an existing store, matching by name and shape.
    pub fn load_into(&self, params: &mut ParamStore) -> Result<()> {
        if self.entries.len() != params.len() {
            return Err(Error::State(format!(
                "checkpoint has {} tensors, model has {}",
                self.entries.len(),
                params.len()
            )));
        }
        for e in &self.entries {
            let id = params
                .find(&e.name)
                .ok_or_else(|| Error::State(format!("model has no parameter '{}'", e.name)))?;
            let t = params.get_mut(id);
            if t.shape() != e.shape.as_slice() {
                return Err(Error::State(format!(
                    "parameter '{}' has shape {:?} in the model, {:?} in the checkpoint",
                    e.name,
                    t.shape(),
                    e.shape
                )));
            }
            t.data_mut().copy_from_slice(&self.values[e.offset..e.offset + e.numel()]);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.values.len() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let config: String = self.config.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&(e.offset as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |why: &str| Error::format(path, why.to_string());
        let short = || bad("truncated checkpoint");
        let mut cur = Cursor::new(bytes);
        if cur.take(4).ok_or_else(short)? != CHECKPOINT_MAGIC {
            return Err(bad("missing DDPM magic"));
        }
        let version = cur.u16().ok_or_else(short)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let len = cur.u32().ok_or_else(short)? as usize;
        let text = std::str::from_utf8(cur.take(len).ok_or_else(short)?).map_err(|_| bad("config is not UTF-8"))?;
        let mut ck = Self::new();
        for line in text.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(&format!("config line '{line}' lacks '='")))?;
            ck.config.insert(k.to_string(), v.to_string());
        }
        let n = cur.u32().ok_or_else(short)? as usize;
        for _ in 0..n {
            let name_len = cur.u16().ok_or_else(short)? as usize;
            let name = String::from_utf8(cur.take(name_len).ok_or_else(short)?.to_vec())
                .map_err(|_| bad("tensor name is not UTF-8"))?;
            let ndim = cur.u8().ok_or_else(short)? as usize;
            let shape = (0..ndim).map(|_| cur.u32().map(|d| d as usize)).collect::<Option<Vec<_>>>().ok_or_else(short)?;
            let offset = cur.u64().ok_or_else(short)? as usize;
            ck.entries.push(Entry { name, shape, offset });
        }
        let total = cur.u64().ok_or_else(short)? as usize;
        if total.checked_mul(8).is_none_or(|b| b > bytes.len()) {
            return Err(short());
        }
        ck.values = (0..total).map(|_| cur.f64()).collect::<Option<Vec<_>>>().ok_or_else(short)?;
        if !cur.at_end() {
            return Err(bad("trailing bytes after values"));
        }
        for e in &ck.entries {
            if e.shape.is_empty() || e.shape.contains(&0) || e.offset + e.numel() > total {
                return Err(bad(&format!("tensor '{}' lies outside the value block", e.name)));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
