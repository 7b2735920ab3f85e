//! Binary checkpoint format.
//!
//! ```text
//! "CEPN"              4 bytes magic
//! version             u32 LE (= 1)
//! config_len          u32 LE
//! config              config_len bytes, UTF-8 `key = value` lines
//! tensor_count        u32 LE
//! per tensor, in declaration order:
//!   rank              u32 LE
//!   dims              rank × u32 LE
//!   values            product(dims) × f64 LE
//! ```
//!
//! Tensors are every parameter plus the batch-norm running statistics, in the
//! order [`PrognosisNet::state_mut`] yields them.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::prognet::config::{ModelConfig, CONFIG_KEYS};
use crate::prognet::net::PrognosisNet;

pub const MAGIC: &[u8; 4] = b"CEPN";
pub const VERSION: u32 = 1;

pub fn to_bytes(net: &mut PrognosisNet) -> Vec<u8> {
    let config = net.config().to_kv().to_text();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    let tensors = net.state_mut();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &Path) -> Self {
        Self {
            bytes,
            pos: 0,
            path: path.to_path_buf(),
        }
    }

    pub(crate) fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::Corrupt {
            path: self.path.clone(),
            offset: self.pos as u64,
            reason: reason.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt(format!(
                "truncated while reading {what} (need {n} bytes, {} left)",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub(crate) fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = count
            .checked_mul(8)
            .ok_or_else(|| self.corrupt(format!("{what}: element count overflows")))?;
        let b = self.take(bytes, what)?;
        Ok(b
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let start = self.pos;
        let got = self.take(4, "magic")?;
        if got != magic {
            self.pos = start;
            return Err(self.corrupt(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_version(&mut self, version: u32) -> Result<()> {
        let start = self.pos;
        let got = self.u32("version")?;
        if got != version {
            self.pos = start;
            return Err(self.corrupt(format!("unsupported version {got}, expected {version}")));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.corrupt(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<PrognosisNet> {
    let mut r = Reader::new(bytes, path);
    r.expect_magic(MAGIC)?;
    r.expect_version(VERSION)?;
    let len = r.u32("config length")? as usize;
    let text = r.take(len, "config block")?;
    let text = std::str::from_utf8(text).map_err(|_| r.corrupt("config block is not UTF-8"))?;
    let kv = KeyValues::parse(text).map_err(|e| r.corrupt(format!("config block: {e}")))?;
    kv.reject_unknown(&CONFIG_KEYS)
        .map_err(|e| r.corrupt(format!("config block: {e}")))?;
    let config = ModelConfig::from_kv(&kv).map_err(|e| r.corrupt(format!("config block: {e}")))?;
    let mut net = PrognosisNet::new(config, 0)?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = net.state_mut();
    if count != tensors.len() {
        return Err(r.corrupt(format!(
            "checkpoint holds {count} tensors, configuration declares {}",
            tensors.len()
        )));
    }
    for (i, t) in tensors.iter_mut().enumerate() {
        let rank = r.u32("tensor rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("tensor dims")? as usize);
        }
        if dims != t.shape() {
            return Err(r.corrupt(format!(
                "tensor {i} has shape {dims:?}, expected {:?}",
                t.shape()
            )));
        }
        let values = r.f64s(t.len(), "tensor values")?;
        t.data_mut().copy_from_slice(&values);
    }
    r.finish()?;
    Ok(net)
}

pub fn save(net: &mut PrognosisNet, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(net))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<PrognosisNet> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes, path)
}
