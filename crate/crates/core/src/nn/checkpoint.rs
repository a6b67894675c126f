//! Single-file checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "GCKPT001" | u64 header length | JSON header
//! repeated: u32 name length | name | u32 ndims | u64 dims... | f32 data...
//! ```
//!
//! Blobs are written in name order and the header carries no timestamps, so
//! identical models produce identical files.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde_json::Value;

use super::params::NamedTensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GCKPT001";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Value,
    pub tensors: BTreeMap<String, NamedTensor>,
}

impl Checkpoint {
    /// `kind` names the artifact (e.g. "generator", "detector").
    pub fn new(kind: &str, mut header: Value, tensors: BTreeMap<String, NamedTensor>) -> Self {
        if let Value::Object(map) = &mut header {
            map.insert("kind".into(), Value::from(kind));
            map.insert("format_version".into(), Value::from(FORMAT_VERSION));
            map.insert("toolkit_version".into(), Value::from(env!("CARGO_PKG_VERSION")));
        }
        Self { header, tensors }
    }

    pub fn kind(&self) -> Option<&str> {
        self.header.get("kind").and_then(Value::as_str)
    }

    pub fn expect_kind(&self, kind: &str, path: &Path) -> Result<()> {
        match self.kind() {
            Some(k) if k == kind => Ok(()),
            other => Err(Error::corrupt(
                path.display().to_string(),
                format!("expected a {kind} checkpoint, header says {other:?}"),
            )),
        }
    }

    /// Deserializes a header field.
    pub fn field<T: serde::de::DeserializeOwned>(&self, key: &str, path: &Path) -> Result<T> {
        let v = self.header.get(key).cloned().ok_or_else(|| {
            Error::corrupt(path.display().to_string(), format!("header lacks `{key}`"))
        })?;
        serde_json::from_value(v).map_err(|e| {
            Error::corrupt(path.display().to_string(), format!("header field `{key}`: {e}"))
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(header.len() + 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, source };
        if r.take(8)? != MAGIC {
            return Err(Error::corrupt(source, "not a checkpoint (bad magic bytes)"));
        }
        let header_len = r.u64()? as usize;
        let header: Value = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| Error::corrupt(source, format!("unreadable JSON header: {e}")))?;
        let mut tensors = BTreeMap::new();
        while r.pos < bytes.len() {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::corrupt(source, "tensor name is not UTF-8"))?
                .to_string();
            let ndims = r.u32()? as usize;
            if ndims > 8 {
                return Err(Error::corrupt(source, format!("tensor `{name}` claims {ndims} dims")));
            }
            let shape = (0..ndims).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::corrupt(source, format!("tensor `{name}` shape overflows")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::corrupt(source, "size overflow"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if tensors.insert(name.clone(), NamedTensor { shape, data }).is_some() {
                return Err(Error::corrupt(source, format!("tensor `{name}` appears twice")));
            }
        }
        Ok(Self { header, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::corrupt(
                self.source,
                format!("truncated at byte {} (wanted {n} more of {})", self.pos, self.bytes.len()),
            )
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
