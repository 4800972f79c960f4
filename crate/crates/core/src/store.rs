//! Versioned binary container for caches and model files.
//!
//! Layout: magic `STNET\0`, format version (u32 LE), header length (u64 LE),
//! JSON header, array payload of little-endian f64, and a trailing SHA-256
//! over everything before it. The header names the record kind, free-form
//! metadata, and the name and shape of each array in payload order.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"STNET\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArraySpec {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: Value,
    arrays: Vec<ArraySpec>,
}

/// A named f64 array with its shape (row-major for matrices).
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Decoded container contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub kind: String,
    pub meta: Value,
    pub arrays: BTreeMap<String, Array>,
}

impl Record {
    pub fn new(kind: &str, meta: Value) -> Self {
        Self { kind: kind.to_string(), meta, arrays: BTreeMap::new() }
    }

    pub fn with(mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Self {
        self.arrays.insert(name.to_string(), Array { shape: shape.to_vec(), data });
        self
    }

    pub fn array(&self, name: &str) -> Result<&Array> {
        self.arrays.get(name).ok_or_else(|| Error::invalid(format!("record `{}` lacks array `{name}`", self.kind)))
    }

    pub fn meta_str(&self, key: &str) -> Option<&str> {
        self.meta.get(key).and_then(Value::as_str)
    }

    pub fn meta_u64(&self, key: &str) -> Option<u64> {
        self.meta.get(key).and_then(Value::as_u64)
    }
}

/// Serializes a record.
pub fn encode(record: &Record) -> Result<Vec<u8>> {
    let mut arrays = Vec::with_capacity(record.arrays.len());
    for (name, a) in &record.arrays {
        if a.shape.iter().product::<usize>() != a.data.len() {
            return Err(Error::invalid(format!("array `{name}` has {} values for shape {:?}", a.data.len(), a.shape)));
        }
        arrays.push(ArraySpec { name: name.clone(), shape: a.shape.clone() });
    }
    let header = serde_json::to_vec(&Header { kind: record.kind.clone(), meta: record.meta.clone(), arrays })
        .map_err(|e| Error::invalid(format!("header serialization: {e}")))?;
    let payload: usize = record.arrays.values().map(|a| a.data.len()).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + 12 + header.len() + 8 * payload + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for a in record.arrays.values() {
        for v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Parses and verifies a record; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Record> {
    let corrupt = |msg: &str| Error::Corrupt { path: path.to_path_buf(), msg: msg.to_string() };
    let fixed = MAGIC.len() + 12;
    if bytes.len() < fixed + 32 {
        return Err(corrupt("file too short"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    if &body[..MAGIC.len()] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(body[6..10].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(body[10..18].try_into().expect("8 bytes")) as usize;
    let header_end = fixed.checked_add(header_len).filter(|&e| e <= body.len()).ok_or_else(|| corrupt("header overruns file"))?;
    let header: Header = serde_json::from_slice(&body[fixed..header_end]).map_err(|e| corrupt(&format!("header: {e}")))?;
    let mut offset = header_end;
    let mut arrays = BTreeMap::new();
    for spec in header.arrays {
        let n: usize = spec.shape.iter().product();
        let end = offset.checked_add(8 * n).filter(|&e| e <= body.len()).ok_or_else(|| corrupt("payload overruns file"))?;
        let data = body[offset..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        offset = end;
        arrays.insert(spec.name, Array { shape: spec.shape, data });
    }
    if offset != body.len() {
        return Err(corrupt("trailing bytes after payload"));
    }
    Ok(Record { kind: header.kind, meta: header.meta, arrays })
}

/// Writes atomically through a temporary sibling file.
pub fn save(record: &Record, path: &Path) -> Result<()> {
    let bytes = encode(record)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads a record and checks its kind.
pub fn load(path: &Path, kind: &str) -> Result<Record> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let record = decode(&bytes, path)?;
    if record.kind != kind {
        return Err(Error::Corrupt { path: path.to_path_buf(), msg: format!("expected a `{kind}` record, found `{}`", record.kind) });
    }
    Ok(record)
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
