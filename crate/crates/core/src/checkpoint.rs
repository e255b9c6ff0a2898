//! Single-file checkpoint container.
//!
//! Layout:
//!
//! ```text
//! b"AESFACKP" | u32 LE version | u64 LE manifest length | manifest JSON | payload
//! ```
//!
//! The manifest lists every tensor (name, shape, dtype, byte offset into the
//! payload, byte length); the payload is the tensors' raw little-endian
//! values, back to back in manifest order. Model parameters and optimizer
//! state live in separate manifest sections.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use aesfa_tensor::{Float, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AESFACKP";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

impl<T> NamedTensor<T> {
    pub fn new(name: impl Into<String>, tensor: Tensor<T>) -> Self {
        NamedTensor {
            name: name.into(),
            tensor,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: Vec<NamedTensor<T>>,
    pub optimizer: Vec<NamedTensor<T>>,
    /// Free-form JSON: configuration snapshots, iteration count, kind tags.
    pub metadata: serde_json::Value,
}

impl<T: Float> Checkpoint<T> {
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub parameters: Vec<ManifestEntry>,
    pub optimizer_state: Vec<ManifestEntry>,
    pub metadata: serde_json::Value,
}

fn err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Serialises `ckpt` to bytes.
pub fn encode<T: Float>(ckpt: &Checkpoint<T>) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut section = |items: &[NamedTensor<T>]| {
        items
            .iter()
            .map(|nt| {
                let offset = payload.len() as u64;
                for &v in nt.tensor.data() {
                    v.write_le(&mut payload);
                }
                ManifestEntry {
                    name: nt.name.clone(),
                    shape: nt.tensor.shape().to_vec(),
                    dtype: T::DTYPE.to_string(),
                    offset,
                    nbytes: payload.len() as u64 - offset,
                }
            })
            .collect::<Vec<_>>()
    };
    let parameters = section(&ckpt.params);
    let optimizer_state = section(&ckpt.optimizer);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        parameters,
        optimizer_state,
        metadata: ckpt.metadata.clone(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses and validates the header and manifest without touching the
/// payload.
pub fn read_manifest(bytes: &[u8], path: &Path) -> Result<(Manifest, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(err(
            path,
            format!("file is {} bytes, shorter than the header", bytes.len()),
        ));
    }
    if &bytes[..8] != MAGIC {
        return Err(err(path, "bad magic, not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(err(
            path,
            format!("format version {version} unsupported (expected {FORMAT_VERSION})"),
        ));
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let mend = usize::try_from(mlen)
        .ok()
        .and_then(|l| l.checked_add(HEADER_LEN))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| err(path, format!("manifest length {mlen} exceeds file size")))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[HEADER_LEN..mend]).map_err(|e| err(path, format!("manifest: {e}")))?;
    if manifest.format_version != version {
        return Err(err(
            path,
            format!(
                "manifest version {} disagrees with header version {version}",
                manifest.format_version
            ),
        ));
    }
    Ok((manifest, mend))
}

fn decode_section<T: Float>(
    entries: &[ManifestEntry],
    payload: &[u8],
    cursor: &mut u64,
    path: &Path,
) -> Result<Vec<NamedTensor<T>>> {
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let width = match e.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(err(path, format!("{}: unknown dtype {other:?}", e.name))),
        };
        let numel: usize = e.shape.iter().product();
        if e.nbytes != (numel * width) as u64 {
            return Err(err(
                path,
                format!("{}: {} bytes recorded for shape {:?}", e.name, e.nbytes, e.shape),
            ));
        }
        if e.offset != *cursor {
            return Err(err(
                path,
                format!(
                    "{}: offset {} overlaps or leaves a gap (expected {})",
                    e.name, e.offset, *cursor
                ),
            ));
        }
        let end = e.offset + e.nbytes;
        if end > payload.len() as u64 {
            return Err(err(
                path,
                format!(
                    "payload truncated: {} needs bytes {}..{} but payload has {}",
                    e.name,
                    e.offset,
                    end,
                    payload.len()
                ),
            ));
        }
        let raw = &payload[e.offset as usize..end as usize];
        let data: Vec<T> = match width {
            4 => raw
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f32::read_le(c) as f64))
                .collect(),
            _ => raw
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::read_le(c)))
                .collect(),
        };
        out.push(NamedTensor::new(e.name.clone(), Tensor::from_vec(&e.shape, data)?));
        *cursor = end;
    }
    Ok(out)
}

/// Parses a complete checkpoint. Nothing is returned unless every entry
/// validates.
pub fn decode<T: Float>(bytes: &[u8], path: &Path) -> Result<Checkpoint<T>> {
    let (manifest, start) = read_manifest(bytes, path)?;
    let payload = &bytes[start..];
    let mut cursor = 0u64;
    let params = decode_section(&manifest.parameters, payload, &mut cursor, path)?;
    let optimizer = decode_section(&manifest.optimizer_state, payload, &mut cursor, path)?;
    if cursor != payload.len() as u64 {
        return Err(err(
            path,
            format!("payload has {} trailing bytes", payload.len() as u64 - cursor),
        ));
    }
    Ok(Checkpoint {
        params,
        optimizer,
        metadata: manifest.metadata,
    })
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn save_checkpoint<T: Float>(ckpt: &Checkpoint<T>, path: &Path) -> Result<()> {
    let bytes = encode(ckpt)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = PathBuf::from(path);
    tmp.as_mut_os_string().push(".tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Float>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
