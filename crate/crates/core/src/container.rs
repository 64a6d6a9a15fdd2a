//! Binary containers for feature matrices (`RSFT`) and trained models (`RSMD`).
//!
//! `RSFT` layout, all integers little-endian:
//!
//! ```text
//! "RSFT" | version: u8 | F: u32 | T: u32 | F*T x f32, row-major
//!        | [optional] meta_len: u32 | meta_len bytes of UTF-8 "key=value\n" lines
//! ```
//!
//! `RSMD` layout:
//!
//! ```text
//! "RSMD" | version: u8 | kind: u8 | n_dims: u32 | n_dims x u32 | payload f64, row-major
//! ```
//!
//! The payload length of an `RSMD` blob is implied by its kind and dims.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

pub const FEATURE_MAGIC: &[u8; 4] = b"RSFT";
pub const MODEL_MAGIC: &[u8; 4] = b"RSMD";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported container version {0}")]
    Version(u8),
    #[error("container truncated: {0}")]
    Truncated(&'static str),
    #[error("unknown model kind tag {0}")]
    UnknownKind(u8),
    #[error("model kind mismatch: expected {expected:?}, found {found:?}")]
    KindMismatch { expected: ModelKind, found: ModelKind },
    #[error("malformed container: {0}")]
    Malformed(String),
}

/// A row-major real matrix plus free-form metadata, as stored in `RSFT`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    /// F x T values.
    pub values: Array2<f64>,
    pub meta: BTreeMap<String, String>,
}

pub fn encode_features(file: &FeatureFile) -> Vec<u8> {
    let (f, t) = file.values.dim();
    let mut out = Vec::with_capacity(13 + 4 * f * t);
    out.extend_from_slice(FEATURE_MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(f as u32).to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    for v in file.values.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    if !file.meta.is_empty() {
        let text: String = file
            .meta
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureFile, ContainerError> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != FEATURE_MAGIC {
        return Err(ContainerError::BadMagic { expected: "RSFT" });
    }
    let version = r.u8("version")?;
    if version != FORMAT_VERSION {
        return Err(ContainerError::Version(version));
    }
    let f = r.u32("F")? as usize;
    let t = r.u32("T")? as usize;
    let n = f
        .checked_mul(t)
        .ok_or_else(|| ContainerError::Malformed("F*T overflows".into()))?;
    let raw = r.take(4 * n, "values")?;
    let data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let values = Array2::from_shape_vec((f, t), data)
        .map_err(|e| ContainerError::Malformed(e.to_string()))?;
    let mut meta = BTreeMap::new();
    if !r.is_empty() {
        let len = r.u32("metadata length")? as usize;
        let text = std::str::from_utf8(r.take(len, "metadata")?)
            .map_err(|e| ContainerError::Malformed(format!("metadata not UTF-8: {e}")))?;
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ContainerError::Malformed(format!("metadata line {line:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        if !r.is_empty() {
            return Err(ContainerError::Malformed("trailing bytes".into()));
        }
    }
    Ok(FeatureFile { values, meta })
}

pub fn write_features(path: impl AsRef<Path>, file: &FeatureFile) -> Result<(), ContainerError> {
    write_bytes(path.as_ref(), &encode_features(file))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureFile, ContainerError> {
    decode_features(&read_bytes(path.as_ref())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gmm,
    TotalVariability,
    Svm,
    Fusion,
    Vector,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Gmm => 1,
            ModelKind::TotalVariability => 2,
            ModelKind::Svm => 3,
            ModelKind::Fusion => 4,
            ModelKind::Vector => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, ContainerError> {
        Ok(match tag {
            1 => ModelKind::Gmm,
            2 => ModelKind::TotalVariability,
            3 => ModelKind::Svm,
            4 => ModelKind::Fusion,
            5 => ModelKind::Vector,
            other => return Err(ContainerError::UnknownKind(other)),
        })
    }
}

/// Untyped `RSMD` content. Model types convert to and from this.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBlob {
    pub kind: ModelKind,
    pub dims: Vec<u32>,
    pub payload: Vec<f64>,
}

impl ModelBlob {
    pub fn expect_kind(&self, kind: ModelKind) -> Result<(), ContainerError> {
        if self.kind != kind {
            return Err(ContainerError::KindMismatch {
                expected: kind,
                found: self.kind,
            });
        }
        Ok(())
    }

    pub fn expect_payload(&self, len: usize) -> Result<(), ContainerError> {
        if self.payload.len() != len {
            return Err(ContainerError::Malformed(format!(
                "{:?} payload has {} values, dims imply {len}",
                self.kind,
                self.payload.len()
            )));
        }
        Ok(())
    }
}

pub fn encode_model(blob: &ModelBlob) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 4 * blob.dims.len() + 8 * blob.payload.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.push(FORMAT_VERSION);
    out.push(blob.kind.tag());
    out.extend_from_slice(&(blob.dims.len() as u32).to_le_bytes());
    for d in &blob.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &blob.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelBlob, ContainerError> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(ContainerError::BadMagic { expected: "RSMD" });
    }
    let version = r.u8("version")?;
    if version != FORMAT_VERSION {
        return Err(ContainerError::Version(version));
    }
    let kind = ModelKind::from_tag(r.u8("kind")?)?;
    let n_dims = r.u32("dim count")? as usize;
    let dims = (0..n_dims)
        .map(|_| r.u32("dims"))
        .collect::<Result<Vec<_>, _>>()?;
    let rest = r.rest();
    if rest.len() % 8 != 0 {
        return Err(ContainerError::Truncated("payload"));
    }
    let payload = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ModelBlob {
        kind,
        dims,
        payload,
    })
}

pub fn write_model(path: impl AsRef<Path>, blob: &ModelBlob) -> Result<(), ContainerError> {
    write_bytes(path.as_ref(), &encode_model(blob))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelBlob, ContainerError> {
    decode_model(&read_bytes(path.as_ref())?)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, ContainerError> {
    std::fs::read(path).map_err(|source| ContainerError::Io {
        path: path.into(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), ContainerError> {
    std::fs::write(path, bytes).map_err(|source| ContainerError::Io {
        path: path.into(),
        source,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ContainerError> {
        if self.buf.len() < n {
            return Err(ContainerError::Truncated(what));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, ContainerError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.buf)
    }

    fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}
