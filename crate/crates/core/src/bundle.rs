//! On-disk bundle: `manifest.json` (UTF-8) next to `arrays.bin`, a flat
//! file of little-endian IEEE-754 `f32` values. Arrays are stored row-major
//! and located by byte offsets recorded in the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ARRAYS_FILE: &str = "arrays.bin";

/// Location of one array inside `arrays.bin`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayRef {
    /// Byte offset from the start of `arrays.bin`.
    pub offset: u64,
    pub shape: Vec<usize>,
}

impl ArrayRef {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Default)]
pub struct BlobWriter {
    bytes: Vec<u8>,
}

impl BlobWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<I>(&mut self, shape: &[usize], values: I) -> ArrayRef
    where
        I: IntoIterator<Item = f32>,
    {
        let offset = self.bytes.len() as u64;
        let mut n = 0;
        for v in values {
            self.bytes.extend_from_slice(&v.to_le_bytes());
            n += 1;
        }
        debug_assert_eq!(n, shape.iter().product::<usize>());
        ArrayRef {
            offset,
            shape: shape.to_vec(),
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// Contents of `arrays.bin`.
#[derive(Debug, Clone)]
pub struct Blob {
    bytes: Vec<u8>,
    path: PathBuf,
}

impl Blob {
    pub fn read(&self, r: &ArrayRef) -> Result<Vec<f32>> {
        let start = r.offset as usize;
        let end = start + 4 * r.len();
        let slice = self.bytes.get(start..end).ok_or_else(|| {
            Error::Shape(format!(
                "{}: array at byte {start} with {} values runs past end of file ({} bytes)",
                self.path.display(),
                r.len(),
                self.bytes.len()
            ))
        })?;
        Ok(slice
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn write_bundle<M: Serialize>(dir: &Path, manifest: &M, blob: BlobWriter) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Manifest {
        path: mpath.clone(),
        source: e,
    })?;
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    let bpath = dir.join(ARRAYS_FILE);
    fs::write(&bpath, blob.into_bytes()).map_err(|e| Error::io(&bpath, e))
}

pub fn read_manifest<M: DeserializeOwned>(dir: &Path) -> Result<M> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: mpath,
        source: e,
    })
}

pub fn read_blob(dir: &Path) -> Result<Blob> {
    let path = dir.join(ARRAYS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Blob { bytes, path })
}

/// Rejects manifests whose `format` or `version` field does not match.
pub fn check_header(format: &str, version: u32, want_format: &str, want_version: u32) -> Result<()> {
    if format != want_format {
        return Err(Error::Config(format!(
            "bundle holds '{format}', expected '{want_format}'"
        )));
    }
    if version != want_version {
        return Err(Error::Version {
            found: version,
            expected: want_version,
        });
    }
    Ok(())
}
