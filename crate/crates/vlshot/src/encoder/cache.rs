//! Persistent embedding cache.
//!
//! Encoding dominates the cost of a scoring run, and embeddings are pure
//! functions of (tower parameters, content). [`CachedBackend`] wraps any
//! backend and memoizes embeddings on disk, partitioned by the backend id
//! and its parameter fingerprint so a fine-tuned tower never reads a frozen
//! tower's entries. A warm cache serves bitwise-identical vectors without
//! touching the wrapped backend at all.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::data::ImageRef;
use crate::util::sha256_hex;
use crate::{Error, Result};

use super::{parameter_fingerprint, DualEncoderBackend, ParamInfo};

const MAGIC: &[u8; 8] = b"VLSHEMB1";

/// Replace anything outside [A-Za-z0-9._-] so backend ids like "ViT-B/16"
/// become safe directory names.
fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_embedding(path: &Path, tmp: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + values.len() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(tmp, &bytes).map_err(|e| Error::io(tmp, e))?;
    std::fs::rename(tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_embedding(path: &Path, expect_dim: usize) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Cache(format!(
            "{} is not an embedding cache entry",
            path.display()
        )));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if count != expect_dim || bytes.len() != 16 + count * 8 {
        return Err(Error::Cache(format!(
            "{}: expected {} values, file declares {} over {} bytes",
            path.display(),
            expect_dim,
            count,
            bytes.len()
        )));
    }
    Ok(bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub struct CachedBackend<B> {
    inner: B,
    dir: PathBuf,
    memory: Mutex<HashMap<String, Vec<f64>>>,
}

impl<B: DualEncoderBackend> CachedBackend<B> {
    /// Open (creating if needed) the cache directory for this backend under
    /// `cache_root`.
    pub fn new(inner: B, cache_root: &Path) -> Result<Self> {
        let fingerprint = parameter_fingerprint(&inner.parameters());
        let dir = cache_root.join(format!("{}-{}", sanitize(inner.id()), &fingerprint[..16]));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(CachedBackend {
            inner,
            dir,
            memory: Mutex::new(HashMap::new()),
        })
    }

    pub fn cache_dir(&self) -> &Path {
        &self.dir
    }

    fn lookup_or_encode(
        &self,
        key: String,
        encode: impl FnOnce() -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        if let Some(hit) = self.memory.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let path = self.dir.join(format!("{key}.emb"));
        if path.exists() {
            let values = read_embedding(&path, self.inner.embed_dim())?;
            self.memory
                .lock()
                .expect("cache lock")
                .insert(key, values.clone());
            return Ok(values);
        }
        let values = encode()?;
        let tmp = self.dir.join(format!(".{key}.tmp"));
        write_embedding(&path, &tmp, &values)?;
        self.memory.lock().expect("cache lock").insert(key, values.clone());
        Ok(values)
    }
}

impl<B: DualEncoderBackend> DualEncoderBackend for CachedBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn embed_dim(&self) -> usize {
        self.inner.embed_dim()
    }
    fn encode_image(&self, image: &ImageRef) -> Result<Vec<f64>> {
        let key = format!("i-{}", sha256_hex(&[image.as_str().as_bytes()]));
        self.lookup_or_encode(key, || self.inner.encode_image(image))
    }
    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        let key = format!("t-{}", sha256_hex(&[text.as_bytes()]));
        self.lookup_or_encode(key, || self.inner.encode_text(text))
    }
    fn parameters(&self) -> Vec<ParamInfo> {
        self.inner.parameters()
    }
}
