//! Versioned weight files: magic, version, JSON header, then raw little-endian f32 values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rockflow_nn::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RFCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dims: [usize; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// `predictor` or `compression`.
    pub kind: String,
    pub spec: serde_json::Value,
    /// SHA-256 of the compact JSON of `spec`.
    pub spec_hash: String,
    pub training: serde_json::Value,
    /// Epoch whose weights were kept.
    pub epoch: usize,
    /// Seed of the training random stream.
    pub rng_seed: u64,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub store: ParamStore<f32>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn to_json<S: Serialize + ?Sized>(v: &S) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Json { context: "checkpoint metadata".into(), source: e })
}

/// Short content id of a set of weights.
pub fn weights_digest(store: &ParamStore<f32>) -> String {
    let mut h = Sha256::new();
    for (_, p) in store.iter() {
        h.update(p.name.as_bytes());
        for v in p.value().data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())[..16].to_string()
}

impl Checkpoint {
    pub fn new<S: Serialize, C: Serialize>(
        kind: &str,
        spec: &S,
        training: &C,
        epoch: usize,
        rng_seed: u64,
        store: ParamStore<f32>,
    ) -> Result<Self> {
        let spec = to_json(spec)?;
        let spec_hash = sha256_hex(spec.to_string().as_bytes());
        let tensors = store.iter().map(|(_, p)| TensorEntry { name: p.name.clone(), dims: p.value().dims() }).collect();
        Ok(Self {
            header: CheckpointHeader {
                kind: kind.into(),
                spec,
                spec_hash,
                training: to_json(training)?,
                epoch,
                rng_seed,
                tensors,
                extra: serde_json::Value::Null,
            },
            store,
        })
    }

    pub fn spec<S: for<'de> Deserialize<'de>>(&self) -> Result<S> {
        serde_json::from_value(self.header.spec.clone()).map_err(|e| Error::Json { context: "checkpoint spec".into(), source: e })
    }

    pub fn id(&self) -> String {
        weights_digest(&self.store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::Json { context: "checkpoint header".into(), source: e })?;
        let mut buf = Vec::with_capacity(12 + header.len() + 4 * self.store.scalar_count());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        for (_, p) in self.store.iter() {
            for v in p.value().data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Checkpoint { path: path.to_path_buf(), message };
        let mut buf = Vec::new();
        fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| Error::io(path, e))?;
        if buf.len() < 12 || &buf[..4] != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let hlen = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes")) as usize;
        let body = buf.get(12..12 + hlen).ok_or_else(|| bad("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
        if sha256_hex(header.spec.to_string().as_bytes()) != header.spec_hash {
            return Err(bad("spec hash mismatch".into()));
        }
        let mut offset = 12 + hlen;
        let mut store = ParamStore::new();
        for t in &header.tensors {
            let n: usize = t.dims.iter().product();
            let bytes = buf.get(offset..offset + 4 * n).ok_or_else(|| bad(format!("truncated data for `{}`", t.name)))?;
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            store.add(t.name.clone(), Tensor::from_vec(t.dims, data)?);
            offset += 4 * n;
        }
        if offset != buf.len() {
            return Err(bad(format!("{} trailing bytes", buf.len() - offset)));
        }
        Ok(Self { header, store })
    }

    /// Copy the weights into a freshly built model's store, matching by name and shape.
    pub fn restore_into(&self, store: &mut ParamStore<f32>) -> Result<()> {
        if store.len() != self.store.len() {
            return Err(Error::invalid(format!(
                "checkpoint holds {} tensors, model has {}",
                self.store.len(),
                store.len()
            )));
        }
        Ok(store.load_from(&self.store)?)
    }
}
