//! Binary checkpoints: an 8-byte magic, a little-endian `u64` header length,
//! a JSON header, then every tensor as raw little-endian `f64` in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SDCKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BlobHeader {
    name: String,
    len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: String,
    config: ModelConfig,
    /// Parameters, then running means and variances, then auxiliary blobs.
    blobs: Vec<BlobHeader>,
    aux_names: Vec<String>,
    meta: serde_json::Value,
}

/// A model snapshot plus optional auxiliary arrays (e.g. optimizer moments)
/// and free-form JSON metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    named: Vec<(String, Vec<f64>)>,
    pub aux: Vec<(String, Vec<f64>)>,
    pub meta: serde_json::Value,
}

fn model_blobs(model: &Model) -> Vec<(String, Vec<f64>)> {
    let p = model.params();
    let mut out: Vec<(String, Vec<f64>)> =
        p.entries().iter().map(|e| (e.name.clone(), e.tensor.data().to_vec())).collect();
    for n in p.norms() {
        out.push((format!("{}.running_mean", n.name), n.mean.clone()));
        out.push((format!("{}.running_var", n.name), n.var.clone()));
    }
    out
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Self {
            config: model.config().clone(),
            named: model_blobs(model),
            aux: Vec::new(),
            meta: serde_json::Value::Null,
        }
    }

    /// Builds a fresh model from the stored configuration and loads all state.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.clone())?;
        self.load_into(&mut model)?;
        Ok(model)
    }

    /// Overwrites the model's parameters and running statistics. The model's
    /// configuration must equal the stored one.
    pub fn load_into(&self, model: &mut Model) -> Result<()> {
        if *model.config() != self.config {
            return Err(Error::Checkpoint("model configuration differs from checkpoint".into()));
        }
        let expected = model_blobs(model);
        if expected.len() != self.named.len() {
            return Err(Error::Checkpoint("tensor count mismatch".into()));
        }
        for ((en, ev), (n, v)) in expected.iter().zip(&self.named) {
            if en != n || ev.len() != v.len() {
                return Err(Error::Checkpoint(format!("tensor {n} does not match {en}")));
            }
        }
        let store = model.params_mut();
        let mut it = self.named.iter();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let (_, v) = it.next().expect("length checked");
            store.tensor_mut(id).data_mut().copy_from_slice(v);
        }
        for n in store.norms_mut() {
            n.mean.clone_from(&it.next().expect("length checked").1);
            n.var.clone_from(&it.next().expect("length checked").1);
        }
        Ok(())
    }

    pub fn aux(&self, name: &str) -> Option<&[f64]> {
        self.aux.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let all = self.named.iter().chain(&self.aux);
        let header = Header {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config.clone(),
            blobs: all
                .clone()
                .map(|(n, v)| BlobHeader {
                    name: n.clone(),
                    len: v.len(),
                })
                .collect(),
            aux_names: self.aux.iter().map(|(n, _)| n.clone()).collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(16 + json.len() + 8 * header.blobs.iter().map(|b| b.len).sum::<usize>());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for (_, v) in all {
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        // Write to a sibling file first so an interrupted save never leaves a
        // truncated checkpoint behind.
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::File::create(&tmp)?.write_all(&buf)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut off = 16 + hlen;
        let mut blobs = Vec::with_capacity(header.blobs.len());
        for b in &header.blobs {
            let raw = bytes.get(off..off + 8 * b.len).ok_or_else(|| bad("truncated data"))?;
            let v = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            blobs.push((b.name.clone(), v));
            off += 8 * b.len;
        }
        if off != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let split = blobs.len() - header.aux_names.len();
        let aux = blobs.split_off(split);
        Ok(Self {
            config: header.config,
            named: blobs,
            aux,
            meta: header.meta,
        })
    }
}
