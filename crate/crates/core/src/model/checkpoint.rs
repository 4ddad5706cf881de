//! Checkpoint archive: `SPKMCKPT`, a little-endian `u32` manifest length, the
//! JSON manifest, raw little-endian `f32` buffers in manifest order and a
//! trailing SHA-256 of everything before it.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::network::SpikMamba;
use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const CHECKPOINT_FORMAT: &str = "spikmamba-ckpt-1";
const MAGIC: &[u8; 8] = b"SPKMCKPT";
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub config: ModelConfig,
    pub dtype: DType,
    pub parameters: Vec<ParamEntry>,
}

/// A decoded archive.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: Vec<Tensor<f32>>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &SpikMamba<T>) -> Self {
        let (parameters, tensors) = model
            .params
            .iter()
            .map(|(_, p)| {
                let entry = ParamEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    trainable: p.trainable,
                };
                (entry, p.value.cast::<f32>())
            })
            .unzip();
        Self {
            manifest: Manifest {
                format: CHECKPOINT_FORMAT.to_string(),
                config: model.config().clone(),
                dtype: DType::F32,
                parameters,
            },
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let payload: usize = self.tensors.iter().map(|t| 4 * t.len()).sum();
        let mut out = Vec::with_capacity(MAGIC.len() + 4 + manifest.len() + payload + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        let len = u32::try_from(manifest.len()).map_err(|_| Error::Format("manifest too large".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = MAGIC.len() + 4;
        if bytes.len() < header + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("not a checkpoint archive".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Integrity("checkpoint checksum mismatch".into()));
        }
        let len = u32::from_le_bytes(body[MAGIC.len()..header].try_into().expect("4 bytes")) as usize;
        let manifest_bytes = body
            .get(header..header + len)
            .ok_or_else(|| Error::Format("truncated manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(manifest_bytes)?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!(
                "unsupported checkpoint format {:?}",
                manifest.format
            )));
        }
        if manifest.dtype != DType::F32 {
            return Err(Error::Format(format!("unsupported buffer dtype {:?}", manifest.dtype)));
        }
        let mut rest = &body[header + len..];
        let mut tensors = Vec::with_capacity(manifest.parameters.len());
        for p in &manifest.parameters {
            let n: usize = p.shape.iter().product();
            if rest.len() < 4 * n {
                return Err(Error::Format(format!("truncated buffer for {}", p.name)));
            }
            let (chunk, tail) = rest.split_at(4 * n);
            let data = chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(Tensor::new(&p.shape, data)?);
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after buffers", rest.len())));
        }
        Ok(Self { manifest, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::file(path, e))?)
    }

    /// Rebuilds the model described by the manifest.
    pub fn into_model<T: Scalar>(self) -> Result<SpikMamba<T>> {
        let mut model = SpikMamba::new(self.manifest.config.clone(), 0)?;
        model.load_state(&self)?;
        Ok(model)
    }
}

impl<T: Scalar> SpikMamba<T> {
    /// Copies every buffer from `ckpt`. Any difference in parameter names or
    /// shapes is reported as a line-per-entry diff.
    pub fn load_state(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let mut diff = String::new();
        let entries = &ckpt.manifest.parameters;
        for (_, p) in self.params.iter() {
            match entries.iter().find(|e| e.name == p.name) {
                None => writeln!(diff, "- {} {:?} missing from checkpoint", p.name, p.value.shape()),
                Some(e) if e.shape != p.value.shape() => {
                    writeln!(
                        diff,
                        "~ {}: model {:?}, checkpoint {:?}",
                        p.name,
                        p.value.shape(),
                        e.shape
                    )
                }
                _ => Ok(()),
            }
            .expect("write to string");
        }
        for e in entries {
            if self.params.id(&e.name).is_none() {
                writeln!(diff, "+ {} {:?} not in model", e.name, e.shape).expect("write to string");
            }
        }
        if !diff.is_empty() {
            return Err(Error::ManifestDiff(diff));
        }
        for (e, t) in entries.iter().zip(&ckpt.tensors) {
            let id = self.params.id(&e.name).expect("checked above");
            *self.params.value_mut(id) = t.cast();
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        Checkpoint::from_model(self).save(path)
    }
}
