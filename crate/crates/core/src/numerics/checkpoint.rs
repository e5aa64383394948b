use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::real::Real;
use super::store::{ParamId, ParamStore};
use super::tensor::Tensor;

pub const CKPT_FORMAT: &str = "eru-ckpt-v1";

/// One tensor record in the manifest. `offset`/`byte_len` address the raw
/// payload region that follows the manifest JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub byte_len: u64,
}

/// Leading JSON manifest of an `eru-ckpt-v1` file. The payload of raw
/// little-endian f32 buffers starts immediately after the JSON value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    /// Snapshot of the run configuration that produced the parameters.
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_schema: Option<serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

/// A loaded checkpoint: manifest plus named f32 tensors in file order.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    /// Restores parameter values into a store whose registered names and
    /// shapes must match the checkpoint exactly.
    pub fn restore_into<F: Real>(&self, store: &mut ParamStore<F>) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for (name, tensor) in &self.tensors {
            let id = store.id_of(name).ok_or_else(|| {
                Error::Checkpoint(format!("checkpoint tensor `{name}` unknown to the model"))
            })?;
            if store.value(id).shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for `{name}`: checkpoint {:?}, model {:?}",
                    tensor.shape(),
                    store.value(id).shape()
                )));
            }
            *store.value_mut(id) = tensor.cast();
        }
        Ok(())
    }
}

/// Writes `store` as an `eru-ckpt-v1` file: compact manifest JSON followed
/// by the raw f32 buffers in registration order.
pub fn save_checkpoint<F: Real>(
    path: &Path,
    store: &ParamStore<F>,
    config: serde_json::Value,
    vocab_sha256: Option<String>,
    label_schema: Option<serde_json::Value>,
) -> Result<()> {
    let mut tensors = Vec::with_capacity(store.len());
    let mut offset = 0u64;
    for i in 0..store.len() {
        let id = ParamId(i);
        let value = store.value(id);
        let byte_len = (value.numel() * 4) as u64;
        tensors.push(TensorEntry {
            name: store.name(id).to_string(),
            shape: value.shape().to_vec(),
            dtype: "f32".to_string(),
            offset,
            byte_len,
        });
        offset += byte_len;
    }
    let manifest = CheckpointManifest {
        format: CKPT_FORMAT.to_string(),
        version: 1,
        config,
        vocab_sha256,
        label_schema,
        tensors,
    };

    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    w.write_all(&manifest_bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    for i in 0..store.len() {
        let value = store.value(ParamId(i));
        let mut buf = Vec::with_capacity(value.numel() * 4);
        for v in value.data() {
            buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;

    // The manifest is a single self-delimiting JSON value at the head of
    // the file; the payload begins at the byte after it.
    let mut de = serde_json::Deserializer::from_slice(&bytes).into_iter::<CheckpointManifest>();
    let manifest = match de.next() {
        Some(Ok(m)) => m,
        Some(Err(e)) => return Err(Error::Checkpoint(format!("bad manifest: {e}"))),
        None => return Err(Error::Checkpoint("empty checkpoint file".into())),
    };
    let payload_start = de.byte_offset();

    if manifest.format != CKPT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "unsupported format `{}` (expected `{CKPT_FORMAT}`)",
            manifest.format
        )));
    }
    let payload = &bytes[payload_start..];
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        if entry.dtype != "f32" {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` has unsupported dtype `{}`",
                entry.name, entry.dtype
            )));
        }
        let start = entry.offset as usize;
        let end = start + entry.byte_len as usize;
        if end > payload.len() || entry.byte_len % 4 != 0 {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` payload range {start}..{end} out of bounds ({} bytes)",
                entry.name,
                payload.len()
            )));
        }
        let expected: usize = entry.shape.iter().product();
        if expected * 4 != entry.byte_len as usize {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` shape {:?} disagrees with byte length {}",
                entry.name, entry.shape, entry.byte_len
            )));
        }
        let mut data = Vec::with_capacity(expected);
        for chunk in payload[start..end].chunks_exact(4) {
            data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        tensors.push((entry.name.clone(), Tensor::new(entry.shape.clone(), data)));
    }
    Ok(Checkpoint { manifest, tensors })
}
