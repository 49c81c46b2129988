//! Versioned binary checkpoints with bit-exact round-tripping.
//!
//! Layout: magic, little-endian u32 header length, JSON header (config,
//! modality, tasks, vocabulary, parameter names/shapes), raw little-endian
//! f64 parameter payload in declaration order, and a trailing SHA-256 over
//! everything before it. A digest mismatch is refused as corruption.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::model::config::{Modality, ModelConfig};
use crate::model::muser::MuserModel;
use crate::model::tokenizer::Tokenizer;
use crate::task::TaskSpec;

const MAGIC: &[u8; 8] = b"MUSERCK1";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    modality: Modality,
    tasks: Vec<TaskSpec>,
    vocab: Vec<(String, u32)>,
    params: Vec<(String, Vec<usize>)>,
}

pub fn save(model: &MuserModel, path: &Path) -> Result<()> {
    let store = model.store();
    let header = Header {
        version: VERSION,
        config: model.config,
        modality: model.modality,
        tasks: model.tasks.clone(),
        vocab: model.tokenizer.entries(),
        params: store
            .ids()
            .iter()
            .map(|id| {
                let node = store.node(*id);
                (node.name.clone(), node.value.shape().to_vec())
            })
            .collect(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| CoreError::Checkpoint(e.to_string()))?;

    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for id in store.ids() {
        for v in store.node(id).value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<MuserModel> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(CoreError::Checkpoint("file too short".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(CoreError::Checkpoint("bad magic; not a model checkpoint".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let expected = Sha256::digest(body);
    if digest != expected.as_slice() {
        return Err(CoreError::Checkpoint(
            "digest mismatch; checkpoint is corrupt or was edited".into(),
        ));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12 + header_len;
    if body.len() < header_end {
        return Err(CoreError::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[12..header_end])
        .map_err(|e| CoreError::Checkpoint(format!("bad header: {e}")))?;
    if header.version != VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }

    let tokenizer = Tokenizer::from_entries(header.vocab)?;
    let mut model = MuserModel::new(
        header.config,
        header.modality,
        header.tasks,
        tokenizer,
        0, // initialization is overwritten below
    )?;

    let payload = &body[header_end..];
    let store = model.store_mut();
    if header.params.len() != store.len() {
        return Err(CoreError::Checkpoint(format!(
            "checkpoint has {} parameters, model expects {}",
            header.params.len(),
            store.len()
        )));
    }
    let mut offset = 0;
    for (id, (name, shape)) in store.ids().into_iter().zip(&header.params) {
        let node = store.node_mut(id);
        if &node.name != name || node.value.shape() != shape.as_slice() {
            return Err(CoreError::Checkpoint(format!(
                "parameter mismatch: checkpoint has {name} {shape:?}, model expects {} {:?}",
                node.name,
                node.value.shape()
            )));
        }
        let n = node.value.numel();
        let need = n * 8;
        if payload.len() < offset + need {
            return Err(CoreError::Checkpoint("truncated parameter payload".into()));
        }
        for (i, v) in node.value.data_mut().iter_mut().enumerate() {
            let at = offset + i * 8;
            *v = f64::from_le_bytes(payload[at..at + 8].try_into().unwrap());
        }
        offset += need;
    }
    if offset != payload.len() {
        return Err(CoreError::Checkpoint("trailing bytes in parameter payload".into()));
    }
    Ok(model)
}
