//! Binary checkpoint: `RGEN`, u32 version, u32-length JSON header, u32
//! tensor count, then per tensor a u32-length name and its
//! [`Tensor::write_le`] blob. All integers little-endian.

use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::corpus::Vocabulary;
use crate::{Error, Result};

use super::{Model, ModelConfig};

const MAGIC: &[u8; 4] = b"RGEN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    vocab: Vec<String>,
    epoch: Option<usize>,
}

/// Everything needed to rebuild a trained model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub store: ParamStore<f32>,
    pub vocab: Vocabulary,
    /// Training epoch the weights come from, if any.
    pub epoch: Option<usize>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model.config.clone(),
            vocab: self.vocab.tokens().to_vec(),
            epoch: self.epoch,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for (_, p) in self.store.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            p.value.write_le(&mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let json = read_block(&mut r)?;
        let header: Header = serde_json::from_slice(&json)?;
        let vocab = Vocabulary::from_tokens(header.vocab)?;
        if vocab.len() != header.model.vocab_size {
            return Err(Error::Format(format!(
                "vocabulary has {} tokens, model expects {}",
                vocab.len(),
                header.model.vocab_size
            )));
        }
        // The freshly initialised layout supplies names, groups and order;
        // every tensor is then overwritten from the file.
        let (model, mut store) = Model::init(&header.model, 0)?;
        let count = read_u32(&mut r)? as usize;
        if count != store.len() {
            return Err(Error::Format(format!("checkpoint has {count} tensors, model needs {}", store.len())));
        }
        for id in store.ids().collect::<Vec<_>>() {
            let name = String::from_utf8(read_block(&mut r)?).map_err(|e| Error::Format(e.to_string()))?;
            let tensor = Tensor::<f32>::read_le(&mut r).map_err(|e| match e {
                Error::Io(e) => truncated(e),
                e => e,
            })?;
            let p = store.get_mut(id);
            if p.name != name || p.value.shape() != tensor.shape() {
                return Err(Error::Format(format!(
                    "tensor {name:?} {:?} does not match expected {:?} {:?}",
                    tensor.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = tensor;
        }
        if (r.position() as usize) != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { model, store, vocab, epoch: header.epoch })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn truncated(e: std::io::Error) -> Error {
    Error::Format(format!("truncated checkpoint: {e}"))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut w = [0u8; 4];
    r.read_exact(&mut w).map_err(truncated)?;
    Ok(u32::from_le_bytes(w))
}

fn read_block(r: &mut Cursor<&[u8]>) -> Result<Vec<u8>> {
    let n = read_u32(r)? as usize;
    let remaining = r.get_ref().len() - r.position() as usize;
    if n > remaining {
        return Err(Error::Format("truncated checkpoint block".into()));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf)
}
