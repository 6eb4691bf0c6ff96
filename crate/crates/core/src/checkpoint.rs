//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GTFM"  u32 version  u64 header_len  header (JSON: config, vocab, labels)
//! u32 count, then per tensor:  u32 name_len  name  u32 rank  rank × u64 dims  f64 data
//! ```

use crate::config::TrainConfig;
use crate::corpus::{LabelSet, Vocab};
use crate::error::{Error, Result};
use crate::model::GraphTreeModel;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"GTFM";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    vocab: Vocab,
    labels: LabelSet,
}

pub fn write_checkpoint<S: Scalar, W: Write>(model: &GraphTreeModel<S>, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        labels: model.labels.clone(),
    })?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(model.store.len() as u32).to_le_bytes())?;
    for (_, p) in model.store.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.value.rank() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.value.data() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Data("checkpoint is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R, len: u64) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(len).read_to_end(&mut buf)?;
    if buf.len() as u64 != len {
        return Err(Error::Data("checkpoint is truncated".into()));
    }
    Ok(buf)
}

pub fn read_checkpoint<S: Scalar, R: Read>(mut r: R) -> Result<GraphTreeModel<S>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Data("not a model checkpoint (bad magic bytes)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let len = read_u64(&mut r)?;
    let header: Header = serde_json::from_slice(&read_bytes(&mut r, len)?)
        .map_err(|e| Error::Data(format!("checkpoint header: {e}")))?;
    let mut model = GraphTreeModel::<S>::build(header.config, header.vocab, header.labels, false)?;
    let count = read_u32(&mut r)? as usize;
    if count != model.store.len() {
        return Err(Error::Data(format!(
            "checkpoint holds {count} tensors, model expects {}",
            model.store.len()
        )));
    }
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as u64;
        let name = String::from_utf8(read_bytes(&mut r, name_len)?)
            .map_err(|_| Error::Data("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)?;
        let shape = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = read_bytes(&mut r, 8 * n as u64)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| S::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| Error::Data(format!("checkpoint tensor {name:?} is not part of the model")))?;
        if model.store.get(id).shape() != shape.as_slice() {
            return Err(Error::Data(format!(
                "tensor {name:?}: checkpoint shape {shape:?}, model shape {:?}",
                model.store.get(id).shape()
            )));
        }
        model.store.set(id, Tensor::new(shape, data)?)?;
    }
    Ok(model)
}

pub fn save<S: Scalar>(model: &GraphTreeModel<S>, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint(model, std::io::BufWriter::new(f))
}

pub fn load<S: Scalar>(path: impl AsRef<Path>) -> Result<GraphTreeModel<S>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_checkpoint(std::io::BufReader::new(f))
}
