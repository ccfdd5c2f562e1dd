//! Binary checkpoint: magic, version, JSON header (config and vocabularies),
//! then every parameter tensor in registration order as little-endian f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::Vocab;
use crate::error::{FpbError, Result};

use super::config::FpbConfig;
use super::fpb::FpbModel;

const MAGIC: &[u8; 8] = b"FPBCKPT\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: FpbConfig,
    src_vocab: Vec<String>,
    tgt_vocab: Vec<String>,
}

/// A model together with the vocabularies it was trained on.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: FpbModel,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
}

fn bad(msg: impl Into<String>) -> FpbError {
    FpbError::Checkpoint(msg.into())
}

pub fn write_checkpoint(
    w: &mut impl Write,
    model: &FpbModel,
    src: &Vocab,
    tgt: &Vocab,
) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        config: model.config.clone(),
        src_vocab: src.regular_tokens().to_vec(),
        tgt_vocab: tgt.regular_tokens().to_vec(),
    })?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for (_, p) in model.params.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in p.value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, model: &FpbModel, src: &Vocab, tgt: &Vocab) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model, src, tgt)?;
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated file"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| bad("truncated file"))?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut v = Vec::new();
    r.take(n as u64).read_to_end(&mut v)?;
    if v.len() != n {
        return Err(bad("truncated file"));
    }
    Ok(v)
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated file"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = read_u64(r)? as usize;
    let header: Header = serde_json::from_slice(&read_bytes(r, hlen)?)?;
    let src_vocab = Vocab::from_tokens(header.src_vocab)?;
    let tgt_vocab = Vocab::from_tokens(header.tgt_vocab)?;
    let config = header.config;
    if src_vocab.len() != config.vocab_src || tgt_vocab.len() != config.vocab_tgt {
        return Err(bad("vocabulary sizes disagree with the config"));
    }
    let mut model = FpbModel::new(config, 0)?;
    let count = read_u32(r)? as usize;
    if count != model.params.len() {
        return Err(bad(format!(
            "{count} tensors, config implies {}",
            model.params.len()
        )));
    }
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let nlen = read_u32(r)? as usize;
        let name = String::from_utf8(read_bytes(r, nlen)?).map_err(|_| bad("bad tensor name"))?;
        if name != model.params.name(id) {
            return Err(bad(format!(
                "expected tensor {}, found {name}",
                model.params.name(id)
            )));
        }
        let ndim = read_u32(r)? as usize;
        let shape = (0..ndim)
            .map(|_| read_u64(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if shape != model.params.value(id).shape() {
            return Err(bad(format!("tensor {name} has shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        let raw = read_bytes(r, n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        *model.params.value_mut(id) = Tensor::new(shape, data)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint {
        model,
        src_vocab,
        tgt_vocab,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
