use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::network::{ResUnet, ResUnetConfig};
use crate::corpus::{create_writer, finish_writer};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RUN1";
const CHECKPOINT_VERSION: u16 = 1;

/// Layout: magic, version u16, config as four u32 (residual blocks, base
/// channels, embedding size, SE reduction), then until end of file per tensor:
/// name length u16, name, rank u8, dims u32 each, f32 values. Little-endian.
pub fn save_checkpoint(net: &ResUnet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create_writer(path)?;
    w.write_all(&encode(net)).map_err(|e| Error::io(path, e))?;
    finish_writer(w, path)
}

pub(crate) fn encode(net: &ResUnet) -> Vec<u8> {
    let cfg = net.config();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [cfg.residual_blocks, cfg.base_channels, cfg.embed_dim, cfg.se_reduction] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    net.visit(&mut |name, shape, values| {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(shape.len() as u8);
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    });
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::CorruptFile(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

type StoredTensor = (Vec<usize>, Vec<f32>);

fn parse(bytes: &[u8]) -> Result<([u32; 4], Vec<(String, StoredTensor)>)> {
    if bytes.len() < 22 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("missing RUN1 magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut header = [0u32; 4];
    for (i, h) in header.iter_mut().enumerate() {
        *h = u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap());
    }
    let mut cur = Cursor { bytes, pos: 22 };
    let mut tensors = Vec::new();
    while cur.pos < bytes.len() {
        let len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::CorruptFile("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.take(1)?[0] as usize;
        let shape: Vec<usize> = (0..rank)
            .map(|_| cur.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize))
            .collect::<Result<_>>()?;
        let count: usize = shape.iter().product();
        let values = cur
            .take(4 * count)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, (shape, values)));
    }
    Ok((header, tensors))
}

/// Loads weights saved by [`save_checkpoint`]; the stored configuration and
/// every tensor shape must match `config`.
pub fn load_checkpoint(path: impl AsRef<Path>, config: &ResUnetConfig) -> Result<ResUnet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, config)
}

pub(crate) fn decode(bytes: &[u8], config: &ResUnetConfig) -> Result<ResUnet> {
    let (header, tensors) = parse(bytes)?;
    let expected = [config.residual_blocks, config.base_channels, config.embed_dim, config.se_reduction];
    if header.iter().zip(&expected).any(|(&h, &e)| h as usize != e) {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint stores (blocks, channels, embed, se) = {header:?}, config wants {expected:?}"
        )));
    }
    let mut stored: HashMap<String, StoredTensor> = HashMap::with_capacity(tensors.len());
    for (name, t) in tensors {
        if stored.insert(name.clone(), t).is_some() {
            return Err(Error::CorruptFile(format!("tensor `{name}` stored twice")));
        }
    }
    let mut net = ResUnet::zeroed(*config)?;
    let mut problem: Option<String> = None;
    net.visit_mut(&mut |name, shape, values| {
        if problem.is_some() {
            return;
        }
        match stored.remove(name) {
            Some((s, v)) if s == shape => *values = v,
            Some((s, _)) => problem = Some(format!("`{name}` has shape {s:?}, expected {shape:?}")),
            None => problem = Some(format!("`{name}` missing")),
        }
    });
    if let Some(p) = problem {
        return Err(Error::CheckpointMismatch(p));
    }
    if let Some(extra) = stored.keys().next() {
        return Err(Error::CheckpointMismatch(format!("unexpected tensor `{extra}`")));
    }
    Ok(net)
}
