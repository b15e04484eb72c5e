//! Binary feature files: magic `FEA1`, little-endian `u32` frame and bin
//! counts, then row-major little-endian `f32` values.

use std::io::Write;
use std::path::Path;

use super::fbank::FeatureMatrix;
use crate::corpus::{create_writer, finish_writer};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"FEA1";

pub fn write_features(features: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(12 + 4 * features.data().len());
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&(features.frames() as u32).to_le_bytes());
    bytes.extend_from_slice(&(features.n_mels() as u32).to_le_bytes());
    for v in features.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut w = create_writer(path)?;
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    finish_writer(w, path)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format(format!("{} is not a feature file", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (frames, n_mels) = (word(4), word(8));
    let body = &bytes[12..];
    if frames.checked_mul(n_mels).and_then(|n| n.checked_mul(4)) != Some(body.len()) {
        return Err(Error::CorruptFile(format!(
            "{}: {} payload bytes for {frames}x{n_mels} features",
            path.display(),
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    FeatureMatrix::new(frames, n_mels, data)
}
