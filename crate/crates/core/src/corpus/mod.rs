//! On-disk data model: manifests, trial lists, score sets, embedding sets and
//! audio, together with their readers and writers.
//!
//! Text formats are tab-separated UTF-8. Readers accept any run of spaces or
//! tabs as a separator so hand-written trial lists work too.

mod embeddings;
mod manifest;
mod trials;
pub(crate) mod wav;

pub use embeddings::{read_embeddings, write_embeddings, EmbeddingSet, EMBEDDING_MAGIC};
pub use manifest::{read_manifest, write_manifest, Domain, Manifest, UtteranceRecord};
pub use trials::{
    read_scores, read_trials, write_scores, write_trials, ScoreEntry, ScoreSet, Trial, TrialList,
};
pub use wav::{read_wav, write_wav, Waveform, SAMPLE_RATE};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn create_writer(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn finish_writer(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Ids travel through whitespace-separated text formats.
pub(crate) fn validate_token(token: &str, what: &str) -> Result<()> {
    if token.is_empty() {
        return Err(Error::Format(format!("empty {what}")));
    }
    if token.chars().any(char::is_whitespace) {
        return Err(Error::Format(format!("{what} `{token}` contains whitespace")));
    }
    Ok(())
}
