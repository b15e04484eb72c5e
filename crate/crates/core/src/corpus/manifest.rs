use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{create_writer, finish_writer, read_text, validate_token};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "id\tspeaker\tpath\tduration\tdomain\tlabeled";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(format!("unknown domain `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker: Option<String>,
    pub path: PathBuf,
    /// Seconds.
    pub duration: f64,
    pub domain: Domain,
    pub labeled: bool,
}

impl UtteranceRecord {
    pub fn validate(&self) -> Result<()> {
        validate_token(&self.id, "utterance id")?;
        if let Some(spk) = &self.speaker {
            validate_token(spk, "speaker")?;
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::Format(format!(
                "utterance `{}` has non-positive duration {}",
                self.id, self.duration
            )));
        }
        if self.labeled && self.speaker.is_none() {
            return Err(Error::Format(format!(
                "utterance `{}` is labeled but has no speaker",
                self.id
            )));
        }
        let p = self.path.to_string_lossy();
        if p.contains(['\t', '\n', '\r']) {
            return Err(Error::Format(format!("path of `{}` contains tab or newline", self.id)));
        }
        Ok(())
    }
}

/// Ordered utterance inventory with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    records: Vec<UtteranceRecord>,
}

impl Manifest {
    pub fn new(records: Vec<UtteranceRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            r.validate()?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(Manifest { records })
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<UtteranceRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Distinct speakers in order of first appearance.
    pub fn speakers(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter_map(|r| r.speaker.as_deref())
            .filter(|s| seen.insert(*s))
            .collect()
    }

    pub fn filter(&self, mut keep: impl FnMut(&UtteranceRecord) -> bool) -> Manifest {
        Manifest {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = read_text(path)?;
    parse_manifest(&text)
}

pub(crate) fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.split_whitespace().eq(MANIFEST_HEADER.split('\t')) => {}
        Some(_) => return Err(Error::parse(1, format!("expected header `{MANIFEST_HEADER}`"))),
        None => return Err(Error::parse(1, "missing header")),
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::parse(lineno, format!("expected 6 fields, got {}", fields.len())));
        }
        let speaker = match fields[1] {
            "" | "-" => None,
            s => Some(s.to_string()),
        };
        let duration: f64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad duration `{}`", fields[3])))?;
        let domain = fields[4].parse().map_err(|e: String| Error::parse(lineno, e))?;
        let labeled = match fields[5] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(Error::parse(lineno, format!("bad labeled flag `{other}`"))),
        };
        let record = UtteranceRecord {
            id: fields[0].to_string(),
            speaker,
            path: PathBuf::from(fields[2]),
            duration,
            domain,
            labeled,
        };
        record
            .validate()
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(Manifest { records })
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create_writer(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{MANIFEST_HEADER}").map_err(io)?;
    for r in &manifest.records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.id,
            r.speaker.as_deref().unwrap_or(""),
            r.path.display(),
            r.duration,
            r.domain,
            u8::from(r.labeled)
        )
        .map_err(io)?;
    }
    finish_writer(w, path)
}
