use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::kmeans::KMeansModel;
use crate::corpus::{create_writer, finish_writer, read_text, validate_token};
use crate::error::{Error, Result};

const HEADER: &str = "utt_id\tpseudo_speaker";

/// Utterance to pseudo-speaker map. Labels are dense in `0..n_speakers`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PseudoLabelSet {
    pub ids: Vec<String>,
    pub labels: Vec<u32>,
    pub n_speakers: usize,
    /// Utterances dropped by filtering, in input order.
    pub removed: Vec<String>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.ids.iter().map(String::as_str).zip(self.labels.iter().copied())
    }

    /// Member count per label.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_speakers];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }
}

/// Maps label values onto `0..n` preserving their relative order.
fn densify(labels: &[u32]) -> (Vec<u32>, usize) {
    let mut values: Vec<u32> = labels.to_vec();
    values.sort_unstable();
    values.dedup();
    let remap: HashMap<u32, u32> = values.iter().enumerate().map(|(i, &v)| (v, i as u32)).collect();
    (labels.iter().map(|l| remap[l]).collect(), values.len())
}

/// Pseudo label of each utterance is the AHC label of its k-means center.
pub fn compose_pseudo_labels(kmeans: &KMeansModel, center_labels: &[u32]) -> Result<PseudoLabelSet> {
    if center_labels.len() != kmeans.k {
        return Err(Error::Shape(format!(
            "{} center labels for k = {}",
            center_labels.len(),
            kmeans.k
        )));
    }
    let raw: Vec<u32> = kmeans.assignments.iter().map(|&c| center_labels[c as usize]).collect();
    let (labels, n_speakers) = densify(&raw);
    Ok(PseudoLabelSet {
        ids: kmeans.ids.clone(),
        labels,
        n_speakers,
        removed: Vec::new(),
    })
}

/// Drops pseudo-speakers with fewer than `min_count` utterances, then
/// renumbers the survivors densely in their original order.
pub fn filter_min_count(set: &PseudoLabelSet, min_count: usize) -> Result<PseudoLabelSet> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let counts = set.counts();
    let mut out = PseudoLabelSet {
        removed: set.removed.clone(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for (id, l) in set.iter() {
        if counts[l as usize] >= min_count {
            out.ids.push(id.to_string());
            kept.push(l);
        } else {
            out.removed.push(id.to_string());
        }
    }
    if out.ids.is_empty() {
        return Err(Error::EmptyResult(format!(
            "no pseudo-speaker has {min_count} or more utterances"
        )));
    }
    let (labels, n) = densify(&kept);
    out.labels = labels;
    out.n_speakers = n;
    Ok(out)
}

/// Fraction of items whose label agrees with the majority true class of
/// their cluster.
pub fn label_purity(pred: &[u32], truth: &[u32]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    if pred.is_empty() {
        return 1.0;
    }
    let mut table: HashMap<(u32, u32), usize> = HashMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *table.entry((p, t)).or_default() += 1;
    }
    let mut best: HashMap<u32, usize> = HashMap::new();
    for (&(p, _), &c) in &table {
        let e = best.entry(p).or_default();
        *e = (*e).max(c);
    }
    best.values().sum::<usize>() as f64 / pred.len() as f64
}

/// Path of the removed-ids file written next to a label file.
pub fn removed_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".removed");
    PathBuf::from(s)
}

/// Writes the label TSV and a `<path>.removed` file with one id per line.
pub fn write_pseudo_labels(set: &PseudoLabelSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create_writer(path)?;
    let mut body = String::with_capacity(set.len() * 16);
    body.push_str(HEADER);
    body.push('\n');
    for (id, l) in set.iter() {
        body.push_str(id);
        body.push('\t');
        body.push_str(&l.to_string());
        body.push('\n');
    }
    w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    finish_writer(w, path)?;

    let side = removed_sidecar(path);
    let mut w = create_writer(&side)?;
    for id in &set.removed {
        writeln!(w, "{id}").map_err(|e| Error::io(&side, e))?;
    }
    finish_writer(w, &side)
}

/// Reads a label file and, when present, its removed-ids sidecar.
pub fn read_pseudo_labels(path: impl AsRef<Path>) -> Result<PseudoLabelSet> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == HEADER => {}
        _ => return Err(Error::parse(1, format!("expected header `{HEADER}`"))),
    }
    let mut set = PseudoLabelSet::default();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::parse(i + 1, format!("expected 2 fields, got {}", fields.len())));
        }
        validate_token(fields[0], "utterance id").map_err(|e| Error::parse(i + 1, e.to_string()))?;
        let label: u32 = fields[1]
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("bad label `{}`", fields[1])))?;
        set.ids.push(fields[0].to_string());
        set.labels.push(label);
    }
    let max = set.labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let (_, distinct) = densify(&set.labels);
    if distinct != max {
        return Err(Error::Format("pseudo labels are not dense".into()));
    }
    set.n_speakers = max;
    let side = removed_sidecar(path);
    if side.exists() {
        set.removed = read_text(&side)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect();
    }
    Ok(set)
}
