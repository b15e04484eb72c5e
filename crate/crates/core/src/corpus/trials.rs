use std::io::Write;
use std::path::Path;

use super::{create_writer, finish_writer, read_text, validate_token};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub target: Option<bool>,
}

impl Trial {
    pub fn new(enroll: impl Into<String>, test: impl Into<String>, target: Option<bool>) -> Self {
        Trial {
            enroll: enroll.into(),
            test: test.into(),
            target,
        }
    }
}

/// Enrollment/test pairs; either every trial carries a label or none does.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialList {
    trials: Vec<Trial>,
}

impl TrialList {
    pub fn new(trials: Vec<Trial>) -> Result<Self> {
        if let Some(first) = trials.first() {
            let labeled = first.target.is_some();
            if let Some(pos) = trials.iter().position(|t| t.target.is_some() != labeled) {
                return Err(Error::Format(format!(
                    "trial {} mixes labeled and unlabeled rows",
                    pos + 1
                )));
            }
        }
        for t in &trials {
            validate_token(&t.enroll, "enroll id")?;
            validate_token(&t.test, "test id")?;
        }
        Ok(TrialList { trials })
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.trials.first().is_some_and(|t| t.target.is_some())
    }

    /// Target labels, if the list is labeled.
    pub fn labels(&self) -> Option<Vec<bool>> {
        self.trials.iter().map(|t| t.target).collect()
    }

    /// Same pairs with enroll and test exchanged.
    pub fn swapped(&self) -> TrialList {
        TrialList {
            trials: self
                .trials
                .iter()
                .map(|t| Trial::new(t.test.clone(), t.enroll.clone(), t.target))
                .collect(),
        }
    }
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<TrialList> {
    parse_trials(&read_text(path.as_ref())?)
}

pub(crate) fn parse_trials(text: &str) -> Result<TrialList> {
    let mut trials = Vec::new();
    let mut labeled: Option<bool> = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let trial = match fields.as_slice() {
            [] => continue,
            [e, t] => Trial::new(*e, *t, None),
            [l, e, t] => {
                let target = match *l {
                    "1" => true,
                    "0" => false,
                    other => return Err(Error::parse(lineno, format!("bad label `{other}`"))),
                };
                Trial::new(*e, *t, Some(target))
            }
            _ => return Err(Error::parse(lineno, format!("expected 2 or 3 fields, got {}", fields.len()))),
        };
        let this_labeled = trial.target.is_some();
        match labeled {
            None => labeled = Some(this_labeled),
            Some(l) if l != this_labeled => {
                return Err(Error::parse(lineno, "mixed labeled and unlabeled rows"))
            }
            _ => {}
        }
        trials.push(trial);
    }
    Ok(TrialList { trials })
}

pub fn write_trials(list: &TrialList, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create_writer(path)?;
    for t in &list.trials {
        let r = match t.target {
            Some(target) => writeln!(w, "{}\t{}\t{}", u8::from(target), t.enroll, t.test),
            None => writeln!(w, "{}\t{}", t.enroll, t.test),
        };
        r.map_err(|e| Error::io(path, e))?;
    }
    finish_writer(w, path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEntry {
    pub enroll: String,
    pub test: String,
    pub score: f64,
}

/// Scores positionally aligned with the trial list they were computed from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn new(entries: Vec<ScoreEntry>) -> Result<Self> {
        for e in &entries {
            if !e.score.is_finite() {
                return Err(Error::Format(format!(
                    "non-finite score for ({}, {})",
                    e.enroll, e.test
                )));
            }
            validate_token(&e.enroll, "enroll id")?;
            validate_token(&e.test, "test id")?;
        }
        Ok(ScoreSet { entries })
    }

    /// Pairs scores with the trials they belong to.
    pub fn from_trials(trials: &TrialList, scores: Vec<f64>) -> Result<Self> {
        if trials.len() != scores.len() {
            return Err(Error::Alignment(format!(
                "{} trials but {} scores",
                trials.len(),
                scores.len()
            )));
        }
        ScoreSet::new(
            trials
                .trials()
                .iter()
                .zip(scores)
                .map(|(t, score)| ScoreEntry {
                    enroll: t.enroll.clone(),
                    test: t.test.clone(),
                    score,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Ok when both sets list the same pairs in the same order.
    pub fn check_aligned(&self, other: &ScoreSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Alignment(format!("lengths {} and {}", self.len(), other.len())));
        }
        for (i, (a, b)) in self.entries.iter().zip(&other.entries).enumerate() {
            if a.enroll != b.enroll || a.test != b.test {
                return Err(Error::Alignment(format!(
                    "row {}: ({}, {}) vs ({}, {})",
                    i + 1,
                    a.enroll,
                    a.test,
                    b.enroll,
                    b.test
                )));
            }
        }
        Ok(())
    }

    pub fn check_aligned_with(&self, trials: &TrialList) -> Result<()> {
        if self.len() != trials.len() {
            return Err(Error::Alignment(format!(
                "{} scores for {} trials",
                self.len(),
                trials.len()
            )));
        }
        for (i, (s, t)) in self.entries.iter().zip(trials.trials()).enumerate() {
            if s.enroll != t.enroll || s.test != t.test {
                return Err(Error::Alignment(format!("row {} does not match its trial", i + 1)));
            }
        }
        Ok(())
    }

    pub(crate) fn with_scores(&self, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != self.len() {
            return Err(Error::Alignment("score count changed".into()));
        }
        ScoreSet::new(
            self.entries
                .iter()
                .zip(scores)
                .map(|(e, score)| ScoreEntry {
                    score,
                    ..e.clone()
                })
                .collect(),
        )
    }
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreSet> {
    parse_scores(&read_text(path.as_ref())?)
}

pub(crate) fn parse_scores(text: &str) -> Result<ScoreSet> {
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [e, t, s] => {
                let score: f64 = s
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("bad score `{s}`")))?;
                if !score.is_finite() {
                    return Err(Error::parse(lineno, "non-finite score"));
                }
                entries.push(ScoreEntry {
                    enroll: e.to_string(),
                    test: t.to_string(),
                    score,
                });
            }
            _ => return Err(Error::parse(lineno, format!("expected 3 fields, got {}", fields.len()))),
        }
    }
    Ok(ScoreSet { entries })
}

pub fn write_scores(set: &ScoreSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create_writer(path)?;
    for e in &set.entries {
        writeln!(w, "{}\t{}\t{}", e.enroll, e.test, e.score).map_err(|err| Error::io(path, err))?;
    }
    finish_writer(w, path)
}
