use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;

use super::augment::{mix_noise, reverb, speed};
use crate::corpus::{create_writer, finish_writer, read_text, Manifest, UtteranceRecord, Waveform};
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// The nine copies produced per source utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AugKind {
    Orig,
    Noise,
    Music,
    Babble,
    Reverb,
    Tempo09,
    Tempo11,
    Speed09,
    Speed11,
}

impl AugKind {
    pub const ALL: [AugKind; 9] = [
        AugKind::Orig,
        AugKind::Noise,
        AugKind::Music,
        AugKind::Babble,
        AugKind::Reverb,
        AugKind::Tempo09,
        AugKind::Tempo11,
        AugKind::Speed09,
        AugKind::Speed11,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugKind::Orig => "orig",
            AugKind::Noise => "noise",
            AugKind::Music => "music",
            AugKind::Babble => "babble",
            AugKind::Reverb => "reverb",
            AugKind::Tempo09 => "tempo_0.9",
            AugKind::Tempo11 => "tempo_1.1",
            AugKind::Speed09 => "speed_0.9",
            AugKind::Speed11 => "speed_1.1",
        }
    }

    /// Resampling factor for speed and tempo copies.
    pub fn factor(self) -> Option<f64> {
        match self {
            AugKind::Tempo09 | AugKind::Speed09 => Some(0.9),
            AugKind::Tempo11 | AugKind::Speed11 => Some(1.1),
            _ => None,
        }
    }

    /// Speed copies count as new speakers; everything else keeps the speaker.
    pub fn speaker_suffix(self) -> Option<&'static str> {
        match self {
            AugKind::Speed09 => Some("#sp0.9"),
            AugKind::Speed11 => Some("#sp1.1"),
            _ => None,
        }
    }

    /// Pitch-preserving tempo is not implemented; these kinds are rendered
    /// with plain speed resampling and flagged.
    pub fn is_tempo_alias(self) -> bool {
        matches!(self, AugKind::Tempo09 | AugKind::Tempo11)
    }

    fn snr_range(self) -> Option<(f64, f64)> {
        match self {
            AugKind::Noise => Some((0.0, 15.0)),
            AugKind::Music => Some((5.0, 15.0)),
            AugKind::Babble => Some((13.0, 20.0)),
            _ => None,
        }
    }
}

impl fmt::Display for AugKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown augmentation kind `{s}`")))
    }
}

/// User-supplied noise, music, babble and impulse-response recordings.
#[derive(Debug, Clone, Default)]
pub struct AugAssets {
    pub noise: Vec<PathBuf>,
    pub music: Vec<PathBuf>,
    pub babble: Vec<PathBuf>,
    pub rir: Vec<PathBuf>,
}

impl AugAssets {
    fn pool(&self, kind: AugKind) -> Option<&[PathBuf]> {
        match kind {
            AugKind::Noise => Some(&self.noise),
            AugKind::Music => Some(&self.music),
            AugKind::Babble => Some(&self.babble),
            AugKind::Reverb => Some(&self.rir),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanEntry {
    /// Index into [`AugmentationPlan::utt_ids`].
    pub utt: u32,
    pub kind: AugKind,
    /// Index into [`AugmentationPlan::assets`].
    pub asset: Option<u32>,
    pub snr_db: Option<f32>,
}

/// Per-utterance augmentation recipe. Entries refer to utterances and assets
/// by index so a plan for millions of utterances stays compact.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugmentationPlan {
    pub utt_ids: Vec<String>,
    pub assets: Vec<PathBuf>,
    pub entries: Vec<PlanEntry>,
}

impl AugmentationPlan {
    pub fn utt_id(&self, entry: &PlanEntry) -> &str {
        &self.utt_ids[entry.utt as usize]
    }

    pub fn asset(&self, entry: &PlanEntry) -> Option<&Path> {
        entry.asset.map(|a| self.assets[a as usize].as_path())
    }

    /// Kinds planned for each utterance, indexed like `utt_ids`.
    fn kinds_by_utt(&self) -> Vec<u16> {
        let mut masks = vec![0u16; self.utt_ids.len()];
        for e in &self.entries {
            masks[e.utt as usize] |= 1 << e.kind as u16;
        }
        masks
    }
}

/// Full nine-kind plan. Asset choice and SNR are drawn from a stream keyed by
/// `(seed, utterance id, kind)`, so a plan never depends on manifest order.
pub fn build_plan(manifest: &Manifest, assets: &AugAssets, seed: u64) -> Result<AugmentationPlan> {
    let mut plan = AugmentationPlan::default();
    let mut asset_index: HashMap<&Path, u32> = HashMap::new();
    for (u, record) in manifest.records().iter().enumerate() {
        plan.utt_ids.push(record.id.clone());
        for kind in AugKind::ALL {
            let mut rng = rng_for(seed, &[&record.id, kind.name()]);
            let asset = match assets.pool(kind) {
                Some([]) => {
                    return Err(Error::IncompletePlan(format!("no assets supplied for `{kind}`")))
                }
                Some(pool) => {
                    let path = pool[rng.gen_range(0..pool.len())].as_path();
                    let next = asset_index.len() as u32;
                    let idx = *asset_index.entry(path).or_insert_with(|| {
                        plan.assets.push(path.to_path_buf());
                        next
                    });
                    Some(idx)
                }
                None => None,
            };
            let snr_db = kind
                .snr_range()
                .map(|(lo, hi)| rng.gen_range(lo..=hi) as f32);
            plan.entries.push(PlanEntry {
                utt: u as u32,
                kind,
                asset,
                snr_db,
            });
        }
    }
    Ok(plan)
}

/// Renders one plan entry. `load` resolves asset paths to audio.
pub fn apply_plan_entry(
    wave: &Waveform,
    plan: &AugmentationPlan,
    entry: &PlanEntry,
    seed: u64,
    mut load: impl FnMut(&Path) -> Result<Waveform>,
) -> Result<Waveform> {
    let kind = entry.kind;
    let asset = || {
        plan.asset(entry)
            .ok_or_else(|| Error::IncompletePlan(format!("`{kind}` entry without an asset")))
    };
    match kind {
        AugKind::Orig => Ok(wave.clone()),
        AugKind::Noise | AugKind::Music | AugKind::Babble => {
            let noise = load(asset()?)?;
            let snr = entry
                .snr_db
                .ok_or_else(|| Error::IncompletePlan(format!("`{kind}` entry without an SNR")))?;
            let mut rng = rng_for(seed, &[plan.utt_id(entry), kind.name(), "offset"]);
            mix_noise(wave, &noise, f64::from(snr), &mut rng)
        }
        AugKind::Reverb => reverb(wave, &load(asset()?)?),
        _ => {
            if kind.is_tempo_alias() {
                log::warn!(
                    "{}: `{kind}` rendered as speed perturbation (pitch-preserving tempo unavailable)",
                    plan.utt_id(entry)
                );
            }
            speed(wave, kind.factor().expect("speed kinds carry a factor"))
        }
    }
}

fn expanded_record(record: &UtteranceRecord, kind: AugKind) -> UtteranceRecord {
    let id = match kind {
        AugKind::Orig => record.id.clone(),
        k => format!("{}#{}", record.id, k.name()),
    };
    let speaker = match (&record.speaker, kind.speaker_suffix()) {
        (Some(s), Some(suffix)) => Some(format!("{s}{suffix}")),
        (s, _) => s.clone(),
    };
    UtteranceRecord {
        id,
        speaker,
        path: record.path.clone(),
        duration: record.duration / kind.factor().unwrap_or(1.0),
        domain: record.domain,
        labeled: record.labeled,
    }
}

fn check_complete(manifest: &Manifest, plan: &AugmentationPlan) -> Result<()> {
    let masks = plan.kinds_by_utt();
    let by_id: HashMap<&str, usize> = plan
        .utt_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let full = (1u16 << AugKind::ALL.len()) - 1;
    for r in manifest.records() {
        match by_id.get(r.id.as_str()) {
            Some(&i) if masks[i] == full => {}
            Some(&i) => {
                let missing: Vec<&str> = AugKind::ALL
                    .iter()
                    .filter(|k| masks[i] & (1 << **k as u16) == 0)
                    .map(|k| k.name())
                    .collect();
                return Err(Error::IncompletePlan(format!(
                    "`{}` lacks {}",
                    r.id,
                    missing.join(", ")
                )));
            }
            None => return Err(Error::IncompletePlan(format!("`{}` not in plan", r.id))),
        }
    }
    Ok(())
}

/// Nine records per utterance. Copies get ids `<id>#<kind>`; speed copies move
/// to speakers `<spk>#sp0.9` / `<spk>#sp1.1`; durations scale by `1/factor`.
pub fn expand_manifest(manifest: &Manifest, plan: &AugmentationPlan) -> Result<Manifest> {
    check_complete(manifest, plan)?;
    let records = manifest
        .records()
        .iter()
        .flat_map(|r| AugKind::ALL.into_iter().map(move |k| expanded_record(r, k)))
        .collect();
    Manifest::new(records)
}

/// `(utterances, speakers)` that [`expand_manifest`] would produce, without
/// materializing the expanded manifest.
pub fn expansion_counts(manifest: &Manifest, plan: &AugmentationPlan) -> Result<(usize, usize)> {
    check_complete(manifest, plan)?;
    let mut utterances = 0usize;
    let mut speakers = HashSet::new();
    for r in manifest.records() {
        for kind in AugKind::ALL {
            let e = expanded_record(r, kind);
            utterances += 1;
            if let Some(s) = e.speaker {
                speakers.insert(s);
            }
        }
    }
    Ok((utterances, speakers.len()))
}

pub fn write_plan(plan: &AugmentationPlan, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create_writer(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "utt_id\tkind\tasset\tsnr_db").map_err(io)?;
    for e in &plan.entries {
        let asset = plan
            .asset(e)
            .map_or_else(|| "-".to_string(), |p| p.display().to_string());
        let snr = e.snr_db.map_or_else(|| "-".to_string(), |s| s.to_string());
        writeln!(w, "{}\t{}\t{}\t{}", plan.utt_id(e), e.kind, asset, snr).map_err(io)?;
    }
    finish_writer(w, path)
}

pub fn read_plan(path: impl AsRef<Path>) -> Result<AugmentationPlan> {
    let text = read_text(path.as_ref())?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split_whitespace().eq(["utt_id", "kind", "asset", "snr_db"]) => {}
        _ => return Err(Error::parse(1, "expected header `utt_id kind asset snr_db`")),
    }
    let mut plan = AugmentationPlan::default();
    let mut utt_index: HashMap<String, u32> = HashMap::new();
    let mut asset_index: HashMap<String, u32> = HashMap::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if line.trim().is_empty() {
            continue;
        }
        let [utt, kind, asset, snr] = fields.as_slice() else {
            return Err(Error::parse(lineno, "expected 4 fields"));
        };
        let kind: AugKind = kind.parse().map_err(|e: Error| Error::parse(lineno, e.to_string()))?;
        let next = utt_index.len() as u32;
        let utt = *utt_index.entry(utt.to_string()).or_insert_with(|| {
            plan.utt_ids.push(utt.to_string());
            next
        });
        let asset = match *asset {
            "-" => None,
            a => {
                let next = asset_index.len() as u32;
                Some(*asset_index.entry(a.to_string()).or_insert_with(|| {
                    plan.assets.push(PathBuf::from(a));
                    next
                }))
            }
        };
        let snr_db = match *snr {
            "-" => None,
            s => Some(
                s.parse::<f32>()
                    .map_err(|_| Error::parse(lineno, format!("bad SNR `{s}`")))?,
            ),
        };
        plan.entries.push(PlanEntry {
            utt,
            kind,
            asset,
            snr_db,
        });
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Domain;

    fn manifest(n_utts: usize, n_spk: usize) -> Manifest {
        Manifest::new(
            (0..n_utts)
                .map(|i| UtteranceRecord {
                    id: format!("u{i}"),
                    speaker: Some(format!("s{}", i % n_spk)),
                    path: PathBuf::from(format!("u{i}.wav")),
                    duration: 3.0,
                    domain: Domain::Source,
                    labeled: true,
                })
                .collect(),
        )
        .unwrap()
    }

    fn assets() -> AugAssets {
        AugAssets {
            noise: vec!["n1.wav".into(), "n2.wav".into()],
            music: vec!["m.wav".into()],
            babble: vec!["b.wav".into()],
            rir: vec!["r1.wav".into(), "r2.wav".into()],
        }
    }

    #[test]
    fn unit_scaling() {
        let m = manifest(1, 1);
        let plan = build_plan(&m, &assets(), 1).unwrap();
        let out = expand_manifest(&m, &plan).unwrap();
        assert_eq!(out.len(), 9);
        assert_eq!(out.speakers().len(), 3);
        assert_eq!(expansion_counts(&m, &plan).unwrap(), (9, 3));
    }

    #[test]
    fn speaker_partition_per_utterance() {
        let m = manifest(12, 4);
        let plan = build_plan(&m, &assets(), 1).unwrap();
        let out = expand_manifest(&m, &plan).unwrap();
        for src in m.records() {
            let spk = src.speaker.clone().unwrap();
            let copies: HashSet<String> = out
                .records()
                .iter()
                .filter(|r| r.id == src.id || r.id.starts_with(&format!("{}#", src.id)))
                .map(|r| r.speaker.clone().unwrap())
                .collect();
            let expected: HashSet<String> =
                [spk.clone(), format!("{spk}#sp0.9"), format!("{spk}#sp1.1")].into();
            assert_eq!(copies, expected);
        }
        let slow = out.get("u0#speed_0.9").unwrap();
        assert!((slow.duration - 3.0 / 0.9).abs() < 1e-12);
    }

    #[test]
    fn missing_kind_is_incomplete() {
        let m = manifest(2, 1);
        let mut plan = build_plan(&m, &assets(), 1).unwrap();
        plan.entries.retain(|e| !(e.utt == 1 && e.kind == AugKind::Reverb));
        assert!(matches!(expand_manifest(&m, &plan), Err(Error::IncompletePlan(_))));
        assert!(matches!(
            build_plan(&m, &AugAssets::default(), 1),
            Err(Error::IncompletePlan(_))
        ));
    }

    #[test]
    fn plan_is_order_independent_and_round_trips() {
        let m = manifest(5, 2);
        let reversed = Manifest::new(m.records().iter().rev().cloned().collect()).unwrap();
        let a = build_plan(&m, &assets(), 42).unwrap();
        let b = build_plan(&reversed, &assets(), 42).unwrap();
        let key = |p: &AugmentationPlan| {
            let mut v: Vec<(String, AugKind, Option<PathBuf>, Option<u32>)> = p
                .entries
                .iter()
                .map(|e| (p.utt_id(e).to_string(), e.kind, p.asset(e).map(Path::to_path_buf), e.snr_db.map(f32::to_bits)))
                .collect();
            v.sort();
            v
        };
        assert_eq!(key(&a), key(&b));
        assert!(a.entries.iter().filter(|e| e.kind.snr_range().is_some()).all(|e| e.snr_db.is_some()));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plan.tsv");
        write_plan(&a, &p).unwrap();
        assert_eq!(read_plan(&p).unwrap(), a);
    }

    #[test]
    fn tempo_kinds_are_flagged_aliases() {
        assert!(AugKind::Tempo09.is_tempo_alias());
        assert!(!AugKind::Speed09.is_tempo_alias());
        assert_eq!(AugKind::Tempo11.factor(), Some(1.1));
        assert_eq!(AugKind::Tempo11.speaker_suffix(), None);
    }
}
