//! Cosine scoring, mean subtraction, duration-aware score calibration and
//! equal-weight fusion.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;

use crate::corpus::{create_writer, finish_writer, read_text, EmbeddingSet, Manifest, ScoreSet, Trial, TrialList};
use crate::error::{Error, Result};
use crate::seed::Rng;

pub use crate::metrics::DcfParams;

/// Utterance durations in seconds.
pub type Durations = HashMap<String, f64>;

pub fn durations_from_manifest(manifest: &Manifest) -> Durations {
    manifest.records().iter().map(|r| (r.id.clone(), r.duration)).collect()
}

pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::Norm("cosine of a zero vector".into()));
    }
    // sqrt of the product keeps cosine(a, a) at exactly 1.
    Ok((ab / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

/// Mean of `pool`, accumulated in f64.
pub fn mean_embedding(pool: &EmbeddingSet) -> Result<Vec<f64>> {
    if pool.is_empty() {
        return Err(Error::EmptyData("mean of an empty embedding pool".into()));
    }
    let mut mean = vec![0.0f64; pool.dim()];
    for (_, v) in pool.iter() {
        for (m, &x) in mean.iter_mut().zip(v) {
            *m += f64::from(x);
        }
    }
    let n = pool.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Subtracts the mean of `pool` from every vector of `set`.
pub fn sub_mean(set: &EmbeddingSet, pool: &EmbeddingSet) -> Result<EmbeddingSet> {
    if set.dim() != pool.dim() {
        return Err(Error::Shape(format!("dims {} and {}", set.dim(), pool.dim())));
    }
    let mean = mean_embedding(pool)?;
    let mut out = EmbeddingSet::new(set.dim())?;
    for (id, v) in set.iter() {
        let centered: Vec<f32> = v.iter().zip(&mean).map(|(&x, m)| (f64::from(x) - m) as f32).collect();
        out.push(id, &centered)?;
    }
    Ok(out)
}

/// One cosine score per trial, in trial order.
pub fn score_trials(embeddings: &EmbeddingSet, trials: &TrialList) -> Result<ScoreSet> {
    let lookup = |id: &str| embeddings.get(id).ok_or_else(|| Error::UnknownUtterance(id.to_string()));
    let scores = trials
        .trials()
        .par_iter()
        .map(|t| cosine(lookup(&t.enroll)?, lookup(&t.test)?))
        .collect::<Result<Vec<f64>>>()?;
    ScoreSet::from_trials(trials, scores)
}

/// Samples labeled trials from the labeled records of `manifest`: `n_target`
/// same-speaker pairs and `n_nontarget` cross-speaker pairs, each drawn
/// uniformly without replacement and without self-pairs.
pub fn make_calibration_trials(
    manifest: &Manifest,
    rng: &mut Rng,
    n_target: usize,
    n_nontarget: usize,
) -> Result<TrialList> {
    let mut by_speaker: Vec<(String, Vec<&str>)> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for r in manifest.records().iter().filter(|r| r.labeled) {
        let Some(spk) = r.speaker.as_deref() else { continue };
        let slot = *index.entry(spk).or_insert_with(|| {
            by_speaker.push((spk.to_string(), Vec::new()));
            by_speaker.len() - 1
        });
        by_speaker[slot].1.push(&r.id);
    }
    if by_speaker.iter().filter(|(_, u)| u.len() >= 2).count() < 2 {
        return Err(Error::NotEnoughData(
            "need at least two labeled speakers with two utterances each".into(),
        ));
    }

    let pairs = |n: usize| n * n.saturating_sub(1) / 2;
    let same_total: usize = by_speaker.iter().map(|(_, u)| pairs(u.len())).sum();
    let utts: Vec<(&str, usize)> = by_speaker
        .iter()
        .enumerate()
        .flat_map(|(s, (_, u))| u.iter().map(move |&id| (id, s)))
        .collect();
    let cross_total = pairs(utts.len()) - same_total;
    if n_target > same_total {
        return Err(Error::NotEnoughData(format!(
            "{n_target} target trials requested, {same_total} available"
        )));
    }
    if n_nontarget > cross_total {
        return Err(Error::NotEnoughData(format!(
            "{n_nontarget} non-target trials requested, {cross_total} available"
        )));
    }

    let mut trials = Vec::with_capacity(n_target + n_nontarget);
    // Same-speaker pair index -> (speaker, i, j) by walking cumulative counts.
    let mut offsets = Vec::with_capacity(by_speaker.len());
    let mut acc = 0;
    for (_, u) in &by_speaker {
        offsets.push(acc);
        acc += pairs(u.len());
    }
    for p in sample(rng, same_total, n_target) {
        let s = offsets.partition_point(|&o| o <= p) - 1;
        let (i, j) = unrank_pair(p - offsets[s], by_speaker[s].1.len());
        trials.push(Trial::new(by_speaker[s].1[i], by_speaker[s].1[j], Some(true)));
    }

    let n = utts.len();
    if n_nontarget * 4 >= cross_total {
        let cross: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| utts[i].1 != utts[j].1)
            .collect();
        for p in sample(rng, cross.len(), n_nontarget) {
            let (i, j) = cross[p];
            trials.push(Trial::new(utts[i].0, utts[j].0, Some(false)));
        }
    } else {
        let mut seen = HashSet::with_capacity(n_nontarget);
        while seen.len() < n_nontarget {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            let (i, j) = (a.min(b), a.max(b));
            if utts[i].1 != utts[j].1 && seen.insert((i, j)) {
                trials.push(Trial::new(utts[i].0, utts[j].0, Some(false)));
            }
        }
    }
    TrialList::new(trials)
}

/// Maps `0..n(n-1)/2` onto pairs `(i, j)` with `i < j < n` in row order.
fn unrank_pair(mut p: usize, n: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - i - 1;
        if p < row {
            return (i, i + 1 + p);
        }
        p -= row;
    }
    unreachable!("pair rank out of range")
}

/// Affine log-odds calibration on the score and the standardized shorter
/// duration of the two sides of a trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationModel {
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
    pub quality_mean: f64,
    pub quality_std: f64,
}

impl CalibrationModel {
    pub fn identity() -> Self {
        CalibrationModel {
            w0: 0.0,
            w1: 1.0,
            w2: 0.0,
            quality_mean: 0.0,
            quality_std: 1.0,
        }
    }

    pub fn apply_one(&self, score: f64, quality: f64) -> f64 {
        self.w0 + self.w1 * score + self.w2 * (quality - self.quality_mean) / self.quality_std
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationParams {
    pub max_iters: usize,
    pub l2: f64,
    pub learning_rate: f64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams {
            max_iters: 1000,
            l2: 1e-4,
            learning_rate: 0.1,
        }
    }
}

/// A fitted model plus the objective value after every accepted step
/// (the first entry is the starting point).
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFit {
    pub model: CalibrationModel,
    pub objective: Vec<f64>,
}

fn trial_qualities(scores: &ScoreSet, durations: &Durations) -> Result<Vec<f64>> {
    scores
        .entries()
        .iter()
        .map(|e| {
            let d = |id: &str| durations.get(id).copied().ok_or_else(|| Error::UnknownUtterance(id.to_string()));
            Ok(d(&e.enroll)?.min(d(&e.test)?))
        })
        .collect()
}

fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Regularized logistic regression by gradient descent. A step that raises
/// the objective is rejected and the learning rate halved.
pub fn fit_calibration(
    scores: &ScoreSet,
    labels: &[bool],
    durations: &Durations,
    params: &CalibrationParams,
) -> Result<CalibrationFit> {
    if labels.len() != scores.len() {
        return Err(Error::Alignment(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::DegenerateLabels);
    }
    let q = trial_qualities(scores, durations)?;
    let n = q.len() as f64;
    let q_mean = q.iter().sum::<f64>() / n;
    let var = q.iter().map(|x| (x - q_mean) * (x - q_mean)).sum::<f64>() / n;
    let q_std = if var > 0.0 { var.sqrt() } else { 1.0 };
    let qs: Vec<f64> = q.iter().map(|x| (x - q_mean) / q_std).collect();
    let s = scores.scores();

    let objective = |w: &[f64; 3]| -> f64 {
        let ce: f64 = s
            .iter()
            .zip(&qs)
            .zip(labels)
            .map(|((&si, &qi), &y)| {
                let z = w[0] + w[1] * si + w[2] * qi;
                if y {
                    log1p_exp(-z)
                } else {
                    log1p_exp(z)
                }
            })
            .sum::<f64>()
            / n;
        ce + params.l2 * (w[1] * w[1] + w[2] * w[2])
    };
    let gradient = |w: &[f64; 3]| -> [f64; 3] {
        let mut g = [0.0; 3];
        for ((&si, &qi), &y) in s.iter().zip(&qs).zip(labels) {
            let r = sigmoid(w[0] + w[1] * si + w[2] * qi) - if y { 1.0 } else { 0.0 };
            g[0] += r;
            g[1] += r * si;
            g[2] += r * qi;
        }
        [
            g[0] / n,
            g[1] / n + 2.0 * params.l2 * w[1],
            g[2] / n + 2.0 * params.l2 * w[2],
        ]
    };

    let mut w = [0.0f64; 3];
    let mut cur = objective(&w);
    let mut trace = vec![cur];
    let mut lr = params.learning_rate;
    for _ in 0..params.max_iters {
        let g = gradient(&w);
        if g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-12 {
            break;
        }
        let next = [w[0] - lr * g[0], w[1] - lr * g[1], w[2] - lr * g[2]];
        let val = objective(&next);
        if val > cur {
            lr *= 0.5;
            if lr < 1e-12 {
                break;
            }
            continue;
        }
        w = next;
        cur = val;
        trace.push(cur);
    }
    Ok(CalibrationFit {
        model: CalibrationModel {
            w0: w[0],
            w1: w[1],
            w2: w[2],
            quality_mean: q_mean,
            quality_std: q_std,
        },
        objective: trace,
    })
}

pub fn train_calibration(
    scores: &ScoreSet,
    labels: &[bool],
    durations: &Durations,
    params: &CalibrationParams,
) -> Result<CalibrationModel> {
    Ok(fit_calibration(scores, labels, durations, params)?.model)
}

/// Calibrated log-odds per trial.
pub fn apply_calibration(model: &CalibrationModel, scores: &ScoreSet, durations: &Durations) -> Result<ScoreSet> {
    let q = trial_qualities(scores, durations)?;
    let out = scores
        .entries()
        .iter()
        .zip(&q)
        .map(|(e, &qi)| model.apply_one(e.score, qi))
        .collect();
    scores.with_scores(out)
}

const CALIBRATION_HEADER: &str = "w0\tw1\tw2\tq_mean\tq_std";

pub fn write_calibration(model: &CalibrationModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create_writer(path)?;
    writeln!(
        w,
        "{CALIBRATION_HEADER}\n{}\t{}\t{}\t{}\t{}",
        model.w0, model.w1, model.w2, model.quality_mean, model.quality_std
    )
    .map_err(|e| Error::io(path, e))?;
    finish_writer(w, path)
}

pub fn read_calibration(path: impl AsRef<Path>) -> Result<CalibrationModel> {
    let text = read_text(path.as_ref())?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim_end) != Some(CALIBRATION_HEADER) {
        return Err(Error::parse(1, format!("expected header `{CALIBRATION_HEADER}`")));
    }
    let row = lines.next().ok_or_else(|| Error::parse(2, "missing coefficient row"))?;
    let v: Vec<f64> = row
        .split('\t')
        .map(|f| f.trim().parse::<f64>().map_err(|_| Error::parse(2, format!("bad number `{f}`"))))
        .collect::<Result<_>>()?;
    if v.len() != 5 {
        return Err(Error::parse(2, format!("expected 5 fields, got {}", v.len())));
    }
    if !v.iter().all(|x| x.is_finite()) || !(v[4] > 0.0) {
        return Err(Error::Format("calibration needs finite values and a positive q_std".into()));
    }
    Ok(CalibrationModel {
        w0: v[0],
        w1: v[1],
        w2: v[2],
        quality_mean: v[3],
        quality_std: v[4],
    })
}

/// Elementwise mean of aligned score sets.
pub fn fuse(sets: &[ScoreSet]) -> Result<ScoreSet> {
    let first = sets.first().ok_or_else(|| Error::EmptyData("nothing to fuse".into()))?;
    for s in &sets[1..] {
        first.check_aligned(s)?;
    }
    let k = sets.len() as f64;
    let fused = (0..first.len())
        .map(|i| sets.iter().map(|s| s.entries()[i].score).sum::<f64>() / k)
        .collect();
    first.with_scores(fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Domain, UtteranceRecord};
    use crate::seed::rng;
    use proptest::prelude::*;

    fn emb(rows: &[(&str, Vec<f32>)]) -> EmbeddingSet {
        let mut s = EmbeddingSet::new(rows[0].1.len()).unwrap();
        for (id, v) in rows {
            s.push(*id, v).unwrap();
        }
        s
    }

    fn manifest(spk: &[(&str, usize)]) -> Manifest {
        let mut recs = Vec::new();
        for (s, n) in spk {
            for i in 0..*n {
                recs.push(UtteranceRecord {
                    id: format!("{s}_{i}"),
                    speaker: Some(s.to_string()),
                    path: "x.wav".into(),
                    duration: 1.0 + i as f64,
                    domain: Domain::Target,
                    labeled: true,
                });
            }
        }
        Manifest::new(recs).unwrap()
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 0.70711).abs() < 1e-5);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Norm(_))));
    }

    #[test]
    fn centering() {
        let set = emb(&[("a", vec![1.0, 2.0]), ("b", vec![3.0, -2.0]), ("c", vec![-1.0, 3.0])]);
        let c = sub_mean(&set, &set).unwrap();
        let sum = mean_embedding(&c).unwrap();
        assert!(sum.iter().all(|v| v.abs() < 1e-6 * 2.0));
        let again = sub_mean(&c, &c).unwrap();
        for (x, y) in again.as_matrix().iter().zip(c.as_matrix()) {
            assert!((x - y).abs() < 1e-6);
        }
        let zero_mean = emb(&[("p", vec![1.0, -1.0]), ("q", vec![-1.0, 1.0])]);
        assert_eq!(sub_mean(&set, &zero_mean).unwrap(), set);
    }

    #[test]
    fn scoring_order_and_unknown() {
        let set = emb(&[("a", vec![1.0, 0.0]), ("b", vec![1.0, 1.0])]);
        let trials = TrialList::new(vec![Trial::new("a", "a", None), Trial::new("a", "b", None)]).unwrap();
        let s = score_trials(&set, &trials).unwrap();
        assert_eq!(s.scores()[0], 1.0);
        assert_eq!(s.scores()[1], cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap());
        let bad = TrialList::new(vec![Trial::new("a", "z", None)]).unwrap();
        assert!(matches!(score_trials(&set, &bad), Err(Error::UnknownUtterance(id)) if id == "z"));
    }

    #[test]
    fn calibration_trials_exhaustive_pool() {
        let m = manifest(&[("s1", 2), ("s2", 2)]);
        let t = make_calibration_trials(&m, &mut rng(1), 2, 2).unwrap();
        let labels = t.labels().unwrap();
        assert_eq!(labels.iter().filter(|&&l| l).count(), 2);
        assert_eq!(labels.iter().filter(|&&l| !l).count(), 2);
        assert!(matches!(make_calibration_trials(&m, &mut rng(1), 3, 2), Err(Error::NotEnoughData(_))));
        assert!(matches!(
            make_calibration_trials(&manifest(&[("s1", 5)]), &mut rng(1), 1, 0),
            Err(Error::NotEnoughData(_))
        ));
    }

    #[test]
    fn calibration_trial_labels_are_correct() {
        let m = manifest(&[("a", 7), ("b", 3), ("c", 12), ("d", 2)]);
        let spk = |id: &str| id.split('_').next().unwrap().to_string();
        for (nt, nn) in [(10, 10), (50, 5), (3, 150)] {
            let t = make_calibration_trials(&m, &mut rng(nt as u64), nt, nn).unwrap();
            let mut seen = HashSet::new();
            for tr in t.trials() {
                assert_ne!(tr.enroll, tr.test);
                assert_eq!(tr.target, Some(spk(&tr.enroll) == spk(&tr.test)));
                let key = if tr.enroll < tr.test { (&tr.enroll, &tr.test) } else { (&tr.test, &tr.enroll) };
                assert!(seen.insert(key));
            }
            assert_eq!(t.len(), nt + nn);
        }
    }

    fn synthetic_scored(n: usize, seed: u64, informative: bool) -> (ScoreSet, Vec<bool>, Durations) {
        let mut r = rng(seed);
        let mut durations = Durations::new();
        let mut trials = Vec::new();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let (e, t) = (format!("e{i}"), format!("t{i}"));
            durations.insert(e.clone(), r.gen_range(1.0..10.0));
            durations.insert(t.clone(), r.gen_range(1.0..10.0));
            let y = r.gen_bool(0.5);
            let s = if informative {
                if y { r.gen_range(0.5..1.0) } else { r.gen_range(-1.0..0.4) }
            } else {
                r.gen_range(-1.0..1.0)
            };
            trials.push(Trial::new(e, t, Some(y)));
            scores.push(s);
            labels.push(y);
        }
        let list = TrialList::new(trials).unwrap();
        (ScoreSet::from_trials(&list, scores).unwrap(), labels, durations)
    }

    #[test]
    fn separated_scores_train_below_chance() {
        let (s, l, d) = synthetic_scored(500, 3, true);
        let fit = fit_calibration(&s, &l, &d, &CalibrationParams::default()).unwrap();
        assert!((fit.objective[0] - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(*fit.objective.last().unwrap() < std::f64::consts::LN_2);
        assert!(fit.objective.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn null_signal_gives_small_weights() {
        let (s, l, d) = synthetic_scored(10_000, 4, false);
        let m = train_calibration(&s, &l, &d, &CalibrationParams { l2: 1e-2, ..Default::default() }).unwrap();
        assert!(m.w1.abs() < 0.1 && m.w2.abs() < 0.1, "{m:?}");
    }

    #[test]
    fn swap_symmetry_is_exact() {
        let (s, l, d) = synthetic_scored(300, 5, true);
        let swapped = ScoreSet::new(
            s.entries()
                .iter()
                .map(|e| crate::corpus::ScoreEntry {
                    enroll: e.test.clone(),
                    test: e.enroll.clone(),
                    score: e.score,
                })
                .collect(),
        )
        .unwrap();
        let p = CalibrationParams::default();
        let a = train_calibration(&s, &l, &d, &p).unwrap();
        let b = train_calibration(&swapped, &l, &d, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            apply_calibration(&a, &s, &d).unwrap().scores(),
            apply_calibration(&b, &swapped, &d).unwrap().scores()
        );
        let single = vec![true; l.len()];
        assert!(matches!(train_calibration(&s, &single, &d, &p), Err(Error::DegenerateLabels)));
    }

    #[test]
    fn apply_identity_and_quality_effect() {
        let (s, _, d) = synthetic_scored(20, 6, true);
        assert_eq!(apply_calibration(&CalibrationModel::identity(), &s, &d).unwrap(), s);
        let m = CalibrationModel { w2: 0.5, ..CalibrationModel::identity() };
        let d2: Durations = [("a", 1.0), ("b", 5.0), ("c", 2.0), ("e", 9.0)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let t = TrialList::new(vec![Trial::new("a", "b", None), Trial::new("c", "e", None)]).unwrap();
        let same = ScoreSet::from_trials(&t, vec![0.3, 0.3]).unwrap();
        let out = apply_calibration(&m, &same, &d2).unwrap().scores();
        assert_ne!(out[0], out[1]);
        let missing: Durations = Durations::new();
        assert!(matches!(apply_calibration(&m, &same, &missing), Err(Error::UnknownUtterance(_))));
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cal.tsv");
        let m = CalibrationModel {
            w0: -1.25,
            w1: 7.0000001,
            w2: 0.1 + 0.2,
            quality_mean: 4.5,
            quality_std: 2.25,
        };
        write_calibration(&m, &p).unwrap();
        assert_eq!(read_calibration(&p).unwrap(), m);
    }

    #[test]
    fn fusion_arithmetic() {
        let t = TrialList::new(vec![Trial::new("a", "b", None), Trial::new("c", "d", None)]).unwrap();
        let s1 = ScoreSet::from_trials(&t, vec![0.2, 0.8]).unwrap();
        let s2 = ScoreSet::from_trials(&t, vec![0.4, 0.6]).unwrap();
        assert_eq!(fuse(&[s1.clone()]).unwrap(), s1);
        assert_eq!(fuse(&[s1.clone(), s1.clone()]).unwrap(), s1);
        let f = fuse(&[s1.clone(), s2.clone()]).unwrap().scores();
        assert!((f[0] - 0.3).abs() < 1e-15 && (f[1] - 0.7).abs() < 1e-15);
        assert_eq!(fuse(&[s1.clone(), s2.clone()]).unwrap(), fuse(&[s2, s1.clone()]).unwrap());
        let other = TrialList::new(vec![Trial::new("a", "b", None), Trial::new("x", "d", None)]).unwrap();
        let bad = ScoreSet::from_trials(&other, vec![0.0, 0.0]).unwrap();
        assert!(matches!(fuse(&[s1, bad]), Err(Error::Alignment(_))));
    }

    proptest! {
        #[test]
        fn cosine_symmetric_scale_invariant(a in prop::collection::vec(-1.0f32..1.0, 6), b in prop::collection::vec(-1.0f32..1.0, 6), x in 0.1f32..10.0, y in 0.1f32..10.0) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
            let c = cosine(&a, &b).unwrap();
            prop_assert_eq!(c, cosine(&b, &a).unwrap());
            let sa: Vec<f32> = a.iter().map(|v| v * x).collect();
            let sb: Vec<f32> = b.iter().map(|v| v * y).collect();
            prop_assert!((cosine(&sa, &sb).unwrap() - c).abs() < 1e-6);
            prop_assert!((-1.0..=1.0).contains(&c));
        }

        #[test]
        fn calibrations_compose_affinely(w in prop::array::uniform4(-2.0f64..2.0), v in prop::array::uniform4(-2.0f64..2.0), s in -1.0f64..1.0, q in 0.5f64..20.0) {
            let m1 = CalibrationModel { w0: w[0], w1: w[1], w2: w[2], quality_mean: 3.0, quality_std: 1.5 + w[3].abs() };
            let m2 = CalibrationModel { w0: v[0], w1: v[1], w2: v[2], quality_mean: 3.0, quality_std: 1.5 + w[3].abs() };
            // m2(m1(s, q), q) is again affine in (s, q̂) with these coefficients.
            let composed = CalibrationModel {
                w0: m2.w0 + m2.w1 * m1.w0,
                w1: m2.w1 * m1.w1,
                w2: m2.w1 * m1.w2 + m2.w2,
                ..m1
            };
            let direct = m2.apply_one(m1.apply_one(s, q), q);
            prop_assert!((direct - composed.apply_one(s, q)).abs() < 1e-9);
        }
    }
}
