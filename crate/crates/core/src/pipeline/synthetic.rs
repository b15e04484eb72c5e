//! Planted-partition corpora and a synthetic embedder whose domain shift is
//! an explicit linear map that adaptation pulls toward the identity.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::embedder::{AdaptRequest, AffineHead, Embedder, LabeledUtterances};
use super::train::AdaptationData;
use super::PipelineConfig;
use crate::clustering::{KMeansParams, PseudoLabelSet};
use crate::corpus::{EmbeddingSet, Trial, TrialList};
use crate::error::{Error, Result};
use crate::seed::{rng_for, Rng};

fn gaussian(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_unit(rng: &mut Rng, dim: usize) -> Vec<f64> {
    let mut v = gaussian(rng, dim);
    normalize(&mut v);
    v
}

/// Unit vector orthogonal to `mean` (which must be unit length).
fn random_tangent(rng: &mut Rng, mean: &[f64]) -> Vec<f64> {
    let mut t = gaussian(rng, mean.len());
    let p = dot(&t, mean);
    t.iter_mut().zip(mean).for_each(|(x, m)| *x -= p * m);
    normalize(&mut t);
    t
}

/// Unit vectors whose pairwise angles are all at least `min_angle_deg`.
pub fn speaker_means(rng: &mut Rng, n: usize, dim: usize, min_angle_deg: f64) -> Result<Vec<Vec<f64>>> {
    if dim < 2 {
        return Err(Error::Config("planted corpus needs dim >= 2".into()));
    }
    let max_cos = min_angle_deg.to_radians().cos();
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut attempts = 0;
    while means.len() < n {
        attempts += 1;
        if attempts > 100 * n + 1000 {
            return Err(Error::Config(format!(
                "cannot place {n} speakers {min_angle_deg} degrees apart in {dim} dimensions"
            )));
        }
        let v = random_unit(rng, dim);
        if means.iter().all(|m| dot(m, &v) <= max_cos) {
            means.push(v);
        }
    }
    Ok(means)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedParams {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub dim: usize,
    pub max_intra_deg: f64,
    pub min_inter_deg: f64,
    pub seed: u64,
}

/// Unit embeddings `spkNNN-uttNNN` at a uniform angle in `[0, max_intra_deg]`
/// from their speaker mean, with the ground-truth speaker of every row.
pub fn planted_embeddings(params: &PlantedParams) -> Result<(EmbeddingSet, Vec<u32>)> {
    let mut rng = rng_for(params.seed, &["planted"]);
    let means = speaker_means(&mut rng, params.n_speakers, params.dim, params.min_inter_deg)?;
    let mut set = EmbeddingSet::new(params.dim)?;
    let mut truth = Vec::with_capacity(params.n_speakers * params.utts_per_speaker);
    for (s, mean) in means.iter().enumerate() {
        for u in 0..params.utts_per_speaker {
            let angle = rng.gen_range(0.0..=params.max_intra_deg).to_radians();
            let t = random_tangent(&mut rng, mean);
            let v: Vec<f32> = mean
                .iter()
                .zip(&t)
                .map(|(m, x)| (angle.cos() * m + angle.sin() * x) as f32)
                .collect();
            set.push(format!("spk{s:03}-utt{u:03}"), &v)?;
            truth.push(s as u32);
        }
    }
    Ok((set.l2_normalized()?, truth))
}

/// Pairwise F1 of a clustering against ground truth. Utterances in `truth`
/// but missing from `pred` count as singletons.
pub fn pairwise_f1(pred: &PseudoLabelSet, truth: &HashMap<String, u32>) -> f64 {
    let pairs = |n: usize| (n * n.saturating_sub(1) / 2) as f64;
    let mut joint: HashMap<(u32, u32), usize> = HashMap::new();
    let mut pred_sizes: HashMap<u32, usize> = HashMap::new();
    for (id, l) in pred.iter() {
        if let Some(&t) = truth.get(id) {
            *joint.entry((l, t)).or_default() += 1;
            *pred_sizes.entry(l).or_default() += 1;
        }
    }
    let mut truth_sizes: HashMap<u32, usize> = HashMap::new();
    for &t in truth.values() {
        *truth_sizes.entry(t).or_default() += 1;
    }
    let tp: f64 = joint.values().map(|&c| pairs(c)).sum();
    let pp: f64 = pred_sizes.values().map(|&c| pairs(c)).sum();
    let tt: f64 = truth_sizes.values().map(|&c| pairs(c)).sum();
    if tp == 0.0 {
        return 0.0;
    }
    let (p, r) = (tp / pp, tp / tt);
    2.0 * p * r / (p + r)
}

#[derive(Debug, Clone)]
struct Utterance {
    speaker: u32,
    sigma: f64,
    nuisance: Vec<f64>,
}

#[derive(Debug)]
struct World {
    dim: usize,
    seed: u64,
    means: Vec<Vec<f64>>,
    utterances: HashMap<String, Utterance>,
}

/// Representation `r = [s; n]`: a noisy unit speaker direction `s` and a
/// per-utterance nuisance `n`. The initial head `[cos θ I, -sin θ I]` leaks the
/// nuisance into the embedding; adaptation shrinks the head toward `[I, 0]`
/// by `1 - (1 - shrink) · F1`, where F1 scores the pseudo labels.
#[derive(Debug, Clone)]
pub struct SyntheticEmbedder {
    world: Arc<World>,
    head: AffineHead,
    reference: AffineHead,
    shrink: f64,
}

impl SyntheticEmbedder {
    /// Frobenius distance of the head from the unshifted map.
    pub fn shift_norm(&self) -> f64 {
        let w: f64 = self
            .head
            .weight
            .iter()
            .zip(&self.reference.weight)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let b: f64 = self.head.bias.iter().zip(&self.reference.bias).map(|(a, b)| (a - b) * (a - b)).sum();
        (w + b).sqrt()
    }

    pub fn speaker_of(&self, id: &str) -> Option<u32> {
        self.world.utterances.get(id).map(|u| u.speaker)
    }

    pub fn truth(&self) -> HashMap<String, u32> {
        self.world.utterances.iter().map(|(k, u)| (k.clone(), u.speaker)).collect()
    }
}

impl Embedder for SyntheticEmbedder {
    fn representation(&self, id: &str, view: u32) -> Result<Vec<f64>> {
        let utt = self
            .world
            .utterances
            .get(id)
            .ok_or_else(|| Error::UnknownUtterance(id.to_string()))?;
        let mut rng = rng_for(self.world.seed, &["view", id, &view.to_string()]);
        let mean = &self.world.means[utt.speaker as usize];
        let step = utt.sigma / ((self.world.dim - 1) as f64).sqrt();
        let t = gaussian(&mut rng, self.world.dim);
        let p = dot(&t, mean);
        let mut s: Vec<f64> = mean.iter().zip(&t).map(|(m, x)| m + step * (x - p * m)).collect();
        normalize(&mut s);
        s.extend_from_slice(&utt.nuisance);
        Ok(s)
    }

    fn head(&self) -> &AffineHead {
        &self.head
    }

    fn head_mut(&mut self) -> &mut AffineHead {
        &mut self.head
    }

    fn adapt(&self, request: &AdaptRequest<'_>) -> Result<Self> {
        let f1 = pairwise_f1(request.pseudo, &self.truth_of(request.pseudo));
        let s = 1.0 - (1.0 - self.shrink) * f1;
        let mut out = self.clone();
        for (w, r) in out.head.weight.iter_mut().zip(&self.reference.weight) {
            *w = r + s * (*w - r);
        }
        for (b, r) in out.head.bias.iter_mut().zip(&self.reference.bias) {
            *b = r + s * (*b - r);
        }
        Ok(out)
    }
}

impl SyntheticEmbedder {
    /// Ground truth restricted to the utterances the clustering saw.
    fn truth_of(&self, pred: &PseudoLabelSet) -> HashMap<String, u32> {
        pred.ids
            .iter()
            .chain(&pred.removed)
            .filter_map(|id| self.speaker_of(id).map(|s| (id.clone(), s)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    pub dim: usize,
    pub target_speakers: usize,
    pub target_utts: usize,
    pub source_speakers: usize,
    pub source_utts: usize,
    pub labeled_target_speakers: usize,
    pub labeled_target_utts: usize,
    pub validation_speakers: usize,
    pub validation_utts: usize,
    pub intra_sigma_deg: f64,
    /// Validation utterances are noisier, like short test segments.
    pub validation_sigma_deg: f64,
    pub min_inter_deg: f64,
    pub shift_deg: f64,
    pub nuisance_norm: f64,
    pub bias_norm: f64,
    pub shrink: f64,
    pub seed: u64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            dim: 64,
            target_speakers: 20,
            target_utts: 40,
            source_speakers: 20,
            source_utts: 20,
            labeled_target_speakers: 5,
            labeled_target_utts: 10,
            validation_speakers: 20,
            validation_utts: 10,
            intra_sigma_deg: 5.0,
            validation_sigma_deg: 70.0,
            min_inter_deg: 45.0,
            shift_deg: 40.0,
            nuisance_norm: 1.0,
            bias_norm: 0.2,
            shrink: 0.5,
            seed: 7,
        }
    }
}

impl ScenarioParams {
    /// Pipeline settings sized for this scenario: candidates `{G/2, G, 2G}`
    /// for `G` target speakers and `k = 10 G`. Other fields come from `base`.
    pub fn pipeline_config(&self, base: &PipelineConfig) -> PipelineConfig {
        let g = self.target_speakers.max(2);
        PipelineConfig {
            kmeans: KMeansParams {
                k: 10 * g,
                batch_size: 256,
                ..base.kmeans
            },
            ahc_candidates: vec![g / 2, g, 2 * g],
            batch_size: 32,
            ..base.clone()
        }
    }
}

/// A complete synthetic adaptation problem.
#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub embedder: SyntheticEmbedder,
    pub data: AdaptationData,
    /// All pairs of validation utterances.
    pub validation: TrialList,
    pub truth: HashMap<String, u32>,
}

pub fn synthetic_scenario(params: &ScenarioParams) -> Result<SyntheticScenario> {
    if !(0.0..1.0).contains(&params.shrink) {
        return Err(Error::Config(format!("shrink factor {} outside [0, 1)", params.shrink)));
    }
    let d = params.dim;
    let mut rng = rng_for(params.seed, &["scenario"]);
    let groups = [
        ("src", params.source_speakers, params.source_utts, params.intra_sigma_deg, false),
        ("tgt", params.target_speakers, params.target_utts, params.intra_sigma_deg, true),
        (
            "lab",
            params.labeled_target_speakers,
            params.labeled_target_utts,
            params.intra_sigma_deg,
            true,
        ),
        (
            "val",
            params.validation_speakers,
            params.validation_utts,
            params.validation_sigma_deg,
            true,
        ),
    ];
    let total: usize = groups.iter().map(|g| g.1).sum();
    let means = speaker_means(&mut rng, total, d, params.min_inter_deg)?;

    let mut utterances = HashMap::new();
    let mut lists: Vec<Vec<(String, u32)>> = Vec::new();
    let mut next_speaker = 0u32;
    for &(prefix, n_spk, n_utt, sigma, shifted) in &groups {
        let mut list = Vec::new();
        for s in 0..n_spk {
            for u in 0..n_utt {
                let id = format!("{prefix}{s:03}-{u:03}");
                let nuisance = if shifted {
                    let mut n = random_unit(&mut rng, d);
                    n.iter_mut().for_each(|x| *x *= params.nuisance_norm);
                    n
                } else {
                    vec![0.0; d]
                };
                utterances.insert(
                    id.clone(),
                    Utterance {
                        speaker: next_speaker,
                        sigma: sigma.to_radians(),
                        nuisance,
                    },
                );
                list.push((id, s as u32));
            }
            next_speaker += 1;
        }
        lists.push(list);
    }

    let (c, sn) = (params.shift_deg.to_radians().cos(), params.shift_deg.to_radians().sin());
    let mut weight = vec![0.0; d * 2 * d];
    let mut reference = vec![0.0; d * 2 * d];
    for i in 0..d {
        weight[i * 2 * d + i] = c;
        weight[i * 2 * d + d + i] = -sn;
        reference[i * 2 * d + i] = 1.0;
    }
    let mut bias = random_unit(&mut rng, d);
    bias.iter_mut().for_each(|x| *x *= params.bias_norm);
    let world = World {
        dim: d,
        seed: params.seed,
        means,
        utterances,
    };
    let embedder = SyntheticEmbedder {
        world: Arc::new(world),
        head: AffineHead::new(d, 2 * d, weight, bias)?,
        reference: AffineHead::new(d, 2 * d, reference, vec![0.0; d])?,
        shrink: params.shrink,
    };

    let labeled = |l: &[(String, u32)]| LabeledUtterances::new(l.iter().map(|x| x.0.clone()).collect(), l.iter().map(|x| x.1).collect());
    let data = AdaptationData {
        source: labeled(&lists[0])?,
        target_unlabeled: lists[1].iter().map(|x| x.0.clone()).collect(),
        target_labeled: labeled(&lists[2])?,
    };
    let val = &lists[3];
    let mut trials = Vec::new();
    for i in 0..val.len() {
        for j in i + 1..val.len() {
            trials.push(Trial::new(val[i].0.clone(), val[j].0.clone(), Some(val[i].1 == val[j].1)));
        }
    }
    let truth = embedder.truth();
    Ok(SyntheticScenario {
        embedder,
        data,
        validation: TrialList::new(trials)?,
        truth,
    })
}
