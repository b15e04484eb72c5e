//! Two-stage adaptation loop: joint first-stage training, then rounds of
//! clustering, pseudo-labeling and supervised adaptation until the
//! validation EER stops improving.

mod embedder;
mod synthetic;
mod train;

pub use embedder::{AdaptRequest, AffineHead, Embedder, LabeledUtterances, ResUnetEmbedder};
pub use synthetic::{
    pairwise_f1, planted_embeddings, speaker_means, synthetic_scenario, PlantedParams, ScenarioParams,
    SyntheticEmbedder, SyntheticScenario,
};
pub use train::{stage1_joint_adapt, train_supervised, AdaptationData, Stage1Config, Stage1Report};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{apply_calibration, fuse, score_trials, sub_mean, train_calibration, CalibrationParams, Durations};
use crate::clustering::{cluster_cascade, CascadeParams, KMeansParams, Linkage, PseudoLabelSet};
use crate::corpus::{create_writer, finish_writer, ScoreSet, TrialList};
use crate::error::{Error, Result};
use crate::losses::JointWeights;
use crate::metrics::{det_curve, eer_from_curve, min_dcf_from_curve, DcfParams};
use crate::schedule::{Phase, Track, TrainPhaseConfig};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// `k` is clamped to the number of target utterances.
    pub kmeans: KMeansParams,
    pub ahc_candidates: Vec<usize>,
    pub linkage: Linkage,
    pub min_count: usize,
    pub max_rounds: usize,
    /// Absolute EER improvement (as a fraction) below which the loop stops.
    pub converge_epsilon: f64,
    /// Sweep the candidates every round instead of only the first.
    pub reselect_each_round: bool,
    pub seed: u64,
    pub stage1_steps: usize,
    pub adapt_steps: usize,
    pub batch_size: usize,
    pub triplet_margin: f64,
    pub stage1_phase: TrainPhaseConfig,
    pub adapt_phase: TrainPhaseConfig,
    pub dcf: DcfParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let adapt = TrainPhaseConfig::preset(Phase::AdaptationFinetune, Track::Track1);
        PipelineConfig {
            kmeans: KMeansParams::default(),
            ahc_candidates: vec![1000, 2000, 3000, 4000],
            linkage: Linkage::default(),
            min_count: 10,
            max_rounds: 3,
            converge_epsilon: 0.001,
            reselect_each_round: false,
            seed: 0,
            stage1_steps: 500,
            adapt_steps: 200,
            batch_size: 128,
            triplet_margin: 0.2,
            stage1_phase: adapt,
            adapt_phase: adapt,
            dcf: DcfParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ahc_candidates.is_empty() || self.ahc_candidates.contains(&0) {
            return Err(Error::Config("cluster-count candidates must be non-empty and positive".into()));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be at least 1".into()));
        }
        if self.min_count == 0 || self.batch_size == 0 {
            return Err(Error::Config("min_count and batch_size must be positive".into()));
        }
        if !(self.converge_epsilon >= 0.0) {
            return Err(Error::Config("converge_epsilon must be non-negative".into()));
        }
        self.stage1_phase.validate()?;
        self.adapt_phase.validate()?;
        self.dcf.validate()
    }

    pub fn stage1(&self) -> Stage1Config {
        Stage1Config {
            steps: self.stage1_steps,
            batch_size: self.batch_size,
            phase: self.stage1_phase,
            weights: JointWeights {
                triplet_margin: self.triplet_margin,
                ..Default::default()
            },
            seed: derive_seed(self.seed, &["stage1"]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub n_clusters: usize,
    /// Pseudo-speakers left after filtering.
    pub n_speakers: usize,
    /// Fraction in [0, 1].
    pub eer: f64,
    pub min_dcf: f64,
}

/// A report plus the pseudo labels the round adapted on.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub report: RoundReport,
    pub labels: PseudoLabelSet,
}

const ROUND_LOG_HEADER: &str = "round\tn_clusters\tn_speakers\teer_percent\tmin_dcf";

pub fn write_round_log(reports: &[RoundReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create_writer(path)?;
    let mut body = format!("{ROUND_LOG_HEADER}\n");
    for r in reports {
        body.push_str(&format!(
            "{}\t{}\t{}\t{:.4}\t{:.4}\n",
            r.round,
            r.n_clusters,
            r.n_speakers,
            100.0 * r.eer,
            r.min_dcf
        ));
    }
    w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    finish_writer(w, path)
}

/// EER and MinDCF of cosine scores on mean-subtracted validation embeddings.
pub fn evaluate<E: Embedder>(embedder: &E, validation: &TrialList, dcf: &DcfParams) -> Result<(f64, f64)> {
    let labels = validation
        .labels()
        .ok_or_else(|| Error::Config("validation trials must be labeled".into()))?;
    let mut ids: Vec<String> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for t in validation.trials() {
        for id in [&t.enroll, &t.test] {
            if seen.insert(id.clone()) {
                ids.push(id.clone());
            }
        }
    }
    let set = embedder.extract(&ids)?;
    let centered = sub_mean(&set, &set)?;
    let scores = score_trials(&centered, validation)?;
    let curve = det_curve(&scores.scores(), &labels)?;
    Ok((eer_from_curve(&curve).eer, min_dcf_from_curve(&curve, dcf)))
}

/// One cluster, filter, adapt and evaluate pass at a fixed cluster count.
pub fn run_round<E: Embedder>(
    embedder: &E,
    data: &AdaptationData,
    validation: &TrialList,
    config: &PipelineConfig,
    round: usize,
    n_clusters: usize,
) -> Result<(E, RoundOutcome)> {
    if data.target_unlabeled.is_empty() {
        return Err(Error::EmptyData("no unlabeled target utterances".into()));
    }
    let round_tag = round.to_string();
    let set = embedder.extract(&data.target_unlabeled)?.l2_normalized()?;
    let cascade = CascadeParams {
        kmeans: KMeansParams {
            k: config.kmeans.k.min(set.len()),
            seed: derive_seed(config.seed, &["kmeans", &round_tag]),
            ..config.kmeans
        },
        n_clusters,
        min_count: config.min_count,
        linkage: config.linkage,
    };
    let (_, labels) = cluster_cascade(&set, &cascade)?;
    let request = AdaptRequest {
        pseudo: &labels,
        source: &data.source,
        phase: &config.adapt_phase,
        steps: config.adapt_steps,
        batch_size: config.batch_size,
        seed: derive_seed(config.seed, &["adapt", &round_tag, &n_clusters.to_string()]),
    };
    let adapted = embedder.adapt(&request)?;
    let (eer, min_dcf) = evaluate(&adapted, validation, &config.dcf)?;
    let report = RoundReport {
        round,
        n_clusters,
        n_speakers: labels.n_speakers,
        eer,
        min_dcf,
    };
    Ok((adapted, RoundOutcome { report, labels }))
}

/// Index of the best report: lowest EER, then lowest MinDCF, then fewest
/// clusters.
fn best_index(reports: &[RoundReport]) -> Option<usize> {
    (0..reports.len()).min_by(|&a, &b| {
        let (x, y) = (&reports[a], &reports[b]);
        x.eer
            .total_cmp(&y.eer)
            .then(x.min_dcf.total_cmp(&y.min_dcf))
            .then(x.n_clusters.cmp(&y.n_clusters))
    })
}

/// Evaluates every candidate and picks the best one.
pub fn select_cluster_count<F>(candidates: &[usize], mut evaluate: F) -> Result<(usize, Vec<RoundReport>)>
where
    F: FnMut(usize) -> Result<RoundReport>,
{
    if candidates.is_empty() {
        return Err(Error::Config("no cluster-count candidates".into()));
    }
    let reports = candidates.iter().map(|&n| evaluate(n)).collect::<Result<Vec<_>>>()?;
    let best = best_index(&reports).expect("non-empty");
    debug_assert!(reports.iter().all(|r| reports[best].eer <= r.eer));
    Ok((reports[best].n_clusters, reports))
}

/// Runs one round per candidate from the same starting embedder and keeps
/// the winner's adapted embedder. Returns every candidate's outcome in
/// candidate order and the winner's index.
pub fn sweep_cluster_counts<E: Embedder>(
    embedder: &E,
    data: &AdaptationData,
    validation: &TrialList,
    config: &PipelineConfig,
    round: usize,
) -> Result<(E, Vec<RoundOutcome>, usize)> {
    let mut results: Vec<(E, RoundOutcome)> = Vec::new();
    let (best_n, _) = select_cluster_count(&config.ahc_candidates, |n| {
        let r = run_round(embedder, data, validation, config, round, n)?;
        let report = r.1.report;
        results.push(r);
        Ok(report)
    })?;
    let best = config.ahc_candidates.iter().position(|&n| n == best_n).expect("selected candidate");
    let outcomes = results.iter().map(|r| r.1.clone()).collect();
    Ok((results.swap_remove(best).0, outcomes, best))
}

/// True when the EER gained less than `epsilon` over the previous round.
pub fn converged(previous_eer: f64, current_eer: f64, epsilon: f64) -> bool {
    previous_eer - current_eer < epsilon
}

/// Calls `round(r)` for `r = 1..=max_rounds` until the EER improvement
/// drops below `epsilon`.
pub fn run_rounds<F>(max_rounds: usize, epsilon: f64, mut round: F) -> Result<Vec<RoundReport>>
where
    F: FnMut(usize) -> Result<RoundReport>,
{
    let mut reports: Vec<RoundReport> = Vec::new();
    for r in 1..=max_rounds {
        let rep = round(r)?;
        let stop = reports.last().is_some_and(|prev| converged(prev.eer, rep.eer, epsilon));
        reports.push(rep);
        if stop {
            break;
        }
    }
    Ok(reports)
}

/// Repeated rounds; the cluster count is chosen by a sweep in round 1 (or
/// every round when `reselect_each_round` is set).
pub fn run_until_converged<E: Embedder>(
    embedder: &E,
    data: &AdaptationData,
    validation: &TrialList,
    config: &PipelineConfig,
) -> Result<(E, Vec<RoundOutcome>)> {
    config.validate()?;
    let mut current = embedder.clone();
    let mut n_clusters = config.ahc_candidates[0];
    let mut outcomes: Vec<RoundOutcome> = Vec::new();
    run_rounds(config.max_rounds, config.converge_epsilon, |r| {
        let outcome = if r == 1 || config.reselect_each_round {
            let (next, mut all, best) = sweep_cluster_counts(&current, data, validation, config, r)?;
            n_clusters = all[best].report.n_clusters;
            current = next;
            all.swap_remove(best)
        } else {
            let (next, o) = run_round(&current, data, validation, config, r, n_clusters)?;
            current = next;
            o
        };
        let report = outcome.report;
        log::info!(
            "round {r}: {} clusters, {} pseudo-speakers, EER {:.3}%, MinDCF {:.4}",
            report.n_clusters,
            report.n_speakers,
            100.0 * report.eer,
            report.min_dcf
        );
        outcomes.push(outcome);
        Ok(report)
    })?;
    Ok((current, outcomes))
}

/// Outcome of the built-in synthetic scenario.
#[derive(Debug, Clone)]
pub struct DemoRun {
    pub stage1: Option<Stage1Report>,
    pub rounds: Vec<RoundOutcome>,
    /// Label purity against ground truth, one per round.
    pub purity: Vec<f64>,
    pub embedder: SyntheticEmbedder,
}

/// Stage 1 (unless skipped) then the round loop on a planted-partition
/// scenario.
pub fn run_synthetic_demo(params: &ScenarioParams, config: &PipelineConfig, skip_stage1: bool) -> Result<DemoRun> {
    let sc = synthetic_scenario(params)?;
    let (start, stage1) = if skip_stage1 {
        (sc.embedder.clone(), None)
    } else {
        let (e, r) = stage1_joint_adapt(&sc.embedder, &sc.data, &config.stage1())?;
        (e, Some(r))
    };
    let (embedder, rounds) = run_until_converged(&start, &sc.data, &sc.validation, config)?;
    let purity = rounds
        .iter()
        .map(|o| {
            let truth: Vec<u32> = o.labels.ids.iter().map(|id| sc.truth[id]).collect();
            crate::clustering::label_purity(&o.labels.labels, &truth)
        })
        .collect();
    Ok(DemoRun {
        stage1,
        rounds,
        purity,
        embedder,
    })
}

/// Scores of one system on the evaluation trials and on its calibration
/// trials.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemScores {
    pub eval: ScoreSet,
    pub calibration: ScoreSet,
    pub calibration_labels: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub scores: ScoreSet,
    pub eer: f64,
    pub min_dcf: f64,
}

/// Calibrates each system on its own calibration trials, averages the
/// calibrated evaluation scores and evaluates the result.
pub fn fuse_systems(
    systems: &[SystemScores],
    eval_labels: &[bool],
    durations: &Durations,
    calibration: &CalibrationParams,
    dcf: &DcfParams,
) -> Result<FusionResult> {
    if systems.is_empty() {
        return Err(Error::EmptyData("no systems to fuse".into()));
    }
    let calibrated = systems
        .iter()
        .map(|s| {
            let model = train_calibration(&s.calibration, &s.calibration_labels, durations, calibration)?;
            apply_calibration(&model, &s.eval, durations)
        })
        .collect::<Result<Vec<_>>>()?;
    let fused = fuse(&calibrated)?;
    let curve = det_curve(&fused.scores(), eval_labels)?;
    Ok(FusionResult {
        eer: eer_from_curve(&curve).eer,
        min_dcf: min_dcf_from_curve(&curve, dcf),
        scores: fused,
    })
}
