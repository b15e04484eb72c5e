//! Head-only trainers: the joint first-stage objective and supervised
//! sub-center training on pseudo labels.

use rand::Rng as _;
use rayon::prelude::*;

use super::embedder::{AdaptRequest, AffineHead, Embedder, LabeledUtterances};
use crate::error::{Error, Result};
use crate::losses::{joint_loss, subcenter_aam_softmax, ClassifierHead, JointWeights, LabeledBatch, TripletBatch};
use crate::schedule::{lr_at, margin_at, sgd_step, ScheduleState, TrainPhaseConfig};
use crate::seed::{rng_for, Rng};

/// Labeled source data plus unlabeled and labeled target data.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdaptationData {
    pub source: LabeledUtterances,
    pub target_unlabeled: Vec<String>,
    pub target_labeled: LabeledUtterances,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Config {
    pub steps: usize,
    pub batch_size: usize,
    pub phase: TrainPhaseConfig,
    pub weights: JointWeights,
    pub seed: u64,
}

/// Joint loss on the first batch before and after training, plus the loss of
/// every training step.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Report {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub losses: Vec<f64>,
}

fn representations<E: Embedder>(embedder: &E, ids: &[String], view: u32) -> Result<Vec<Vec<f64>>> {
    ids.par_iter().map(|id| embedder.representation(id, view)).collect()
}

/// Class-mean initialization of a classifier head, with a small seeded
/// perturbation per extra sub-center so that sub-centers can diverge.
fn init_classifier(
    embeddings: &[Vec<f64>],
    labels: &[u32],
    n_classes: usize,
    n_subcenters: usize,
    rng: &mut Rng,
) -> Result<ClassifierHead> {
    let dim = embeddings.first().map_or(0, Vec::len);
    let mut means = vec![0.0; n_classes * dim];
    for (e, &l) in embeddings.iter().zip(labels) {
        for (m, x) in means[l as usize * dim..(l as usize + 1) * dim].iter_mut().zip(e) {
            *m += x;
        }
    }
    let mut weights = Vec::with_capacity(n_classes * n_subcenters * dim);
    for c in 0..n_classes {
        let mean = &means[c * dim..(c + 1) * dim];
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        for sub in 0..n_subcenters {
            for &m in mean {
                let base = if norm > 0.0 { m / norm } else { 0.0 };
                let jitter = if sub == 0 && norm > 0.0 { 0.0 } else { 0.01 * rng.gen_range(-1.0..1.0) };
                weights.push(base + jitter);
            }
        }
    }
    ClassifierHead::new(n_classes, n_subcenters, dim, weights)
}

/// Fresh classifier head with unit-norm random rows.
fn random_classifier(n_classes: usize, dim: usize, rng: &mut Rng) -> Result<ClassifierHead> {
    let mut weights: Vec<f64> = (0..n_classes * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for row in weights.chunks_exact_mut(dim.max(1)) {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= n);
    }
    ClassifierHead::new(n_classes, 1, dim, weights)
}

fn forward_rows(head: &AffineHead, reps: &[&[f64]]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(reps.len() * head.out_dim);
    for r in reps {
        out.extend(head.forward(r)?);
    }
    Ok(out)
}

struct HeadGrads {
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl HeadGrads {
    fn zeros(head: &AffineHead) -> Self {
        HeadGrads {
            weight: vec![0.0; head.weight.len()],
            bias: vec![0.0; head.bias.len()],
        }
    }

    fn add(&mut self, head: &AffineHead, reps: &[&[f64]], grads: &[f64]) {
        for (r, g) in reps.iter().zip(grads.chunks_exact(head.out_dim)) {
            head.accumulate(r, g, &mut self.weight, &mut self.bias);
        }
    }

    fn apply(&self, head: &mut AffineHead, lr: f64, weight_decay: f64) -> Result<()> {
        sgd_step(&mut head.weight, &self.weight, lr, weight_decay)?;
        sgd_step(&mut head.bias, &self.bias, lr, weight_decay)
    }
}

struct Stage1Batch {
    source: Vec<usize>,
    triplets: Vec<(usize, usize)>,
    target: Vec<usize>,
}

fn draw_batch(rng: &mut Rng, data: &AdaptationData, size: usize) -> Stage1Batch {
    let n_unl = data.target_unlabeled.len();
    Stage1Batch {
        source: (0..size).map(|_| rng.gen_range(0..data.source.len())).collect(),
        triplets: (0..size)
            .map(|_| {
                let u = rng.gen_range(0..n_unl);
                let v = (u + rng.gen_range(1..n_unl)) % n_unl;
                (u, v)
            })
            .collect(),
        target: (0..size).map(|_| rng.gen_range(0..data.target_labeled.len())).collect(),
    }
}

struct Stage1State<'a, E> {
    embedder: E,
    data: &'a AdaptationData,
    source_reps: Vec<Vec<f64>>,
    target_reps: Vec<Vec<f64>>,
    source_head: ClassifierHead,
    target_head: ClassifierHead,
    weights: JointWeights,
}

impl<E: Embedder> Stage1State<'_, E> {
    fn step(&mut self, batch: &Stage1Batch, update: Option<(f64, f64)>) -> Result<f64> {
        let unl = &self.data.target_unlabeled;
        let src: Vec<&[f64]> = batch.source.iter().map(|&i| self.source_reps[i].as_slice()).collect();
        let tgt: Vec<&[f64]> = batch.target.iter().map(|&i| self.target_reps[i].as_slice()).collect();
        let trip_reps = batch
            .triplets
            .par_iter()
            .map(|&(u, v)| {
                Ok((
                    self.embedder.representation(&unl[u], 1)?,
                    self.embedder.representation(&unl[u], 2)?,
                    self.embedder.representation(&unl[v], 1)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let anc: Vec<&[f64]> = trip_reps.iter().map(|t| t.0.as_slice()).collect();
        let pos: Vec<&[f64]> = trip_reps.iter().map(|t| t.1.as_slice()).collect();
        let neg: Vec<&[f64]> = trip_reps.iter().map(|t| t.2.as_slice()).collect();

        let head = self.embedder.head();
        let (e_src, e_tgt) = (forward_rows(head, &src)?, forward_rows(head, &tgt)?);
        let (e_anc, e_pos, e_neg) = (
            forward_rows(head, &anc)?,
            forward_rows(head, &pos)?,
            forward_rows(head, &neg)?,
        );
        let src_labels: Vec<usize> = batch.source.iter().map(|&i| self.data.source.labels[i] as usize).collect();
        let tgt_labels: Vec<usize> = batch
            .target
            .iter()
            .map(|&i| self.data.target_labeled.labels[i] as usize)
            .collect();
        let out = joint_loss(
            LabeledBatch {
                embeddings: &e_src,
                labels: &src_labels,
            },
            TripletBatch {
                anchor: &e_anc,
                positive: &e_pos,
                negative: &e_neg,
            },
            LabeledBatch {
                embeddings: &e_tgt,
                labels: &tgt_labels,
            },
            &self.source_head,
            &self.target_head,
            &self.weights,
        )?;
        if let Some((lr, wd)) = update {
            let mut g = HeadGrads::zeros(head);
            g.add(head, &src, &out.grad_source);
            g.add(head, &anc, &out.grad_anchor);
            g.add(head, &pos, &out.grad_positive);
            g.add(head, &neg, &out.grad_negative);
            g.add(head, &tgt, &out.grad_target);
            g.apply(self.embedder.head_mut(), lr, wd)?;
            sgd_step(&mut self.source_head.weights, &out.grad_source_head, lr, wd)?;
            sgd_step(&mut self.target_head.weights, &out.grad_target_head, lr, wd)?;
        }
        Ok(out.loss)
    }

    fn set_margin(&mut self, m: f64) {
        self.source_head.margin = m;
        self.target_head.margin = m;
    }
}

/// First stage: source AAM, target triplet and labeled-target AAM trained
/// jointly through the embedder's affine head.
pub fn stage1_joint_adapt<E: Embedder>(
    embedder: &E,
    data: &AdaptationData,
    config: &Stage1Config,
) -> Result<(E, Stage1Report)> {
    config.phase.validate()?;
    if data.source.is_empty() {
        return Err(Error::EmptyData("no labeled source utterances".into()));
    }
    if data.target_unlabeled.len() < 2 {
        return Err(Error::EmptyData("need at least two unlabeled target utterances".into()));
    }
    if data.target_labeled.is_empty() {
        return Err(Error::EmptyData("no labeled target utterances".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut rng = rng_for(config.seed, &["stage1"]);
    let source_reps = representations(embedder, &data.source.ids, 0)?;
    let target_reps = representations(embedder, &data.target_labeled.ids, 0)?;
    let dim = embedder.dim();
    let source_head = random_classifier(data.source.n_classes, dim, &mut rng)?;
    let target_head = random_classifier(data.target_labeled.n_classes, dim, &mut rng)?;
    let mut state = Stage1State {
        embedder: embedder.clone(),
        data,
        source_reps,
        target_reps,
        source_head,
        target_head,
        weights: config.weights,
    };

    let corpus = data.source.len() + data.target_unlabeled.len() + data.target_labeled.len();
    let final_margin = margin_at(
        &config.phase,
        ScheduleState::at_batch(config.steps as u64, config.batch_size, corpus).epoch_progress,
    );
    let probe = draw_batch(&mut rng, data, config.batch_size);
    state.set_margin(final_margin);
    let initial_loss = state.step(&probe, None)?;

    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = if step == 0 {
            Stage1Batch {
                source: probe.source.clone(),
                triplets: probe.triplets.clone(),
                target: probe.target.clone(),
            }
        } else {
            draw_batch(&mut rng, data, config.batch_size)
        };
        let sched = ScheduleState::at_batch(step as u64, config.batch_size, corpus);
        state.set_margin(margin_at(&config.phase, sched.epoch_progress));
        let lr = lr_at(&config.phase, sched.batch_index);
        losses.push(state.step(&batch, Some((lr, config.phase.weight_decay)))?);
    }
    state.set_margin(final_margin);
    let final_loss = state.step(&probe, None)?;
    Ok((
        state.embedder,
        Stage1Report {
            initial_loss,
            final_loss,
            losses,
        },
    ))
}

/// Sub-center AAM training of the affine head on the union of source speakers
/// and pseudo-speakers (pseudo labels are offset past the source labels).
pub fn train_supervised<E: Embedder>(embedder: &E, request: &AdaptRequest<'_>) -> Result<E> {
    request.phase.validate()?;
    let n_src = request.source.n_classes;
    let mut ids: Vec<String> = request.source.ids.clone();
    let mut labels: Vec<u32> = request.source.labels.clone();
    for (id, l) in request.pseudo.iter() {
        ids.push(id.to_string());
        labels.push(l + n_src as u32);
    }
    if ids.is_empty() {
        return Err(Error::EmptyData("no labeled utterances to adapt on".into()));
    }
    if request.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let n_classes = n_src + request.pseudo.n_speakers;
    let mut rng = rng_for(request.seed, &["adapt"]);
    let reps = representations(embedder, &ids, 0)?;
    let emb: Vec<Vec<f64>> = reps.iter().map(|r| embedder.head().forward(r)).collect::<Result<_>>()?;
    let mut classifier = init_classifier(&emb, &labels, n_classes, 2, &mut rng)?;
    let mut out = embedder.clone();
    for step in 0..request.steps {
        let sched = ScheduleState::at_batch(step as u64, request.batch_size, ids.len());
        classifier.margin = margin_at(request.phase, sched.epoch_progress);
        let lr = lr_at(request.phase, sched.batch_index);
        let idx: Vec<usize> = (0..request.batch_size).map(|_| rng.gen_range(0..ids.len())).collect();
        let batch: Vec<&[f64]> = idx.iter().map(|&i| reps[i].as_slice()).collect();
        let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i] as usize).collect();
        let e = forward_rows(out.head(), &batch)?;
        let o = subcenter_aam_softmax(&e, &batch_labels, &classifier)?;
        let mut g = HeadGrads::zeros(out.head());
        g.add(out.head(), &batch, &o.grad_embeddings);
        g.apply(out.head_mut(), lr, request.phase.weight_decay)?;
        sgd_step(&mut classifier.weights, &o.grad_weights, lr, request.phase.weight_decay)?;
    }
    Ok(out)
}
