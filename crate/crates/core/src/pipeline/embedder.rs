use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::clustering::PseudoLabelSet;
use crate::corpus::EmbeddingSet;
use crate::dsp::{crop, FeatureMatrix};
use crate::error::{Error, Result};
use crate::resunet::ResUnet;
use crate::schedule::TrainPhaseConfig;
use crate::seed::rng_for;

/// Trainable affine map `e = W r + b` on top of a frozen representation.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineHead {
    pub out_dim: usize,
    pub in_dim: usize,
    /// `out_dim × in_dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl AffineHead {
    pub fn new(out_dim: usize, in_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != out_dim * in_dim || bias.len() != out_dim || out_dim == 0 {
            return Err(Error::Shape(format!(
                "affine head {out_dim} x {in_dim} with {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(AffineHead {
            out_dim,
            in_dim,
            weight,
            bias,
        })
    }

    pub fn forward(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.in_dim {
            return Err(Error::Shape(format!("input of {} for affine head of {}", r.len(), self.in_dim)));
        }
        Ok(self
            .weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(r).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect())
    }

    /// Adds `g ⊗ r` to `grad_w` and `g` to `grad_b`.
    pub(crate) fn accumulate(&self, r: &[f64], g: &[f64], grad_w: &mut [f64], grad_b: &mut [f64]) {
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            grad_b[o] += go;
            for (gw, &x) in grad_w[o * self.in_dim..(o + 1) * self.in_dim].iter_mut().zip(r) {
                *gw += go * x;
            }
        }
    }
}

/// Utterance ids with class labels in `0..n_classes`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledUtterances {
    pub ids: Vec<String>,
    pub labels: Vec<u32>,
    pub n_classes: usize,
}

impl LabeledUtterances {
    pub fn new(ids: Vec<String>, labels: Vec<u32>) -> Result<Self> {
        if ids.len() != labels.len() {
            return Err(Error::Shape(format!("{} ids for {} labels", ids.len(), labels.len())));
        }
        let n_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
        Ok(LabeledUtterances { ids, labels, n_classes })
    }

    /// Numbers speakers by first appearance.
    pub fn from_speakers<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut index: HashMap<&str, u32> = HashMap::new();
        let mut out = LabeledUtterances::default();
        for (id, spk) in pairs {
            let next = index.len() as u32;
            let l = *index.entry(spk).or_insert(next);
            out.ids.push(id.to_string());
            out.labels.push(l);
        }
        out.n_classes = index.len();
        out
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Inputs to one supervised adaptation.
#[derive(Debug, Clone, Copy)]
pub struct AdaptRequest<'a> {
    pub pseudo: &'a PseudoLabelSet,
    pub source: &'a LabeledUtterances,
    pub phase: &'a TrainPhaseConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// A speaker embedder split into a frozen representation and a trainable
/// affine head. `view` 0 is the canonical whole-utterance input; other views
/// are seeded random crops or perturbations of the same utterance.
pub trait Embedder: Clone + Send + Sync + Sized {
    fn representation(&self, id: &str, view: u32) -> Result<Vec<f64>>;

    fn head(&self) -> &AffineHead;

    fn head_mut(&mut self) -> &mut AffineHead;

    fn dim(&self) -> usize {
        self.head().out_dim
    }

    fn embed(&self, id: &str, view: u32) -> Result<Vec<f64>> {
        self.head().forward(&self.representation(id, view)?)
    }

    /// View-0 embeddings for `ids`, in order.
    fn extract(&self, ids: &[String]) -> Result<EmbeddingSet> {
        let rows = ids
            .par_iter()
            .map(|id| self.embed(id, 0))
            .collect::<Result<Vec<_>>>()?;
        let mut set = EmbeddingSet::new(self.dim())?;
        for (id, row) in ids.iter().zip(rows) {
            let v: Vec<f32> = row.iter().map(|&x| x as f32).collect();
            set.push(id.clone(), &v)?;
        }
        Ok(set)
    }

    /// Supervised adaptation on source labels plus pseudo labels.
    fn adapt(&self, request: &AdaptRequest<'_>) -> Result<Self> {
        super::train::train_supervised(self, request)
    }
}

/// ResUnet-backed embedder: the convolutional stack and pooling are frozen,
/// the final affine layer is the trainable head.
#[derive(Debug, Clone)]
pub struct ResUnetEmbedder {
    net: Arc<ResUnet>,
    features: Arc<HashMap<String, FeatureMatrix>>,
    crop_frames: usize,
    seed: u64,
    head: AffineHead,
}

impl ResUnetEmbedder {
    pub fn new(net: ResUnet, features: HashMap<String, FeatureMatrix>, crop_frames: usize, seed: u64) -> Result<Self> {
        let cfg = *net.config();
        let head = AffineHead::new(
            cfg.embed_dim,
            cfg.pooled_dim(),
            net.affine.weight.iter().map(|&w| f64::from(w)).collect(),
            net.affine.bias.iter().map(|&b| f64::from(b)).collect(),
        )?;
        Ok(ResUnetEmbedder {
            net: Arc::new(net),
            features: Arc::new(features),
            crop_frames: crop_frames.max(4),
            seed,
            head,
        })
    }

    pub fn network(&self) -> &ResUnet {
        &self.net
    }

    /// The network with the adapted head written back into its affine layer.
    pub fn to_network(&self) -> ResUnet {
        let mut net = (*self.net).clone();
        net.affine.weight = self.head.weight.iter().map(|&w| w as f32).collect();
        net.affine.bias = self.head.bias.iter().map(|&b| b as f32).collect();
        net
    }
}

impl Embedder for ResUnetEmbedder {
    fn representation(&self, id: &str, view: u32) -> Result<Vec<f64>> {
        let feats = self
            .features
            .get(id)
            .ok_or_else(|| Error::UnknownUtterance(id.to_string()))?;
        let pooled = if view == 0 {
            self.net.pooled(feats)?
        } else {
            let mut rng = rng_for(self.seed, &["view", id, &view.to_string()]);
            self.net.pooled(&crop(feats, self.crop_frames, &mut rng))?
        };
        Ok(pooled.into_iter().map(f64::from).collect())
    }

    fn head(&self) -> &AffineHead {
        &self.head
    }

    fn head_mut(&mut self) -> &mut AffineHead {
        &mut self.head
    }
}
