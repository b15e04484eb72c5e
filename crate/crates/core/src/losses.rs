//! Margin-based classification losses and a cosine triplet loss, each with
//! analytic gradients. All arithmetic is in f64; embeddings are row-major
//! `B × d` slices.

use crate::error::{Error, Result};

const COS_CLAMP: f64 = 1.0 - 1e-7;

/// Classifier weights for (sub-center) AAM-softmax. Rows are normalized inside
/// the loss; the stored values are unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub n_classes: usize,
    pub n_subcenters: usize,
    pub dim: usize,
    /// `n_classes × n_subcenters × dim`, row-major.
    pub weights: Vec<f64>,
    pub scale: f64,
    pub margin: f64,
}

impl ClassifierHead {
    pub fn new(n_classes: usize, n_subcenters: usize, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if n_classes == 0 || n_subcenters == 0 || dim == 0 {
            return Err(Error::Shape("classifier head needs classes, subcenters and dim > 0".into()));
        }
        if weights.len() != n_classes * n_subcenters * dim {
            return Err(Error::Shape(format!(
                "{} weights for {n_classes} x {n_subcenters} x {dim}",
                weights.len()
            )));
        }
        Ok(ClassifierHead {
            n_classes,
            n_subcenters,
            dim,
            weights,
            scale: 32.0,
            margin: 0.2,
        })
    }

    pub fn with_scale_margin(mut self, scale: f64, margin: f64) -> Self {
        self.scale = scale;
        self.margin = margin;
        self
    }

    fn row(&self, class: usize, sub: usize) -> &[f64] {
        let start = (class * self.n_subcenters + sub) * self.dim;
        &self.weights[start..start + self.dim]
    }

    fn validate(&self, margin: f64) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::Config(format!("scale must be positive, got {}", self.scale)));
        }
        if !(0.0..=0.5).contains(&margin) {
            return Err(Error::Config(format!("margin {margin} outside [0, 0.5]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad_embeddings: Vec<f64>,
    pub grad_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletOutput {
    pub loss: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negative: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64], what: &str) -> Result<f64> {
    let n = dot(v, v).sqrt();
    if n > 0.0 && n.is_finite() {
        Ok(n)
    } else {
        Err(Error::Norm(format!("{what} has norm {n}")))
    }
}

/// Target logit with additive angular margin and its derivative w.r.t. cosθ.
fn margin_logit(cos: f64, m: f64, s: f64) -> (f64, f64) {
    let theta = cos.acos();
    if theta + m <= std::f64::consts::PI {
        let sin = (1.0 - cos * cos).sqrt();
        let value = cos * m.cos() - sin * m.sin();
        let d = m.cos() + m.sin() * cos / sin;
        (s * value, s * d)
    } else {
        (s * (cos - m * m.sin()), s)
    }
}

fn clamp_cos(c: f64) -> (f64, f64) {
    if c > COS_CLAMP {
        (COS_CLAMP, 0.0)
    } else if c < -COS_CLAMP {
        (-COS_CLAMP, 0.0)
    } else {
        (c, 1.0)
    }
}

fn margin_softmax(embeddings: &[f64], labels: &[usize], head: &ClassifierHead, margin: f64) -> Result<LossOutput> {
    head.validate(margin)?;
    let d = head.dim;
    if embeddings.len() != labels.len() * d {
        return Err(Error::Shape(format!(
            "{} embedding values for batch {} x {d}",
            embeddings.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= head.n_classes) {
        return Err(Error::Label {
            label,
            n_classes: head.n_classes,
        });
    }
    let rows = head.n_classes * head.n_subcenters;
    let mut w_norm = Vec::with_capacity(rows);
    for r in 0..rows {
        w_norm.push(norm(&head.weights[r * d..(r + 1) * d], "classifier row")?);
    }

    let b = labels.len() as f64;
    let s = head.scale;
    let mut loss = 0.0;
    let mut grad_x = vec![0.0; embeddings.len()];
    let mut grad_w = vec![0.0; head.weights.len()];
    let mut chosen = vec![0usize; head.n_classes];
    let mut logits = vec![0.0; head.n_classes];
    let mut dlogit_dcos = vec![0.0; head.n_classes];

    for (i, &y) in labels.iter().enumerate() {
        let x = &embeddings[i * d..(i + 1) * d];
        let r = norm(x, "embedding")?;
        for j in 0..head.n_classes {
            let (mut best, mut best_k) = (f64::NEG_INFINITY, 0);
            for k in 0..head.n_subcenters {
                let row = j * head.n_subcenters + k;
                let c = dot(x, head.row(j, k)) / (r * w_norm[row]);
                if c > best {
                    best = c;
                    best_k = k;
                }
            }
            let (c, pass) = clamp_cos(best);
            chosen[j] = best_k;
            if j == y {
                let (z, dz) = margin_logit(c, margin, s);
                logits[j] = z;
                dlogit_dcos[j] = dz * pass;
            } else {
                logits[j] = s * c;
                dlogit_dcos[j] = s * pass;
            }
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        loss += max + sum.ln() - logits[y];

        let gx = &mut grad_x[i * d..(i + 1) * d];
        for j in 0..head.n_classes {
            let p = (logits[j] - max).exp() / sum;
            let dl_dz = p - if j == y { 1.0 } else { 0.0 };
            let g = dl_dz * dlogit_dcos[j] / b;
            if g == 0.0 {
                continue;
            }
            let row = j * head.n_subcenters + chosen[j];
            let w = head.row(j, chosen[j]);
            let wn = w_norm[row];
            // Unclamped cosine for the tangent projections.
            let c = dot(x, w) / (r * wn);
            let gw = &mut grad_w[row * d..(row + 1) * d];
            for t in 0..d {
                let xh = x[t] / r;
                let wh = w[t] / wn;
                gx[t] += g * (wh - c * xh) / r;
                gw[t] += g * (xh - c * wh) / wn;
            }
        }
    }
    Ok(LossOutput {
        loss: loss / b,
        grad_embeddings: grad_x,
        grad_weights: grad_w,
    })
}

/// AAM-softmax with mean cross-entropy over the batch. `margin_override`
/// replaces the head's margin, which schedules use for warmup.
pub fn aam_softmax(
    embeddings: &[f64],
    labels: &[usize],
    head: &ClassifierHead,
    margin_override: Option<f64>,
) -> Result<LossOutput> {
    if head.n_subcenters != 1 {
        return Err(Error::Shape(format!(
            "plain AAM-softmax needs one subcenter per class, head has {}",
            head.n_subcenters
        )));
    }
    margin_softmax(embeddings, labels, head, margin_override.unwrap_or(head.margin))
}

/// Sub-center AAM-softmax: a class's cosine is the maximum over its
/// subcenters, and only the winning subcenter (lowest index on ties) receives
/// gradient.
pub fn subcenter_aam_softmax(embeddings: &[f64], labels: &[usize], head: &ClassifierHead) -> Result<LossOutput> {
    if head.n_subcenters < 2 {
        return Err(Error::Shape("sub-center AAM-softmax needs at least two subcenters".into()));
    }
    margin_softmax(embeddings, labels, head, head.margin)
}

/// Mean over items of `max(0, d(a,p) - d(a,n) + margin)` with cosine
/// distance. Gradients vanish where the hinge is inactive, including exactly
/// at the boundary.
pub fn triplet(anchor: &[f64], positive: &[f64], negative: &[f64], dim: usize, margin: f64) -> Result<TripletOutput> {
    if dim == 0 || anchor.len() % dim != 0 || positive.len() != anchor.len() || negative.len() != anchor.len() {
        return Err(Error::Shape(format!(
            "triplet batches of {}, {}, {} values with dim {dim}",
            anchor.len(),
            positive.len(),
            negative.len()
        )));
    }
    let n = anchor.len() / dim;
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut out = TripletOutput {
        loss: 0.0,
        grad_anchor: vec![0.0; anchor.len()],
        grad_positive: vec![0.0; anchor.len()],
        grad_negative: vec![0.0; anchor.len()],
    };
    let scale = 1.0 / n as f64;
    for i in 0..n {
        let span = i * dim..(i + 1) * dim;
        let (a, p, q) = (&anchor[span.clone()], &positive[span.clone()], &negative[span.clone()]);
        let (ra, rp, rq) = (norm(a, "anchor")?, norm(p, "positive")?, norm(q, "negative")?);
        let cap = dot(a, p) / (ra * rp);
        let caq = dot(a, q) / (ra * rq);
        let hinge = caq - cap + margin;
        if hinge <= 0.0 {
            continue;
        }
        out.loss += hinge * scale;
        for t in 0..dim {
            let (ah, ph, qh) = (a[t] / ra, p[t] / rp, q[t] / rq);
            // d cos(u, v) / du = (v̂ - cos·û) / |u|
            out.grad_anchor[span.start + t] += scale * ((qh - caq * ah) - (ph - cap * ah)) / ra;
            out.grad_positive[span.start + t] -= scale * (ah - cap * ph) / rp;
            out.grad_negative[span.start + t] += scale * (ah - caq * qh) / rq;
        }
    }
    Ok(out)
}

/// A labeled batch for a classification term.
#[derive(Debug, Clone, Copy)]
pub struct LabeledBatch<'a> {
    pub embeddings: &'a [f64],
    pub labels: &'a [usize],
}

impl LabeledBatch<'_> {
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TripletBatch<'a> {
    pub anchor: &'a [f64],
    pub positive: &'a [f64],
    pub negative: &'a [f64],
}

impl TripletBatch<'_> {
    pub fn is_empty(&self) -> bool {
        self.anchor.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointWeights {
    pub source: f64,
    pub triplet: f64,
    pub target: f64,
    pub triplet_margin: f64,
}

impl Default for JointWeights {
    fn default() -> Self {
        JointWeights {
            source: 1.0,
            triplet: 1.0,
            target: 1.0,
            triplet_margin: 0.2,
        }
    }
}

/// Gradients of the joint objective, one entry per input. Empty components
/// get empty gradient vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct JointOutput {
    pub loss: f64,
    /// Unweighted component losses: source AAM, triplet, labeled-target AAM.
    pub components: [f64; 3],
    pub grad_source: Vec<f64>,
    pub grad_source_head: Vec<f64>,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negative: Vec<f64>,
    pub grad_target: Vec<f64>,
    pub grad_target_head: Vec<f64>,
}

fn scaled(v: Vec<f64>, w: f64) -> Vec<f64> {
    v.into_iter().map(|g| g * w).collect()
}

/// Weighted sum of source AAM, target triplet and labeled-target AAM, each
/// with its own classifier head.
pub fn joint_loss(
    source: LabeledBatch<'_>,
    triplets: TripletBatch<'_>,
    target: LabeledBatch<'_>,
    source_head: &ClassifierHead,
    target_head: &ClassifierHead,
    weights: &JointWeights,
) -> Result<JointOutput> {
    if source.is_empty() && triplets.is_empty() && target.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut out = JointOutput {
        loss: 0.0,
        components: [0.0; 3],
        grad_source: Vec::new(),
        grad_source_head: vec![0.0; source_head.weights.len()],
        grad_anchor: Vec::new(),
        grad_positive: Vec::new(),
        grad_negative: Vec::new(),
        grad_target: Vec::new(),
        grad_target_head: vec![0.0; target_head.weights.len()],
    };
    if !source.is_empty() {
        let o = aam_softmax(source.embeddings, source.labels, source_head, None)?;
        out.components[0] = o.loss;
        out.loss += weights.source * o.loss;
        out.grad_source = scaled(o.grad_embeddings, weights.source);
        out.grad_source_head = scaled(o.grad_weights, weights.source);
    }
    if !triplets.is_empty() {
        let o = triplet(
            triplets.anchor,
            triplets.positive,
            triplets.negative,
            source_head.dim,
            weights.triplet_margin,
        )?;
        out.components[1] = o.loss;
        out.loss += weights.triplet * o.loss;
        out.grad_anchor = scaled(o.grad_anchor, weights.triplet);
        out.grad_positive = scaled(o.grad_positive, weights.triplet);
        out.grad_negative = scaled(o.grad_negative, weights.triplet);
    }
    if !target.is_empty() {
        let o = aam_softmax(target.embeddings, target.labels, target_head, None)?;
        out.components[2] = o.loss;
        out.loss += weights.target * o.loss;
        out.grad_target = scaled(o.grad_embeddings, weights.target);
        out.grad_target_head = scaled(o.grad_weights, weights.target);
    }
    Ok(out)
}
