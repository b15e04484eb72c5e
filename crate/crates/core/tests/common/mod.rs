//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use resunet_sv::losses::{
    aam_softmax, joint_loss, subcenter_aam_softmax, triplet, ClassifierHead, JointWeights, LabeledBatch,
    TripletBatch,
};
use resunet_sv::metrics::DcfParams;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
/// Instances are rejected when a cosine, hinge or subcenter gap is within
/// this distance of a kink.
const KINK_GAP: f64 = 1e-3;
/// Below this mean loss the softmax is saturated and central differences
/// lose the gradient to cancellation in the log-sum-exp.
const MIN_LOSS: f64 = 1e-2;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + FD_STEP;
            let up = f(&v);
            v[i] = orig - FD_STEP;
            let down = f(&v);
            v[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest componentwise relative error. Components are compared relative to
/// the larger of the two magnitudes, floored at 1e-3 of the gradient's
/// largest entry so that entries that are zero up to rounding do not blow up.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0f64, |m, v| m.max(v.abs()))
        .max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3 * scale))
        .fold(0.0, f64::max)
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub struct AamCase {
    pub x: Vec<f64>,
    pub labels: Vec<usize>,
    pub head: ClassifierHead,
}

impl AamCase {
    fn rows(&self, class: usize) -> impl Iterator<Item = &[f64]> {
        let d = self.head.dim;
        let k = self.head.n_subcenters;
        (0..k).map(move |s| &self.head.weights[(class * k + s) * d..(class * k + s + 1) * d])
    }

    /// Away from the cosine clamp, the margin fallback switch and
    /// subcenter ties.
    fn smooth(&self) -> bool {
        let d = self.head.dim;
        for (i, &label) in self.labels.iter().enumerate() {
            let xi = &self.x[i * d..(i + 1) * d];
            for c in 0..self.head.n_classes {
                let mut cs: Vec<f64> = self.rows(c).map(|w| cos(xi, w)).collect();
                if cs.iter().any(|v| v.abs() > 0.99) {
                    return false;
                }
                cs.sort_by(|a, b| b.total_cmp(a));
                if cs.len() > 1 && cs[0] - cs[1] < KINK_GAP {
                    return false;
                }
                if c == label && (cs[0].acos() + self.head.margin - std::f64::consts::PI).abs() < KINK_GAP {
                    return false;
                }
            }
        }
        true
    }
}

pub fn aam_case(rng: &mut ChaCha8Rng, n_subcenters: usize) -> AamCase {
    loop {
        let b = rng.gen_range(1..=4);
        let d = rng.gen_range(3..=6);
        let c = rng.gen_range(2..=5);
        let w = normal_vec(rng, c * n_subcenters * d);
        let head = ClassifierHead::new(c, n_subcenters, d, w)
            .unwrap()
            .with_scale_margin(rng.gen_range(4.0..32.0), rng.gen_range(0.0..0.5));
        let case = AamCase {
            x: normal_vec(rng, b * d),
            labels: (0..b).map(|_| rng.gen_range(0..c)).collect(),
            head,
        };
        if case.smooth() && aam_loss(&case.x, &case.labels, &case.head) >= MIN_LOSS {
            return case;
        }
    }
}

fn aam_loss(x: &[f64], labels: &[usize], head: &ClassifierHead) -> f64 {
    if head.n_subcenters == 1 {
        aam_softmax(x, labels, head, None).unwrap().loss
    } else {
        subcenter_aam_softmax(x, labels, head).unwrap().loss
    }
}

/// Worst relative error over embedding and weight gradients.
pub fn aam_case_error(case: &AamCase) -> f64 {
    let out = if case.head.n_subcenters == 1 {
        aam_softmax(&case.x, &case.labels, &case.head, None).unwrap()
    } else {
        subcenter_aam_softmax(&case.x, &case.labels, &case.head).unwrap()
    };
    let gx = numeric_grad(&case.x, |x| aam_loss(x, &case.labels, &case.head));
    let gw = numeric_grad(&case.head.weights, |w| {
        let mut h = case.head.clone();
        h.weights = w.to_vec();
        aam_loss(&case.x, &case.labels, &h)
    });
    relative_error(&out.grad_embeddings, &gx).max(relative_error(&out.grad_weights, &gw))
}

pub struct TripletCase {
    pub a: Vec<f64>,
    pub p: Vec<f64>,
    pub n: Vec<f64>,
    pub dim: usize,
    pub margin: f64,
}

fn hinges_clear(a: &[f64], p: &[f64], n: &[f64], dim: usize, margin: f64) -> bool {
    (0..a.len() / dim).all(|i| {
        let s = i * dim..(i + 1) * dim;
        let h = cos(&a[s.clone()], &n[s.clone()]) - cos(&a[s.clone()], &p[s]) + margin;
        h.abs() >= KINK_GAP
    })
}

pub fn triplet_case(rng: &mut ChaCha8Rng) -> TripletCase {
    loop {
        let k = rng.gen_range(1..=4);
        let dim = rng.gen_range(3..=6);
        let margin = rng.gen_range(0.0..0.5);
        let (a, p, n) = (normal_vec(rng, k * dim), normal_vec(rng, k * dim), normal_vec(rng, k * dim));
        if hinges_clear(&a, &p, &n, dim, margin) {
            return TripletCase { a, p, n, dim, margin };
        }
    }
}

pub fn triplet_case_error(c: &TripletCase) -> f64 {
    let out = triplet(&c.a, &c.p, &c.n, c.dim, c.margin).unwrap();
    let f = |a: &[f64], p: &[f64], n: &[f64]| triplet(a, p, n, c.dim, c.margin).unwrap().loss;
    let ga = numeric_grad(&c.a, |v| f(v, &c.p, &c.n));
    let gp = numeric_grad(&c.p, |v| f(&c.a, v, &c.n));
    let gn = numeric_grad(&c.n, |v| f(&c.a, &c.p, v));
    relative_error(&out.grad_anchor, &ga)
        .max(relative_error(&out.grad_positive, &gp))
        .max(relative_error(&out.grad_negative, &gn))
}

pub struct JointCase {
    pub source: AamCase,
    pub target: AamCase,
    pub triplets: TripletCase,
    pub weights: JointWeights,
}

pub fn joint_case(rng: &mut ChaCha8Rng) -> JointCase {
    loop {
        let source = aam_case(rng, 1);
        let dim = source.head.dim;
        let target = loop {
            let t = aam_case(rng, 1);
            if t.head.dim == dim {
                break t;
            }
        };
        let k = rng.gen_range(1..=3);
        let margin = rng.gen_range(0.0..0.5);
        let (a, p, n) = (normal_vec(rng, k * dim), normal_vec(rng, k * dim), normal_vec(rng, k * dim));
        if !hinges_clear(&a, &p, &n, dim, margin) {
            continue;
        }
        let weights = JointWeights {
            source: rng.gen_range(0.1..2.0),
            triplet: rng.gen_range(0.1..2.0),
            target: rng.gen_range(0.1..2.0),
            triplet_margin: margin,
        };
        return JointCase {
            source,
            target,
            triplets: TripletCase { a, p, n, dim, margin },
            weights,
        };
    }
}

pub fn joint_case_error(c: &JointCase) -> f64 {
    // Inputs in order: source x, source W, anchor, positive, negative, target x, target W.
    let inputs = [
        c.source.x.clone(),
        c.source.head.weights.clone(),
        c.triplets.a.clone(),
        c.triplets.p.clone(),
        c.triplets.n.clone(),
        c.target.x.clone(),
        c.target.head.weights.clone(),
    ];
    let eval = |v: &[Vec<f64>]| {
        let mut sh = c.source.head.clone();
        sh.weights = v[1].clone();
        let mut th = c.target.head.clone();
        th.weights = v[6].clone();
        joint_loss(
            LabeledBatch { embeddings: &v[0], labels: &c.source.labels },
            TripletBatch { anchor: &v[2], positive: &v[3], negative: &v[4] },
            LabeledBatch { embeddings: &v[5], labels: &c.target.labels },
            &sh,
            &th,
            &c.weights,
        )
        .unwrap()
    };
    let out = eval(&inputs);
    let analytic = [
        &out.grad_source,
        &out.grad_source_head,
        &out.grad_anchor,
        &out.grad_positive,
        &out.grad_negative,
        &out.grad_target,
        &out.grad_target_head,
    ];
    let mut worst = 0f64;
    for (slot, grad) in analytic.iter().enumerate() {
        let numeric = numeric_grad(&inputs[slot], |v| {
            let mut vs = inputs.clone();
            vs[slot] = v.to_vec();
            eval(&vs).loss
        });
        worst = worst.max(relative_error(grad, &numeric));
    }
    worst
}

/// A trial set with both classes present. Scores are drawn on a coarse grid
/// half of the time so that ties occur.
pub fn trial_set(rng: &mut ChaCha8Rng, max_len: usize) -> (Vec<f64>, Vec<bool>) {
    let n = (2f64.powf(rng.gen_range(1.0..(max_len as f64).log2()))) as usize;
    let n = n.clamp(2, max_len);
    let coarse = rng.gen_bool(0.5);
    let sep = rng.gen_range(0.0..3.0);
    loop {
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        let scores = labels
            .iter()
            .map(|&l| {
                let z: f64 = StandardNormal.sample(rng);
                let s = z + if l { sep } else { 0.0 };
                if coarse {
                    (s * 4.0).round() / 4.0
                } else {
                    s
                }
            })
            .collect();
        return (scores, labels);
    }
}

/// `(threshold, miss, fa)` at every distinct score plus both infinities,
/// each counted with a full pass over the trials.
pub fn brute_force_curve(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64, f64)> {
    let mut ts: Vec<f64> = scores.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mut cands = vec![f64::NEG_INFINITY];
    cands.extend(ts);
    cands.push(f64::INFINITY);
    let nt = labels.iter().filter(|&&l| l).count() as f64;
    let nn = labels.len() as f64 - nt;
    cands
        .into_iter()
        .map(|t| {
            let mut miss = 0usize;
            let mut fa = 0usize;
            for (&s, &l) in scores.iter().zip(labels) {
                if l && s < t {
                    miss += 1;
                }
                if !l && s >= t {
                    fa += 1;
                }
            }
            (t, miss as f64 / nt, fa as f64 / nn)
        })
        .collect()
}

pub fn brute_force_eer(scores: &[f64], labels: &[bool]) -> f64 {
    let curve = brute_force_curve(scores, labels);
    for w in curve.windows(2) {
        let (_, m0, f0) = w[0];
        let (_, m1, f1) = w[1];
        if m0 - f0 == 0.0 {
            return m0;
        }
        if m1 - f1 == 0.0 {
            return m1;
        }
        if m0 - f0 < 0.0 && m1 - f1 > 0.0 {
            let (d0, d1) = (m0 - f0, m1 - f1);
            return m0 + (-d0 / (d1 - d0)) * (m1 - m0);
        }
    }
    unreachable!("miss - fa goes from -1 to 1")
}

pub fn brute_force_min_dcf(scores: &[f64], labels: &[bool], p: &DcfParams) -> f64 {
    let norm = (p.c_miss * p.p_target).min(p.c_fa * (1.0 - p.p_target));
    brute_force_curve(scores, labels)
        .into_iter()
        .map(|(_, m, f)| (p.c_miss * p.p_target * m + p.c_fa * (1.0 - p.p_target) * f) / norm)
        .fold(f64::INFINITY, f64::min)
}

pub mod scenarios {
    use std::collections::HashMap;

    use rand::Rng;

    use resunet_sv::backend::Durations;
    use resunet_sv::clustering::{cluster_cascade, label_purity, CascadeParams, KMeansParams, Linkage, PseudoLabelSet};
    use resunet_sv::corpus::{ScoreSet, Trial, TrialList};
    use resunet_sv::pipeline::{planted_embeddings, PlantedParams, SystemScores};

    pub struct CascadeOutcome {
        pub labels: PseudoLabelSet,
        pub purity: f64,
    }

    /// 50 planted speakers with 40 utterances each through k-means (k = 200),
    /// average-linkage AHC to 50 clusters and a minimum size of 10.
    pub fn planted_cascade(seed: u64) -> CascadeOutcome {
        let (set, truth) = planted_embeddings(&PlantedParams {
            n_speakers: 50,
            utts_per_speaker: 40,
            dim: 256,
            max_intra_deg: 10.0,
            min_inter_deg: 45.0,
            seed,
        })
        .unwrap();
        let params = CascadeParams {
            kmeans: KMeansParams {
                k: 200,
                seed,
                ..Default::default()
            },
            n_clusters: 50,
            min_count: 10,
            linkage: Linkage::Average,
        };
        let (_, labels) = cluster_cascade(&set, &params).unwrap();
        let by_id: HashMap<&str, u32> = set.ids().iter().map(String::as_str).zip(truth.iter().copied()).collect();
        let kept_truth: Vec<u32> = labels.ids.iter().map(|id| by_id[id.as_str()]).collect();
        let purity = label_purity(&labels.labels, &kept_truth);
        CascadeOutcome { labels, purity }
    }

    pub struct FusionScenario {
        pub systems: Vec<SystemScores>,
        pub eval_labels: Vec<bool>,
        pub durations: Durations,
    }

    fn trials(rng: &mut impl Rng, n: usize, speakers: usize, per: usize) -> TrialList {
        let utt = |s: usize, u: usize| format!("s{s:02}u{u:02}");
        let list = (0..n)
            .map(|i| {
                let a = rng.gen_range(0..speakers);
                let target = i % 2 == 0;
                let b = if target {
                    a
                } else {
                    (a + rng.gen_range(1..speakers)) % speakers
                };
                let ua = rng.gen_range(0..per);
                let ub = if target { (ua + rng.gen_range(1..per)) % per } else { rng.gen_range(0..per) };
                Trial::new(utt(a, ua), utt(b, ub), Some(target))
            })
            .collect();
        TrialList::new(list).unwrap()
    }

    /// Two systems whose scores share a bias that grows as the shorter side of
    /// a trial gets shorter, with independent noise: each sees the same
    /// speaker evidence but errs on different trials.
    pub fn duration_biased_systems(seed: u64) -> FusionScenario {
        let mut r = super::rng(seed);
        let (speakers, per) = (40, 10);
        let mut durations = Durations::new();
        for s in 0..speakers {
            for u in 0..per {
                durations.insert(format!("s{s:02}u{u:02}"), r.gen_range(2.0..20.0));
            }
        }
        let cal = trials(&mut r, 4000, speakers, per);
        let eval = trials(&mut r, 4000, speakers, per);
        let score = |r: &mut super::ChaCha8Rng, t: &Trial| {
            let q = durations[&t.enroll].min(durations[&t.test]);
            let evidence = if t.target == Some(true) { 2.0 } else { 0.0 };
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, r);
            evidence + 3.0 - 0.3 * q + 1.2 * z
        };
        let systems = (0..2)
            .map(|_| {
                let c: Vec<f64> = cal.trials().iter().map(|t| score(&mut r, t)).collect();
                let e: Vec<f64> = eval.trials().iter().map(|t| score(&mut r, t)).collect();
                SystemScores {
                    eval: ScoreSet::from_trials(&eval, e).unwrap(),
                    calibration: ScoreSet::from_trials(&cal, c).unwrap(),
                    calibration_labels: cal.labels().unwrap(),
                }
            })
            .collect();
        FusionScenario {
            systems,
            eval_labels: eval.labels().unwrap(),
            durations,
        }
    }

    /// The same scores with every trial's sides exchanged.
    pub fn swapped(scores: &ScoreSet) -> ScoreSet {
        let entries = scores
            .entries()
            .iter()
            .map(|e| resunet_sv::corpus::ScoreEntry {
                enroll: e.test.clone(),
                test: e.enroll.clone(),
                score: e.score,
            })
            .collect();
        ScoreSet::new(entries).unwrap()
    }
}
