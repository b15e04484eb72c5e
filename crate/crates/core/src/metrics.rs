//! Detection error trade-off, equal error rate and minimum detection cost.
//!
//! A trial is accepted at threshold `t` when its score is `>= t`, so
//! `miss(t)` counts targets below `t` and `fa(t)` counts non-targets at or
//! above it. Candidate thresholds are the distinct scores plus ±∞.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        DcfParams {
            p_target: 0.05,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::Config(format!("p_target {} outside (0, 1)", self.p_target)));
        }
        if !(self.c_miss > 0.0 && self.c_fa > 0.0) {
            return Err(Error::Config("detection costs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetCurve {
    /// Ascending; starts at -∞ and ends at +∞.
    pub thresholds: Vec<f64>,
    pub fa_rates: Vec<f64>,
    pub miss_rates: Vec<f64>,
}

pub fn det_curve(scores: &[f64], labels: &[bool]) -> Result<DetCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Alignment(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Format(format!("non-finite score {s}")));
    }
    let n_tar = labels.iter().filter(|&&l| l).count();
    let n_non = labels.len() - n_tar;
    if n_tar == 0 || n_non == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut curve = DetCurve {
        thresholds: vec![f64::NEG_INFINITY],
        fa_rates: vec![1.0],
        miss_rates: vec![0.0],
    };
    let (nt, nn) = (n_tar as f64, n_non as f64);
    // Targets strictly below / non-targets strictly below the current threshold.
    let (mut tar_below, mut non_below) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        curve.thresholds.push(t);
        curve.miss_rates.push(tar_below as f64 / nt);
        curve.fa_rates.push((n_non - non_below) as f64 / nn);
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tar_below += 1;
            } else {
                non_below += 1;
            }
            i += 1;
        }
    }
    curve.thresholds.push(f64::INFINITY);
    curve.miss_rates.push(1.0);
    curve.fa_rates.push(0.0);
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerPoint {
    /// Fraction in [0, 1].
    pub eer: f64,
    /// Lowest candidate threshold with `miss >= fa`; if infinite, the
    /// neighbouring finite threshold.
    pub threshold: f64,
}

/// Crossing of the miss and false-alarm curves, linearly interpolated between
/// the two candidate thresholds that bracket it.
pub fn eer_from_curve(curve: &DetCurve) -> EerPoint {
    let d = |i: usize| curve.miss_rates[i] - curve.fa_rates[i];
    let i = (0..curve.thresholds.len())
        .find(|&i| d(i) >= 0.0)
        .expect("miss - fa reaches 1 at +inf");
    let eer = if d(i) == 0.0 {
        curve.miss_rates[i]
    } else {
        let (d0, d1) = (d(i - 1), d(i));
        let alpha = -d0 / (d1 - d0);
        curve.miss_rates[i - 1] + alpha * (curve.miss_rates[i] - curve.miss_rates[i - 1])
    };
    let mut threshold = curve.thresholds[i];
    if threshold.is_infinite() {
        threshold = curve.thresholds[if i == 0 { 1 } else { i - 1 }];
    }
    EerPoint { eer, threshold }
}

pub fn eer(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(eer_from_curve(&det_curve(scores, labels)?).eer)
}

pub fn eer_point(scores: &[f64], labels: &[bool]) -> Result<EerPoint> {
    Ok(eer_from_curve(&det_curve(scores, labels)?))
}

fn dcf_norm(params: &DcfParams) -> f64 {
    (params.c_miss * params.p_target).min(params.c_fa * (1.0 - params.p_target))
}

/// Normalized detection cost at one operating point.
pub fn normalized_dcf(miss: f64, fa: f64, params: &DcfParams) -> f64 {
    (params.c_miss * params.p_target * miss + params.c_fa * (1.0 - params.p_target) * fa) / dcf_norm(params)
}

pub fn min_dcf_from_curve(curve: &DetCurve, params: &DcfParams) -> f64 {
    curve
        .miss_rates
        .iter()
        .zip(&curve.fa_rates)
        .map(|(&m, &f)| normalized_dcf(m, f, params))
        .fold(f64::INFINITY, f64::min)
}

pub fn min_dcf(scores: &[f64], labels: &[bool], params: &DcfParams) -> Result<f64> {
    params.validate()?;
    Ok(min_dcf_from_curve(&det_curve(scores, labels)?, params))
}
