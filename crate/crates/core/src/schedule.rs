//! Learning-rate and margin schedules for each training phase, plus plain SGD
//! with weight decay.

use serde::{Deserialize, Serialize};

use crate::dsp::{frames_for_seconds, FbankConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initial,
    LargeMarginFinetune,
    AdaptationFinetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    Track1,
    Track3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainPhaseConfig {
    pub phase: Phase,
    pub track: Track,
    pub lr0: f64,
    pub lr_decay: f64,
    pub decay_interval_batches: u64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub margin_start: f64,
    pub margin_end: f64,
    pub warmup_epochs: f64,
    pub crop_seconds: f64,
}

impl TrainPhaseConfig {
    /// Reference settings for a phase and track.
    pub fn preset(phase: Phase, track: Track) -> Self {
        let (lr0, crop_seconds) = match phase {
            Phase::Initial => (0.1, 2.0),
            Phase::LargeMarginFinetune => (1e-4, 4.0),
            Phase::AdaptationFinetune => (1e-3, 2.0),
        };
        let (margin_start, margin_end) = match (phase, track) {
            (Phase::Initial, Track::Track1) => (0.0, 0.25),
            (Phase::Initial, Track::Track3) => (0.0, 0.15),
            (Phase::LargeMarginFinetune, Track::Track1) => (0.35, 0.35),
            (Phase::LargeMarginFinetune, Track::Track3) => (0.25, 0.25),
            (Phase::AdaptationFinetune, Track::Track1) => (0.25, 0.25),
            (Phase::AdaptationFinetune, Track::Track3) => (0.15, 0.15),
        };
        TrainPhaseConfig {
            phase,
            track,
            lr0,
            lr_decay: 0.9,
            decay_interval_batches: 50_000,
            batch_size: 128,
            weight_decay: 2e-5,
            margin_start,
            margin_end,
            warmup_epochs: 2.0,
            crop_seconds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.margin_start >= 0.0 && self.margin_end >= self.margin_start) {
            return Err(Error::Config(format!(
                "margins must satisfy 0 <= start <= end, got {} -> {}",
                self.margin_start, self.margin_end
            )));
        }
        if self.decay_interval_batches == 0 || self.batch_size == 0 {
            return Err(Error::Config("decay interval and batch size must be positive".into()));
        }
        if !(self.warmup_epochs >= 0.0) || !(self.crop_seconds > 0.0) {
            return Err(Error::Config("warmup must be non-negative and crop length positive".into()));
        }
        Ok(())
    }
}

/// Training progress.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScheduleState {
    pub batch_index: u64,
    /// Fractional epochs elapsed.
    pub epoch_progress: f64,
}

impl ScheduleState {
    pub fn at_batch(batch_index: u64, batch_size: usize, corpus_size: usize) -> Self {
        ScheduleState {
            batch_index,
            epoch_progress: batch_index as f64 * batch_size as f64 / corpus_size.max(1) as f64,
        }
    }
}

/// Rounds to 15 significant digits so that decayed decimal rates compare
/// equal to their decimal values (0.1 · 0.9 is 0.09, not 0.09000000000000001).
fn snap(x: f64) -> f64 {
    format!("{x:.14e}").parse().unwrap_or(x)
}

pub fn lr_at(config: &TrainPhaseConfig, batch_index: u64) -> f64 {
    match config.phase {
        Phase::Initial => {
            let steps = (batch_index / config.decay_interval_batches) as i32;
            snap(config.lr0 * config.lr_decay.powi(steps))
        }
        Phase::LargeMarginFinetune | Phase::AdaptationFinetune => config.lr0,
    }
}

/// Linear warmup from `margin_start` to `margin_end` over `warmup_epochs`.
pub fn margin_at(config: &TrainPhaseConfig, epoch_progress: f64) -> f64 {
    if config.margin_end == config.margin_start || config.warmup_epochs <= 0.0 {
        return config.margin_end;
    }
    let frac = (epoch_progress.max(0.0) / config.warmup_epochs).min(1.0);
    if frac >= 1.0 {
        return config.margin_end;
    }
    config.margin_start + (config.margin_end - config.margin_start) * frac
}

pub fn crop_frames(config: &TrainPhaseConfig, fbank: &FbankConfig) -> usize {
    frames_for_seconds(config.crop_seconds, fbank)
}

/// `p <- p - lr * (g + weight_decay * p)`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * (g + weight_decay * *p);
    }
    Ok(())
}
