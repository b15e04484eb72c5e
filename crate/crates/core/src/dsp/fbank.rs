use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::corpus::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hamming,
    Hann,
    Rectangular,
}

impl Window {
    fn coefficients(self, len: usize) -> Vec<f64> {
        let denom = (len.max(2) - 1) as f64;
        (0..len)
            .map(|n| {
                let x = 2.0 * PI * n as f64 / denom;
                match self {
                    Window::Hamming => 0.54 - 0.46 * x.cos(),
                    Window::Hann => 0.5 - 0.5 * x.cos(),
                    Window::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FbankConfig {
    pub n_mels: usize,
    /// Samples per frame (25 ms at 16 kHz).
    pub frame_length: usize,
    /// Samples between frame starts (10 ms at 16 kHz).
    pub frame_shift: usize,
    pub fft_size: usize,
    pub window: Window,
    /// Standard deviation of additive dither, in sample units. 0 disables it.
    pub dither: f64,
    pub dither_seed: u64,
    /// Energies are clamped to this before the log.
    pub floor: f64,
    pub low_freq: f64,
    pub high_freq: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        FbankConfig {
            n_mels: 64,
            frame_length: 400,
            frame_shift: 160,
            fft_size: 512,
            window: Window::Hamming,
            dither: 0.0,
            dither_seed: 0,
            floor: 1e-10,
            low_freq: 20.0,
            high_freq: 7600.0,
        }
    }
}

impl FbankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 || self.frame_length == 0 || self.frame_shift == 0 {
            return Err(Error::Config("fbank sizes must be positive".into()));
        }
        if self.frame_length > self.fft_size {
            return Err(Error::Config(format!(
                "frame length {} exceeds FFT size {}",
                self.frame_length, self.fft_size
            )));
        }
        let nyquist = f64::from(SAMPLE_RATE) / 2.0;
        if !(0.0 <= self.low_freq && self.low_freq < self.high_freq && self.high_freq <= nyquist) {
            return Err(Error::Config("mel range must satisfy 0 <= low < high <= nyquist".into()));
        }
        if !(self.floor > 0.0) {
            return Err(Error::Config("log floor must be positive".into()));
        }
        Ok(())
    }

    /// Number of frames for `n` samples, or 0 if shorter than one frame.
    pub fn num_frames(&self, n: usize) -> usize {
        if n < self.frame_length {
            0
        } else {
            (n - self.frame_length) / self.frame_shift + 1
        }
    }
}

/// Frame count of a `seconds`-long crop under the default 25 ms / 10 ms framing.
pub fn frames_for_seconds(seconds: f64, config: &FbankConfig) -> usize {
    let samples = (seconds * f64::from(SAMPLE_RATE)).round() as usize;
    config.num_frames(samples)
}

/// Time-major `frames × n_mels` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    n_mels: usize,
    pub frame_shift: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, n_mels: usize, data: Vec<f32>) -> Result<Self> {
        if frames == 0 || n_mels == 0 {
            return Err(Error::Shape("feature matrix needs at least one frame and one bin".into()));
        }
        if data.len() != frames * n_mels {
            return Err(Error::Shape(format!(
                "{} values for {frames}x{n_mels} features",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite feature value".into()));
        }
        Ok(FeatureMatrix {
            frames,
            n_mels,
            frame_shift: 160,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut sums = vec![0f64; self.n_mels];
        for row in self.data.chunks_exact(self.n_mels) {
            for (s, &v) in sums.iter_mut().zip(row) {
                *s += f64::from(v);
            }
        }
        sums.iter().map(|s| s / self.frames as f64).collect()
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

/// Triangular filters with corners equally spaced on the mel scale; the
/// triangles are linear in mel. Returns `(first_bin, weights)` per filter.
fn mel_filters(config: &FbankConfig) -> Vec<(usize, Vec<f64>)> {
    let n_bins = config.fft_size / 2 + 1;
    let bin_hz = f64::from(SAMPLE_RATE) / config.fft_size as f64;
    let mel_lo = hz_to_mel(config.low_freq);
    let mel_hi = hz_to_mel(config.high_freq);
    let delta = (mel_hi - mel_lo) / (config.n_mels + 1) as f64;
    (0..config.n_mels)
        .map(|m| {
            let left = mel_lo + m as f64 * delta;
            let center = left + delta;
            let right = center + delta;
            let mut first = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let mel = hz_to_mel(k as f64 * bin_hz);
                let w = if mel > left && mel <= center {
                    (mel - left) / (center - left)
                } else if mel > center && mel < right {
                    (right - mel) / (right - center)
                } else {
                    0.0
                };
                if w > 0.0 {
                    first.get_or_insert(k);
                    weights.push(w);
                } else if first.is_some() {
                    break;
                }
            }
            (first.unwrap_or(0), weights)
        })
        .collect()
}

/// Log-Mel filterbank energies.
pub fn fbank(wave: &Waveform, config: &FbankConfig) -> Result<FeatureMatrix> {
    config.validate()?;
    wave.require_pipeline_rate()?;
    let frames = config.num_frames(wave.len());
    if frames == 0 {
        return Err(Error::TooShort {
            samples: wave.len(),
            needed: config.frame_length,
        });
    }

    let window = config.window.coefficients(config.frame_length);
    let filters = mel_filters(config);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(config.fft_size);
    let mut dither_rng = crate::seed::rng(config.dither_seed);
    let dither = Normal::new(0.0, config.dither).map_err(|e| Error::Config(format!("dither: {e}")))?;
    let mut buf = vec![Complex::new(0.0, 0.0); config.fft_size];
    let mut power = vec![0f64; config.fft_size / 2 + 1];
    let mut data = Vec::with_capacity(frames * config.n_mels);

    for t in 0..frames {
        let start = t * config.frame_shift;
        let frame = &wave.samples[start..start + config.frame_length];
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < config.frame_length {
                let mut x = f64::from(frame[i]);
                if config.dither > 0.0 {
                    x += dither.sample(&mut dither_rng);
                }
                Complex::new(x * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for (first, weights) in &filters {
            let energy: f64 = weights
                .iter()
                .zip(&power[*first..])
                .map(|(w, p)| w * p)
                .sum();
            data.push(energy.max(config.floor).ln() as f32);
        }
    }

    let mut out = FeatureMatrix::new(frames, config.n_mels, data)?;
    out.frame_shift = config.frame_shift;
    Ok(out)
}

/// Subtracts each column's utterance-level mean.
pub fn cmn(features: &FeatureMatrix) -> FeatureMatrix {
    let means = features.column_means();
    let data = features
        .data
        .chunks_exact(features.n_mels)
        .flat_map(|row| row.iter().zip(&means).map(|(&v, m)| (f64::from(v) - m) as f32))
        .collect();
    FeatureMatrix {
        data,
        ..features.clone()
    }
}

/// Exactly `target_frames` rows: a uniformly placed window when the input is
/// long enough, otherwise the input repeated from its start.
pub fn crop(features: &FeatureMatrix, target_frames: usize, rng: &mut impl rand::Rng) -> FeatureMatrix {
    assert!(target_frames >= 1, "crop target must be at least one frame");
    let n = features.n_mels;
    let data = if features.frames >= target_frames {
        let offset = rng.gen_range(0..=features.frames - target_frames);
        features.data[offset * n..(offset + target_frames) * n].to_vec()
    } else {
        (0..target_frames)
            .flat_map(|t| features.row(t % features.frames).iter().copied())
            .collect()
    };
    FeatureMatrix {
        frames: target_frames,
        data,
        ..features.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn wave(samples: Vec<f32>) -> Waveform {
        Waveform::new(samples, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn two_seconds_is_198_frames() {
        let f = fbank(&wave(vec![0.1; 32000]), &FbankConfig::default()).unwrap();
        assert_eq!(f.frames(), 198);
        assert_eq!(f.n_mels(), 64);
        assert_eq!(frames_for_seconds(2.0, &FbankConfig::default()), 198);
        assert_eq!(frames_for_seconds(4.0, &FbankConfig::default()), 398);
    }

    #[test]
    fn silence_is_log_floor() {
        let cfg = FbankConfig::default();
        let f = fbank(&wave(vec![0.0; 1000]), &cfg).unwrap();
        let expected = (cfg.floor.ln()) as f32;
        assert!(f.data().iter().all(|&v| v == expected));
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            fbank(&wave(vec![0.0; 399]), &FbankConfig::default()),
            Err(Error::TooShort { samples: 399, needed: 400 })
        ));
    }

    #[test]
    fn rejects_other_rates() {
        let w = Waveform::new(vec![0.0; 1000], 8000).unwrap();
        assert!(matches!(fbank(&w, &FbankConfig::default()), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn filters_cover_range_and_are_positive() {
        let filters = mel_filters(&FbankConfig::default());
        assert_eq!(filters.len(), 64);
        assert!(filters.iter().all(|(_, w)| !w.is_empty()));
        let bin_hz = 16000.0 / 512.0;
        assert!(filters[0].0 as f64 * bin_hz >= 20.0);
        let (first, w) = filters.last().unwrap();
        assert!(((first + w.len() - 1) as f64) * bin_hz < 7600.0);
    }

    #[test]
    fn cmn_constant_is_zero_and_idempotent() {
        let f = FeatureMatrix::new(10, 64, vec![3.5; 640]).unwrap();
        assert!(cmn(&f).data().iter().all(|&v| v == 0.0));

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let r = FeatureMatrix::new(57, 64, (0..57 * 64).map(|_| rng.gen_range(-20.0..5.0)).collect()).unwrap();
        let once = cmn(&r);
        assert!(once.column_means().iter().all(|m| m.abs() < 1e-6));
        let twice = cmn(&once);
        assert_eq!(twice.frames(), r.frames());
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn crop_rules() {
        let f = FeatureMatrix::new(100, 2, (0..200).map(|v| v as f32).collect()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let same = crop(&f, 100, &mut rng);
        assert_eq!(same, f);
        let long = crop(&f, 200, &mut rng);
        assert_eq!(long.frames(), 200);
        assert_eq!(&long.data()[..200], f.data());
        assert_eq!(&long.data()[200..], f.data());

        let a = crop(&f, 30, &mut rand_chacha::ChaCha8Rng::seed_from_u64(11));
        let b = crop(&f, 30, &mut rand_chacha::ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        assert_eq!(a.frames(), 30);
    }
}
