use std::f64::consts::PI;

use resunet_sv::corpus::{Waveform, SAMPLE_RATE};
use resunet_sv::dsp::{fbank, FbankConfig};

fn tone(hz: f64, seconds: f64) -> Waveform {
    let n = (seconds * f64::from(SAMPLE_RATE)) as usize;
    let samples = (0..n)
        .map(|i| (0.5 * (2.0 * PI * hz * i as f64 / f64::from(SAMPLE_RATE)).sin()) as f32)
        .collect();
    Waveform::new(samples, SAMPLE_RATE).unwrap()
}

/// Log-Mel energies of one frame by a direct DFT and an HTK-form mel scale.
fn reference_frame(frame: &[f32], cfg: &FbankConfig) -> Vec<f64> {
    let n = cfg.frame_length;
    let windowed: Vec<f64> = frame
        .iter()
        .enumerate()
        .map(|(i, &x)| f64::from(x) * (0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()))
        .collect();
    let bins = cfg.fft_size / 2 + 1;
    let power: Vec<f64> = (0..bins)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, x) in windowed.iter().enumerate() {
                let a = -2.0 * PI * (k * i) as f64 / cfg.fft_size as f64;
                re += x * a.cos();
                im += x * a.sin();
            }
            re * re + im * im
        })
        .collect();
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let (lo, hi) = (mel(cfg.low_freq), mel(cfg.high_freq));
    let step = (hi - lo) / (cfg.n_mels + 1) as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (l, c, r) = (lo + m as f64 * step, lo + (m + 1) as f64 * step, lo + (m + 2) as f64 * step);
            let e: f64 = (0..bins)
                .map(|k| {
                    let f = mel(k as f64 * f64::from(SAMPLE_RATE) / cfg.fft_size as f64);
                    let w = if f > l && f <= c {
                        (f - l) / (c - l)
                    } else if f > c && f < r {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    };
                    w * power[k]
                })
                .sum();
            e.max(cfg.floor).ln()
        })
        .collect()
}

fn argmax(v: impl IntoIterator<Item = f64>) -> usize {
    v.into_iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, x)| if x > b.1 { (i, x) } else { b })
        .0
}

#[test]
fn tone_peak_matches_reference_dsp() {
    let cfg = FbankConfig::default();
    for hz in [250.0, 1000.0, 3000.0, 6000.0] {
        let wave = tone(hz, 0.5);
        let feats = fbank(&wave, &cfg).unwrap();
        for t in [0, feats.frames() / 2, feats.frames() - 1] {
            let start = t * cfg.frame_shift;
            let reference = reference_frame(&wave.samples[start..start + cfg.frame_length], &cfg);
            let ours = argmax(feats.row(t).iter().map(|&v| f64::from(v)));
            let theirs = argmax(reference.iter().copied());
            assert!(ours.abs_diff(theirs) <= 1, "{hz} Hz frame {t}: bin {ours} vs {theirs}");
            // Away from the floor the energies agree closely as well.
            for (a, b) in feats.row(t).iter().zip(&reference) {
                if *b > -5.0 {
                    assert!((f64::from(*a) - b).abs() < 1e-3, "{hz} Hz: {a} vs {b}");
                }
            }
        }
    }
}
