use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::corpus::wav::mean_power;
use crate::corpus::Waveform;
use crate::error::{Error, Result};

/// Adds `noise` at `snr_db` relative to the signal power. The noise is looped
/// from a random offset to cover the signal; the result is clipped to [-1, 1].
pub fn mix_noise(
    wave: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    rng: &mut impl rand::Rng,
) -> Result<Waveform> {
    wave.require_pipeline_rate()?;
    noise.require_pipeline_rate()?;
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("SNR must be finite, got {snr_db}")));
    }
    if noise.is_empty() || noise.power() == 0.0 {
        return Err(Error::DegenerateNoise);
    }
    let offset = rng.gen_range(0..noise.len());
    let segment: Vec<f32> = (0..wave.len())
        .map(|i| noise.samples[(offset + i) % noise.len()])
        .collect();
    let noise_power = mean_power(&segment);
    if noise_power == 0.0 {
        return Err(Error::DegenerateNoise);
    }
    let scale = noise_scale(wave.power(), noise_power, snr_db);
    let samples = wave
        .samples
        .iter()
        .zip(&segment)
        .map(|(&s, &n)| (f64::from(s) + scale * f64::from(n)).clamp(-1.0, 1.0) as f32)
        .collect();
    Waveform::new(samples, wave.sample_rate)
}

/// Gain that brings noise of power `noise_power` to `snr_db` below `signal_power`.
pub(crate) fn noise_scale(signal_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (signal_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Convolves with a room impulse response, keeps the first `len` samples and
/// rescales to the input's peak amplitude.
pub fn reverb(wave: &Waveform, rir: &Waveform) -> Result<Waveform> {
    wave.require_pipeline_rate()?;
    rir.require_pipeline_rate()?;
    if rir.samples.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateRir);
    }
    let n = wave.len();
    let full = fft_convolve(&wave.samples, &rir.samples);
    let out = &full[..n];

    let in_peak = wave.samples.iter().fold(0f64, |m, &v| m.max(f64::from(v).abs()));
    let out_peak = out.iter().fold(0f64, |m, v| m.max(v.abs()));
    let gain = if out_peak > 0.0 { in_peak / out_peak } else { 0.0 };
    Waveform::new(out.iter().map(|v| (v * gain) as f32).collect(), wave.sample_rate)
}

fn fft_convolve(a: &[f32], b: &[f32]) -> Vec<f64> {
    let len = a.len() + b.len() - 1;
    let size = len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let pad = |x: &[f32]| {
        let mut v: Vec<Complex<f64>> = x.iter().map(|&s| Complex::new(f64::from(s), 0.0)).collect();
        v.resize(size, Complex::new(0.0, 0.0));
        v
    };
    let mut fa = pad(a);
    let mut fb = pad(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa[..len].iter().map(|c| c.re / size as f64).collect()
}

/// Speed perturbation by resampling the time axis: pitch moves with speed.
/// Output length is `round(n / factor)`; sample `i` interpolates the input at
/// position `i * factor`, extrapolating the last segment past the end.
pub fn speed(wave: &Waveform, factor: f64) -> Result<Waveform> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::InvalidFactor(factor));
    }
    let n = wave.len();
    let out_len = ((n as f64) / factor).round().max(1.0) as usize;
    let x = &wave.samples;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * factor;
            if n == 1 {
                return x[0];
            }
            let i0 = (pos.floor() as usize).min(n - 2);
            let frac = pos - i0 as f64;
            let a = f64::from(x[i0]);
            let b = f64::from(x[i0 + 1]);
            (a + (b - a) * frac).clamp(-1.0, 1.0) as f32
        })
        .collect();
    Waveform::new(samples, wave.sample_rate)
}
