use std::path::Path;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Format("waveform has no samples".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub(crate) fn require_pipeline_rate(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::UnsupportedFormat(format!(
                "sample rate {} Hz, expected {SAMPLE_RATE}",
                self.sample_rate
            )));
        }
        Ok(())
    }
}

pub(crate) fn mean_power(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|&s| f64::from(s) * f64::from(s)).sum::<f64>() / samples.len() as f64
}

fn map_hound_write(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        // The file was opened beforehand, so read failures mean short data.
        hound::Error::IoError(e) => Error::parse(0, format!("{}: truncated file ({e})", path.display())),
        hound::Error::Unsupported => {
            Error::UnsupportedFormat(format!("{}: unsupported WAV encoding", path.display()))
        }
        other => Error::parse(0, format!("{}: {other}", path.display())),
    }
}

/// Reads a 16 kHz, 16-bit PCM, mono RIFF file. Samples are `raw / 32768`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = hound::WavReader::new(std::io::BufReader::new(file)).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedFormat(format!(
            "sample rate {} Hz, expected {SAMPLE_RATE}",
            spec.sample_rate
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{:?} with {} bits per sample, expected 16-bit PCM",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let expected = reader.duration() as usize;
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f32::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<f32>, _>>()
        .map_err(|e| map_hound(path, e))?;
    if samples.len() != expected {
        return Err(Error::parse(0, format!("{}: truncated data chunk", path.display())));
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM mono; samples are clipped to [-1, 1] and scaled by 32768.
pub fn write_wav(wave: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| map_hound_write(path, e))?;
    for &s in &wave.samples {
        let v = (f64::from(s) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(|e| map_hound_write(path, e))?;
    }
    w.finalize().map_err(|e| map_hound_write(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, channels: u16, rate: u32, samples: &[i16]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn one_second_is_16000_samples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw(&p, 1, 16000, &vec![0; 16000]);
        assert_eq!(read_wav(&p).unwrap().len(), 16000);
    }

    #[test]
    fn stereo_and_other_rates_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_raw(&p, 2, 16000, &[0; 32]);
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedFormat(_))));
        write_raw(&p, 1, 8000, &[0; 32]);
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn square_wave_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sq.wav");
        write_raw(&p, 1, 16000, &[32767, -32768, 32767, -32768]);
        let w = read_wav(&p).unwrap();
        assert_eq!(w.samples, vec![32767.0 / 32768.0, -1.0, 32767.0 / 32768.0, -1.0]);
        assert!((w.samples[0] - 0.99997).abs() < 1e-5);
    }

    #[test]
    fn every_i16_decodes_exactly() {
        let all: Vec<i16> = (i16::MIN..=i16::MAX).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("all.wav");
        write_raw(&p, 1, 16000, &all);
        let w = read_wav(&p).unwrap();
        for (v, s) in all.iter().zip(&w.samples) {
            assert_eq!(f64::from(*s), f64::from(*v) / 32768.0);
        }
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        write_raw(&p, 1, 16000, &[1; 1000]);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 501]).unwrap();
        let r = read_wav(&p);
        assert!(matches!(r, Err(Error::Parse { .. })), "{r:?}");
        std::fs::write(&p, &bytes[..20]).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.wav");
        let w = Waveform::new(vec![0.5, -0.25, 32767.0 / 32768.0, -1.0], 16000).unwrap();
        write_wav(&w, &p).unwrap();
        assert_eq!(read_wav(&p).unwrap(), w);
    }
}
