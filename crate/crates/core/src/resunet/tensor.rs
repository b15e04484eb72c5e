use crate::error::{Error, Result};

/// Rank-3 activation tensor laid out channel-major: each channel is a
/// contiguous `time × freq` plane.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCTF {
    channels: usize,
    time: usize,
    freq: usize,
    data: Vec<f32>,
}

impl TensorCTF {
    pub fn new(channels: usize, time: usize, freq: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || time == 0 || freq == 0 {
            return Err(Error::Shape(format!("empty tensor {channels}x{time}x{freq}")));
        }
        if data.len() != channels * time * freq {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{time}x{freq} tensor",
                data.len()
            )));
        }
        Ok(TensorCTF {
            channels,
            time,
            freq,
            data,
        })
    }

    pub fn zeros(channels: usize, time: usize, freq: usize) -> Self {
        TensorCTF {
            channels,
            time,
            freq,
            data: vec![0.0; channels * time * freq],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.time, self.freq)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn freq(&self) -> usize {
        self.freq
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.time * self.freq;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, t: usize, f: usize) -> f32 {
        self.data[(c * self.time + t) * self.freq + f]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Zero-extends or truncates the time axis.
    pub fn with_time(&self, time: usize) -> TensorCTF {
        let mut out = TensorCTF::zeros(self.channels, time, self.freq);
        let keep = time.min(self.time) * self.freq;
        for c in 0..self.channels {
            let src = &self.plane(c)[..keep];
            out.data[c * time * self.freq..][..keep].copy_from_slice(src);
        }
        out
    }

    pub(crate) fn add_assign(&mut self, other: &TensorCTF) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "cannot add {:?} to {:?}",
                other.shape(),
                self.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub(crate) fn relu_in_place(&mut self) {
        for v in &mut self.data {
            *v = v.max(0.0);
        }
    }
}
