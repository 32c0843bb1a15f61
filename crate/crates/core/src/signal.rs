//! Multichannel sample buffers.

use crate::error::{Error, Result};

/// A multichannel audio buffer in `f64`, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

impl Signal {
    /// Builds a buffer, checking that every channel has the same length.
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidInput("signal has no channels".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidInput("channels differ in length".into()));
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn zeros(sample_rate: u32, num_channels: usize, len: usize) -> Self {
        Self {
            sample_rate,
            channels: vec![vec![0.0; len]; num_channels],
        }
    }

    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Self {
        Self {
            sample_rate,
            channels: vec![samples],
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sum of squared samples over all channels.
    pub fn energy(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|c| c.iter())
            .map(|x| x * x)
            .sum()
    }

    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Elementwise sum of several equally shaped buffers.
    pub fn sum(signals: &[Signal]) -> Result<Signal> {
        let first = signals
            .first()
            .ok_or_else(|| Error::InvalidInput("nothing to sum".into()))?;
        let mut out = first.clone();
        for s in &signals[1..] {
            if s.num_channels() != out.num_channels() || s.len() != out.len() {
                return Err(Error::InvalidInput("cannot sum signals of different shape".into()));
            }
            for (o, c) in out.channels.iter_mut().zip(&s.channels) {
                for (a, b) in o.iter_mut().zip(c) {
                    *a += b;
                }
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, gain: f64) -> Signal {
        Signal {
            sample_rate: self.sample_rate,
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|x| x * gain).collect())
                .collect(),
        }
    }
}
