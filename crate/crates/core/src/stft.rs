//! Multichannel short-time Fourier analysis and weighted overlap-add synthesis.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::betafac::NonnegMatrix;
use crate::error::{shape_err, Error, Result};
use crate::signal::Signal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    /// Periodic Hann window.
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / len as f64).cos()))
                .collect(),
            WindowKind::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    /// 128 ms Hann frames with a 64 ms shift at 16 kHz.
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window_len: 2048,
            hop: 1024,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn new(sample_rate: u32, window_len: usize, hop: usize) -> Result<Self> {
        let cfg = Self {
            sample_rate,
            window_len,
            hop,
            window: WindowKind::Hann,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 {
            return Err(Error::InvalidInput("window length must be >= 2".into()));
        }
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::InvalidInput(format!(
                "hop must be in 1..={}, got {}",
                self.window_len, self.hop
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Number of frames needed to cover `len` samples; the last frame is
    /// zero-padded when it runs past the end.
    pub fn num_frames(&self, len: usize) -> usize {
        if len <= self.window_len {
            1
        } else {
            1 + (len - self.window_len).div_ceil(self.hop)
        }
    }

    /// Angular frequency of bin `k` in rad/s.
    pub fn bin_omega(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 * self.sample_rate as f64 / self.window_len as f64
    }
}

/// Complex STFT tensor indexed `(bin, frame, channel)`; the channel vector of
/// each time-frequency point is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    bins: usize,
    frames: usize,
    channels: usize,
    data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn zeros(bins: usize, frames: usize, channels: usize) -> Self {
        Self {
            bins,
            frames,
            channels,
            data: vec![Complex64::new(0.0, 0.0); bins * frames * channels],
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.bins, self.frames, self.channels)
    }

    #[inline]
    fn offset(&self, bin: usize, frame: usize) -> usize {
        (bin * self.frames + frame) * self.channels
    }

    #[inline]
    pub fn get(&self, bin: usize, frame: usize, channel: usize) -> Complex64 {
        self.data[self.offset(bin, frame) + channel]
    }

    #[inline]
    pub fn set(&mut self, bin: usize, frame: usize, channel: usize, value: Complex64) {
        let o = self.offset(bin, frame);
        self.data[o + channel] = value;
    }

    /// Channel vector `x(ω, l)`.
    #[inline]
    pub fn point(&self, bin: usize, frame: usize) -> &[Complex64] {
        let o = self.offset(bin, frame);
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn point_mut(&mut self, bin: usize, frame: usize) -> &mut [Complex64] {
        let o = self.offset(bin, frame);
        let m = self.channels;
        &mut self.data[o..o + m]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// `|X(ω, l, channel)|²` as a bins × frames matrix.
    pub fn power(&self, channel: usize) -> NonnegMatrix {
        NonnegMatrix::from_fn(self.bins, self.frames, |w, l| self.get(w, l, channel).norm_sqr())
    }

    /// Total squared magnitude.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scaled(&self, gain: Complex64) -> Spectrogram {
        Spectrogram {
            data: self.data.iter().map(|z| z * gain).collect(),
            ..*self
        }
    }

    pub fn add(&self, other: &Spectrogram) -> Result<Spectrogram> {
        if self.shape() != other.shape() {
            return Err(shape_err(
                "Spectrogram::add",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(Spectrogram {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            ..*self
        })
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans {
        forward: planner.plan_fft_forward(n),
        inverse: planner.plan_fft_inverse(n),
    }
}

/// One-sided STFT of every channel. Frame `l` covers samples
/// `[l·hop, l·hop + window_len)`.
pub fn analyze(signal: &Signal, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let len = signal.len();
    if signal.num_channels() == 0 || len < cfg.window_len {
        return Err(Error::InvalidInput(format!(
            "signal of {len} samples is shorter than the {}-sample window",
            cfg.window_len
        )));
    }
    let n = cfg.window_len;
    let frames = cfg.num_frames(len);
    let bins = cfg.num_bins();
    let window = cfg.window.coefficients(n);
    let fft = plans(n).forward;
    let mut out = Spectrogram::zeros(bins, frames, signal.num_channels());
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (m, channel) in signal.channels.iter().enumerate() {
        for l in 0..frames {
            let start = l * cfg.hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                let x = channel.get(start + i).copied().unwrap_or(0.0);
                *slot = Complex64::new(x * window[i], 0.0);
            }
            fft.process(&mut buf);
            for (w, value) in buf.iter().take(bins).enumerate() {
                out.set(w, l, m, *value);
            }
        }
    }
    Ok(out)
}

/// Weighted overlap-add inverse of [`analyze`], normalized by the summed
/// squared window, trimmed to `len` samples. Exact on the fully overlapped
/// interior; the first and last `window_len − hop` samples are attenuated.
/// Samples where the summed squared window vanishes are set to zero.
pub fn synthesize(spec: &Spectrogram, cfg: &StftConfig, len: usize) -> Result<Signal> {
    cfg.validate()?;
    let n = cfg.window_len;
    if spec.bins() != cfg.num_bins() {
        return Err(shape_err("synthesize bins", cfg.num_bins(), spec.bins()));
    }
    if spec.frames() != cfg.num_frames(len) {
        return Err(shape_err("synthesize frames", cfg.num_frames(len), spec.frames()));
    }
    let window = cfg.window.coefficients(n);
    let full_len = (spec.frames() - 1) * cfg.hop + n;
    let mut norm = vec![0.0; full_len];
    for l in 0..spec.frames() {
        for (i, w) in window.iter().enumerate() {
            norm[l * cfg.hop + i] += w * w;
        }
    }
    // Near the ends only one or two tapered frames overlap and the summed
    // squared window goes to zero. Dividing by it there would blow up any
    // spectrogram that is not an exact STFT (a masked one, say), so those
    // samples are divided by the smallest fully-overlapped value instead.
    let period = &norm[(n - cfg.hop).min(full_len)..n.min(full_len)];
    let interior_min = period.iter().cloned().fold(f64::INFINITY, f64::min);
    let norm_floor = if interior_min.is_finite() && interior_min > 0.0 {
        interior_min
    } else {
        1e-10 * norm.iter().cloned().fold(0.0, f64::max)
    };
    let ifft = plans(n).inverse;
    let bins = spec.bins();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut channels = Vec::with_capacity(spec.channels());
    for m in 0..spec.channels() {
        let mut acc = vec![0.0; full_len];
        for l in 0..spec.frames() {
            for k in 0..n {
                buf[k] = if k < bins {
                    spec.get(k, l, m)
                } else {
                    spec.get(n - k, l, m).conj()
                };
            }
            // DC and Nyquist of a real frame are real.
            buf[0].im = 0.0;
            if n % 2 == 0 {
                buf[n / 2].im = 0.0;
            }
            ifft.process(&mut buf);
            let start = l * cfg.hop;
            for (i, w) in window.iter().enumerate() {
                acc[start + i] += buf[i].re / n as f64 * w;
            }
        }
        let samples: Vec<f64> = acc
            .iter()
            .zip(&norm)
            .take(len)
            .map(|(a, &d)| if d > 0.0 { a / d.max(norm_floor) } else { 0.0 })
            .collect();
        channels.push(samples);
    }
    Signal::new(cfg.sample_rate, channels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> StftConfig {
        StftConfig::new(8000, 64, 32).unwrap()
    }

    #[test]
    fn zero_signal_gives_zero_spectrum() {
        let s = Signal::zeros(8000, 2, 300);
        let x = analyze(&s, &small_cfg()).unwrap();
        assert!(x.as_slice().iter().all(|z| z.norm() == 0.0));
        let y = synthesize(&x, &small_cfg(), 300).unwrap();
        assert!(y.channels.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn bin_centred_sinusoid_peaks_at_half_window_sum() {
        let cfg = small_cfg();
        let k = 5;
        let n = cfg.window_len;
        let s: Vec<f64> = (0..400)
            .map(|t| (2.0 * PI * k as f64 * t as f64 / n as f64).cos())
            .collect();
        let x = analyze(&Signal::mono(8000, s), &cfg).unwrap();
        let wsum: f64 = cfg.window.coefficients(n).iter().sum();
        for l in 1..x.frames() - 1 {
            assert!((x.get(k, l, 0).norm() - wsum / 2.0).abs() < 1e-9);
            for w in 0..x.bins() {
                if (w as i64 - k as i64).abs() > 1 {
                    assert!(x.get(w, l, 0).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn impulse_spectrum_is_flat_times_first_window_sample() {
        let cfg = StftConfig {
            window: WindowKind::Rectangular,
            ..small_cfg()
        };
        let mut s = vec![0.0; 200];
        s[0] = 1.0;
        let x = analyze(&Signal::mono(8000, s), &cfg).unwrap();
        for w in 0..x.bins() {
            assert!((x.get(w, 0, 0) - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
        // Periodic Hann is zero at n = 0.
        let mut s = vec![0.0; 200];
        s[0] = 1.0;
        let x = analyze(&Signal::mono(8000, s), &small_cfg()).unwrap();
        assert!(x.point(3, 0)[0].norm() < 1e-15);
    }

    #[test]
    fn short_signal_is_rejected() {
        let s = Signal::zeros(8000, 1, 10);
        assert!(analyze(&s, &small_cfg()).is_err());
        assert!(StftConfig::new(8000, 64, 65).is_err());
    }

    #[test]
    fn synthesize_checks_dimensions() {
        let x = Spectrogram::zeros(10, 4, 1);
        assert!(synthesize(&x, &small_cfg(), 128).is_err());
    }

    #[test]
    fn default_matches_reference_protocol() {
        let cfg = StftConfig::default();
        assert_eq!((cfg.window_len, cfg.hop, cfg.sample_rate), (2048, 1024, 16_000));
        assert_eq!(cfg.num_bins(), 1025);
    }
}
