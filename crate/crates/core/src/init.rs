//! Initial source images: GCC-PHAT delay estimation on the first channel
//! pair and binary time-frequency clustering by inter-channel phase.

use num_complex::Complex64;

use crate::betafac::EPS;
use crate::error::{Error, Result};
use crate::stft::{Spectrogram, StftConfig};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Microphone-pair geometry used to bound the delay search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    /// Distance between the first two microphones in metres.
    pub spacing: f64,
    pub speed_of_sound: f64,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self {
            spacing: 0.2,
            speed_of_sound: SPEED_OF_SOUND,
        }
    }
}

impl ArrayGeometry {
    pub fn max_delay(&self) -> f64 {
        self.spacing / self.speed_of_sound
    }
}

/// One delay per source in seconds, ascending unless built with
/// [`TdoaSet::labelled`]. Positive means channel 2 lags channel 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaSet {
    pub taus: Vec<f64>,
    pub geometry: ArrayGeometry,
}

impl TdoaSet {
    /// Checks that every delay is physically possible and sorts them.
    pub fn new(mut taus: Vec<f64>, geometry: ArrayGeometry) -> Result<Self> {
        let max = geometry.max_delay();
        if let Some(t) = taus.iter().find(|t| !t.is_finite() || t.abs() > max * (1.0 + 1e-9)) {
            return Err(Error::Domain(format!("delay {t} s exceeds the array limit {max} s")));
        }
        taus.sort_by(f64::total_cmp);
        Ok(Self { taus, geometry })
    }

    /// Like [`TdoaSet::new`] but keeps the given order, for sources whose
    /// positions are labelled.
    pub fn labelled(taus: Vec<f64>, geometry: ArrayGeometry) -> Result<Self> {
        let sorted = Self::new(taus.clone(), geometry)?;
        Ok(Self { taus, ..sorted })
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }
}

/// Frame-aggregated PHAT-weighted cross-spectrum `Σ_l X₂X₁* / |X₂X₁*|` of
/// channels 0 and 1.
fn phat_cross_spectrum(x: &Spectrogram) -> Vec<Complex64> {
    (0..x.bins())
        .map(|b| {
            (0..x.frames())
                .map(|l| {
                    let p = x.point(b, l);
                    let c = p[1] * p[0].conj();
                    let n = c.norm();
                    if n > EPS {
                        c / n
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .sum()
        })
        .collect()
}

/// GCC-PHAT correlation `R(τ) = Re Σ_{k≥1} Φ_k e^{jω_k τ}` on a grid of
/// quarter samples over the physical delay range. Returns `(τ, R)` pairs.
pub fn gcc_phat(x: &Spectrogram, cfg: &StftConfig, geometry: &ArrayGeometry) -> Result<Vec<(f64, f64)>> {
    if x.channels() < 2 {
        return Err(Error::InvalidInput("delay estimation needs at least two channels".into()));
    }
    if x.bins() != cfg.num_bins() {
        return Err(Error::InvalidInput("spectrogram does not match the STFT configuration".into()));
    }
    let phi = phat_cross_spectrum(x);
    let fs = cfg.sample_rate as f64;
    let step = 0.25 / fs;
    let half = (geometry.max_delay() / step).floor() as i64;
    Ok((-half..=half)
        .map(|i| {
            let tau = i as f64 * step;
            let r = phi
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, p)| (p * Complex64::from_polar(1.0, cfg.bin_omega(k) * tau)).re)
                .sum();
            (tau, r)
        })
        .collect())
}

/// The `n` largest GCC-PHAT peaks at least one sample apart, ascending.
pub fn estimate_tdoas(x: &Spectrogram, cfg: &StftConfig, n: usize, geometry: &ArrayGeometry) -> Result<TdoaSet> {
    let curve = gcc_phat(x, cfg, geometry)?;
    let mut peaks: Vec<(f64, f64)> = (0..curve.len())
        .filter(|&i| {
            let v = curve[i].1;
            let left = i == 0 || curve[i - 1].1 < v;
            let right = i + 1 == curve.len() || curve[i + 1].1 <= v;
            left && right
        })
        .map(|i| curve[i])
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    let min_sep = 1.0 / cfg.sample_rate as f64 - 1e-12;
    let mut chosen: Vec<f64> = Vec::new();
    for (tau, _) in &peaks {
        if chosen.iter().all(|c| (c - tau).abs() >= min_sep) {
            chosen.push(*tau);
        }
        if chosen.len() == n {
            break;
        }
    }
    if chosen.len() < n {
        chosen.sort_by(f64::total_cmp);
        return Err(Error::NotEnoughPeaks {
            wanted: n,
            found: chosen,
        });
    }
    TdoaSet::new(chosen, *geometry)
}

/// Binary partition of the time-frequency plane and the masked mixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Source index owning each `(bin, frame)`, row-major over bins.
    pub labels: Vec<usize>,
    pub bins: usize,
    pub frames: usize,
    pub images: Vec<Spectrogram>,
}

impl Clustering {
    pub fn mask(&self, n: usize, bin: usize, frame: usize) -> bool {
        self.labels[bin * self.frames + frame] == n
    }
}

/// Assigns every point to the source whose steering phase `e^{−jωτ_n}` is
/// closest on the unit circle to the observed phase of `x₂/x₁`. Points with
/// no usable phase (silent first or second channel, or equal distances)
/// go to the lowest index.
pub fn cluster_tf_points(x: &Spectrogram, cfg: &StftConfig, taus: &TdoaSet) -> Result<Clustering> {
    let n = taus.len();
    if n == 0 {
        return Err(Error::InvalidInput("no delays to cluster on".into()));
    }
    let (bins, frames, m) = x.shape();
    if n > 1 && m < 2 {
        return Err(Error::InvalidInput("clustering needs at least two channels".into()));
    }
    let mut labels = vec![0usize; bins * frames];
    if n > 1 {
        for b in 0..bins {
            let omega = cfg.bin_omega(b);
            let steer: Vec<Complex64> = taus.taus.iter().map(|t| Complex64::from_polar(1.0, -omega * t)).collect();
            for l in 0..frames {
                let p = x.point(b, l);
                if p[0].norm() < EPS || p[1].norm() < EPS {
                    continue;
                }
                let r = p[1] / p[0];
                let q = r / r.norm();
                let mut best = 0;
                let mut best_d = (steer[0] - q).norm();
                for (i, s) in steer.iter().enumerate().skip(1) {
                    let d = (s - q).norm();
                    if d < best_d {
                        best = i;
                        best_d = d;
                    }
                }
                labels[b * frames + l] = best;
            }
        }
    }
    let mut images = vec![Spectrogram::zeros(bins, frames, m); n];
    for b in 0..bins {
        for l in 0..frames {
            let owner = labels[b * frames + l];
            images[owner].point_mut(b, l).copy_from_slice(x.point(b, l));
        }
    }
    Ok(Clustering {
        labels,
        bins,
        frames,
        images,
    })
}
