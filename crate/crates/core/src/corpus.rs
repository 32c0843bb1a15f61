//! Synthetic speech-like sources: harmonic voices with a speaker-specific
//! formant envelope and pitch, gated into syllables. Used by the examples
//! and tests where real recordings are not available.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Formant {
    pub freq: f64,
    pub bandwidth: f64,
    pub gain: f64,
}

/// A synthetic speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct Voice {
    pub label: String,
    /// Mean fundamental frequency in Hz.
    pub f0: f64,
    /// A few vowel-like envelopes; each syllable picks one.
    pub vowels: Vec<Vec<Formant>>,
    /// Spectral tilt: envelope falls as `(1 + f/tilt)^-1`.
    pub tilt: f64,
}

impl Voice {
    /// Magnitude of the spectral envelope of `vowel` at `freq` Hz.
    pub fn envelope(&self, vowel: usize, freq: f64) -> f64 {
        let res: f64 = self.vowels[vowel]
            .iter()
            .map(|f| f.gain / (1.0 + ((freq - f.freq) / f.bandwidth).powi(2)))
            .sum();
        (0.02 + res) / (1.0 + freq / self.tilt)
    }
}

const BASE_VOWELS: [[f64; 3]; 3] = [[700.0, 1200.0, 2500.0], [350.0, 2000.0, 2800.0], [500.0, 900.0, 2300.0]];

/// `z` voices with distinct pitch, vocal-tract scaling and tilt.
/// Mean pitches are spaced geometrically over 90–235 Hz, so neighbouring
/// voices stay apart even with the ±8 % syllable glides of [`utterance`].
/// Deterministic.
pub fn voice_bank(z: usize) -> Vec<Voice> {
    let span = (z.max(2) - 1) as f64;
    (0..z)
        .map(|i| {
            let x = i as f64 / span;
            let f0 = 90.0 * 2.6f64.powf(x);
            // formant scaling runs against pitch order, tilt in a third order
            let scale = 0.75 + 0.5 * (((i * 5) % z.max(1)) as f64 / span.max(1.0)).min(1.0);
            let tilt = 500.0 + 1200.0 * (((i * 2 + 1) % z.max(1)) as f64 / span.max(1.0)).min(1.0);
            let vowels = BASE_VOWELS
                .iter()
                .enumerate()
                .map(|(v, f)| {
                    f.iter()
                        .enumerate()
                        .map(|(j, &hz)| Formant {
                            freq: hz * scale * (1.0 + 0.06 * ((i + v + j) % 3) as f64),
                            bandwidth: 60.0 + 40.0 * j as f64 + 20.0 * x,
                            gain: [1.0, 0.6, 0.3][j],
                        })
                        .collect()
                })
                .collect();
            Voice {
                label: format!("voice{}", i + 1),
                f0,
                vowels,
                tilt,
            }
        })
        .collect()
}

/// `duration` seconds of speech-like signal at `sample_rate`, normalized to
/// an RMS of 0.1. Syllables last 120–300 ms with 40–160 ms pauses; pitch
/// glides within ±8 % of the voice mean.
pub fn utterance(voice: &Voice, duration: f64, sample_rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let len = (duration * fs).round() as usize;
    let nyq = fs / 2.0;
    let mut out = vec![0.0; len];
    let mut t0 = (rng.random_range(0.0..0.1) * fs) as usize;
    while t0 < len {
        let syl = (rng.random_range(0.12..0.30) * fs) as usize;
        let end = (t0 + syl).min(len);
        let vowel = rng.random_range(0..voice.vowels.len());
        let f_start = voice.f0 * rng.random_range(0.92..1.08);
        let f_end = voice.f0 * rng.random_range(0.92..1.08);
        let harmonics = (nyq / f_start.max(f_end)).floor() as usize;
        let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let amps: Vec<f64> = (1..=harmonics)
            .map(|h| voice.envelope(vowel, h as f64 * (f_start + f_end) / 2.0))
            .collect();
        let n = (end - t0).max(1) as f64;
        let mut phase = 0.0;
        for (i, o) in out[t0..end].iter_mut().enumerate() {
            let a = i as f64 / n;
            let f0 = f_start + (f_end - f_start) * a;
            phase += std::f64::consts::TAU * f0 / fs;
            let gate = (std::f64::consts::PI * a).sin().powf(0.5);
            let s: f64 = amps
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(h, (amp, p))| amp * ((h + 1) as f64 * phase + p).sin())
                .sum();
            *o = gate * (s + 0.01 * rng.random_range(-1.0..1.0));
        }
        t0 = end + (rng.random_range(0.04..0.16) * fs) as usize;
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.1 / rms);
    }
    out
}
