//! Synthetic multichannel mixtures: each source is convolved per channel
//! with a room impulse response, either read from a file or synthesized as
//! a (fractionally) delayed direct path plus an exponentially decaying
//! white-noise tail.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io::wav::{read_wav, write_wav, SampleFormat};
use crate::signal::Signal;

/// Half-width in samples of the windowed-sinc fractional delay.
pub const SINC_HALF_WIDTH: usize = 16;

/// Default ratio of tail energy to direct-path energy per second of T60.
pub const TAIL_ENERGY_PER_T60: f64 = 4.0;

/// How one source reaches the microphones.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SourceSpec {
    pub path: PathBuf,
    #[serde(default = "one")]
    pub gain: f64,
    /// Direct-path delay per channel in samples; fractional values allowed.
    #[serde(default)]
    pub delays: Option<Vec<f64>>,
    /// Multichannel WAV whose channel `m` is the impulse response to mic `m`.
    #[serde(default)]
    pub rir: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

/// Mixture description, read from TOML.
///
/// ```toml
/// output = "mix.wav"
/// seed = 7
/// t60 = 0.13
///
/// [[source]]
/// path = "a.wav"
/// delays = [0.0, 2.5]
///
/// [[source]]
/// path = "b.wav"
/// gain = 0.8
/// rir = "room_b.wav"
/// ```
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    pub output: PathBuf,
    /// Where the reference images go; defaults to `<output stem>_refs/`.
    #[serde(default)]
    pub reference_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Reverberation time of the synthetic tail in seconds (0 = none).
    #[serde(default)]
    pub t60: f64,
    /// Tail-to-direct energy ratio; defaults to `TAIL_ENERGY_PER_T60 · t60`.
    #[serde(default)]
    pub tail_energy: Option<f64>,
    #[serde(rename = "source")]
    pub sources: Vec<SourceSpec>,
}

impl MixSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::MixSpec(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Synthetic room parameters shared by all sources of a mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Room {
    pub sample_rate: u32,
    pub t60: f64,
    pub tail_energy: f64,
}

impl Room {
    pub fn new(sample_rate: u32, t60: f64) -> Self {
        Self {
            sample_rate,
            t60,
            tail_energy: TAIL_ENERGY_PER_T60 * t60,
        }
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let p = std::f64::consts::PI * x;
        p.sin() / p
    }
}

/// Direct path: a unit delta for integer delays, otherwise a Hann-windowed
/// sinc centred on `delay`. Taps before time zero are dropped.
pub fn direct_path(delay: f64) -> Vec<f64> {
    assert!(delay >= 0.0 && delay.is_finite(), "delay must be nonnegative");
    if delay.fract() == 0.0 {
        let mut h = vec![0.0; delay as usize + 1];
        h[delay as usize] = 1.0;
        return h;
    }
    let half = SINC_HALF_WIDTH as f64;
    let last = delay.floor() as usize + SINC_HALF_WIDTH;
    (0..=last)
        .map(|n| {
            let x = n as f64 - delay;
            if x.abs() >= half {
                0.0
            } else {
                sinc(x) * 0.5 * (1.0 + (std::f64::consts::PI * x / half).cos())
            }
        })
        .collect()
}

/// Direct path plus, when `t60 > 0`, a white-noise tail whose amplitude
/// falls by 60 dB over `t60` seconds and whose energy is `tail_energy`
/// times that of the direct path.
pub fn synthetic_rir<R: Rng>(delay: f64, room: &Room, rng: &mut R) -> Vec<f64> {
    let mut h = direct_path(delay);
    if room.t60 <= 0.0 || room.tail_energy <= 0.0 {
        return h;
    }
    let fs = room.sample_rate as f64;
    let start = h.len();
    let len = (room.t60 * fs).ceil() as usize;
    let rate = 3.0 * std::f64::consts::LN_10 / (room.t60 * fs);
    let tail: Vec<f64> = (0..len)
        .map(|i| rng.random_range(-1.0..1.0) * (-rate * i as f64).exp())
        .collect();
    let direct: f64 = h.iter().map(|v| v * v).sum();
    let e: f64 = tail.iter().map(|v| v * v).sum();
    let g = (room.tail_energy * direct / e).sqrt();
    h.resize(start + len, 0.0);
    for (o, t) in h[start..].iter_mut().zip(tail) {
        *o = g * t;
    }
    h
}

/// `(x * h)[0..x.len()]`, exact for sparse `h`.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let len = x.len();
    let taps: Vec<(usize, f64)> = h.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
    if taps.len() <= 64 {
        let mut y = vec![0.0; len];
        for (d, g) in taps {
            for t in d..len {
                y[t] += g * x[t - d];
            }
        }
        return y;
    }
    let n = (len + h.len()).next_power_of_two();
    let mut planner = FftPlanner::new();
    let (fwd, inv) = (planner.plan_fft_forward(n), planner.plan_fft_inverse(n));
    let spec = |v: &[f64]| {
        let mut b: Vec<Complex64> = v.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        b.resize(n, Complex64::new(0.0, 0.0));
        fwd.process(&mut b);
        b
    };
    let mut prod: Vec<Complex64> = spec(x).iter().zip(spec(h)).map(|(a, b)| a * b).collect();
    inv.process(&mut prod);
    prod[..len].iter().map(|c| c.re / n as f64).collect()
}

/// Image of a mono source through one impulse response per channel.
pub fn render_image(source: &[f64], gain: f64, rirs: &[Vec<f64>], sample_rate: u32) -> Signal {
    Signal {
        sample_rate,
        channels: rirs
            .iter()
            .map(|h| convolve(source, h).into_iter().map(|v| gain * v).collect())
            .collect(),
    }
}

/// Images and their sum for sources given by per-channel delays in a
/// synthetic room. Tail noise is drawn source by source, channel by
/// channel from one generator seeded with `seed`.
pub fn render_delayed(sources: &[Vec<f64>], delays: &[Vec<f64>], room: &Room, seed: u64) -> Result<(Signal, Vec<Signal>)> {
    if sources.len() != delays.len() {
        return Err(Error::MixSpec("one delay list per source is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rirs = Vec::with_capacity(sources.len());
    for d in delays {
        if let Some(bad) = d.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::MixSpec(format!("delay {bad} is not a nonnegative number")));
        }
        rirs.push(d.iter().map(|&v| synthetic_rir(v, room, &mut rng)).collect::<Vec<_>>());
    }
    mix_images(sources, &vec![1.0; sources.len()], &rirs, room.sample_rate)
}

fn mix_images(sources: &[Vec<f64>], gains: &[f64], rirs: &[Vec<Vec<f64>>], fs: u32) -> Result<(Signal, Vec<Signal>)> {
    let m = rirs.first().map_or(0, Vec::len);
    if sources.len() < 2 || m < 2 {
        return Err(Error::MixSpec(format!("need at least 2 sources and 2 channels, got {} and {m}", sources.len())));
    }
    if rirs.iter().any(|r| r.len() != m) {
        return Err(Error::MixSpec("sources disagree on the channel count".into()));
    }
    let len = sources.iter().map(Vec::len).max().unwrap_or(0);
    let images: Vec<Signal> = sources
        .iter()
        .zip(gains)
        .zip(rirs)
        .map(|((s, &g), h)| {
            let mut s = s.clone();
            s.resize(len, 0.0);
            render_image(&s, g, h, fs)
        })
        .collect();
    let mixture = Signal::sum(&images)?;
    Ok((mixture, images))
}

#[derive(Debug, Clone)]
pub struct MixOutput {
    pub mixture: Signal,
    pub images: Vec<Signal>,
    pub mixture_path: PathBuf,
    pub reference_paths: Vec<PathBuf>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Renders a spec and writes the mixture and one reference image per
/// source as float WAV. Relative paths are taken from `base`.
pub fn synth_mixture(spec: &MixSpec, base: &Path) -> Result<MixOutput> {
    let mut rate = None;
    let mut check_rate = |sr: u32, what: &Path| -> Result<()> {
        match rate {
            Some(r) if r != sr => Err(Error::MixSpec(format!("{} has rate {sr}, expected {r}", what.display()))),
            _ => {
                rate = Some(sr);
                Ok(())
            }
        }
    };
    let mut sources = Vec::new();
    let mut prop = Vec::new();
    for s in &spec.sources {
        let path = resolve(base, &s.path);
        let sig = read_wav(&path)?;
        check_rate(sig.sample_rate, &path)?;
        if sig.num_channels() != 1 {
            log::warn!("{}: using the first of {} channels", path.display(), sig.num_channels());
        }
        sources.push(sig.channels.into_iter().next().unwrap_or_default());
        prop.push(match (&s.delays, &s.rir) {
            (Some(d), None) => Ok(d.clone()),
            (None, Some(r)) => {
                let rp = resolve(base, r);
                let h = read_wav(&rp)?;
                check_rate(h.sample_rate, &rp)?;
                Err(h.channels)
            }
            _ => {
                return Err(Error::MixSpec(format!(
                    "{}: give exactly one of `delays` or `rir`",
                    s.path.display()
                )))
            }
        });
    }
    let fs = rate.ok_or_else(|| Error::MixSpec("no sources".into()))?;
    let room = Room {
        sample_rate: fs,
        t60: spec.t60,
        tail_energy: spec.tail_energy.unwrap_or(TAIL_ENERGY_PER_T60 * spec.t60),
    };
    log::info!("mix seed {}", spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rirs = Vec::new();
    for p in prop {
        rirs.push(match p {
            Ok(delays) => {
                if let Some(bad) = delays.iter().find(|v| !v.is_finite() || **v < 0.0) {
                    return Err(Error::MixSpec(format!("delay {bad} is not a nonnegative number")));
                }
                delays.iter().map(|&d| synthetic_rir(d, &room, &mut rng)).collect()
            }
            Err(h) => h,
        });
    }
    let gains: Vec<f64> = spec.sources.iter().map(|s| s.gain).collect();
    let (mixture, images) = mix_images(&sources, &gains, &rirs, fs)?;

    let mixture_path = resolve(base, &spec.output);
    let ref_dir = match &spec.reference_dir {
        Some(d) => resolve(base, d),
        None => {
            let stem = mixture_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            mixture_path.with_file_name(format!("{stem}_refs"))
        }
    };
    std::fs::create_dir_all(&ref_dir)?;
    if let Some(parent) = mixture_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_wav(&mixture_path, &mixture, SampleFormat::Float32)?;
    let mut reference_paths = Vec::new();
    for (n, img) in images.iter().enumerate() {
        let p = ref_dir.join(format!("ref_{}.wav", n + 1));
        write_wav(&p, img, SampleFormat::Float32)?;
        reference_paths.push(p);
    }
    Ok(MixOutput {
        mixture,
        images,
        mixture_path,
        reference_paths,
    })
}
