//! Renders a two-microphone mixture of three voices from a TOML spec and
//! writes the mixture plus one reference image per source.
//!
//!     cargo run --release --example synth_mixture -- [dir]

use std::path::PathBuf;

use ntfsep::corpus::{utterance, voice_bank};
use ntfsep::io::{synth_mixture, write_wav, MixSpec, SampleFormat};
use ntfsep::Signal;

fn main() -> ntfsep::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scene".into()));
    std::fs::create_dir_all(&dir)?;
    let fs = 8000;
    for (i, voice) in voice_bank(3).iter().enumerate() {
        let s = Signal::mono(fs, utterance(voice, 3.0, fs, 10 + i as u64));
        write_wav(dir.join(format!("{}.wav", voice.label)), &s, SampleFormat::Float32)?;
    }
    let spec = MixSpec::from_toml(
        r#"
        output = "mix.wav"
        seed = 5
        t60 = 0.13

        [[source]]
        path = "voice1.wav"
        delays = [3.0, 0.0]

        [[source]]
        path = "voice2.wav"
        delays = [0.0, 0.0]
        gain = 0.8

        [[source]]
        path = "voice3.wav"
        delays = [0.0, 2.5]
        "#,
    )?;
    let out = synth_mixture(&spec, &dir)?;
    println!("mixture {} ({} samples)", out.mixture_path.display(), out.mixture.len());
    for p in &out.reference_paths {
        println!("reference {}", p.display());
    }
    Ok(())
}
