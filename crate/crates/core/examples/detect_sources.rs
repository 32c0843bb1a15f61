//! Library detection: picks which of six trained voices are present in a
//! three-voice mixture and separates them.
//!
//!     cargo run --release --example detect_sources

use ntfsep::corpus::{utterance, voice_bank};
use ntfsep::io::mix::{render_delayed, Room};
use ntfsep::pipeline::{separate, Mode, Priors, SeparationConfig};
use ntfsep::priors::{build_library, train_basis, training_matrix};
use ntfsep::{Beta, Signal, StftConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ntfsep::Result<()> {
    let fs = 8000;
    let stft = StftConfig::new(fs, 512, 256)?;
    let bank = voice_bank(6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut blocks = Vec::new();
    for v in &bank {
        let takes: Vec<Signal> = (0..3).map(|s| Signal::mono(fs, utterance(v, 3.0, fs, 9000 + s))).collect();
        let mut b = train_basis(&training_matrix(&takes, &stft)?, 15, Beta::new(0.9)?, 200, &mut rng)?;
        b.label = v.label.clone();
        blocks.push(b);
    }
    let lib = build_library(blocks)?;

    let present = [4usize, 0, 3];
    let sources: Vec<Vec<f64>> = present.iter().map(|&i| utterance(&bank[i], 3.0, fs, 40 + i as u64)).collect();
    let delays = vec![vec![3.0, 0.0], vec![0.0, 0.0], vec![0.0, 3.0]];
    let (mix, _) = render_delayed(&sources, &delays, &Room::new(fs, 0.13), 4)?;

    let cfg = SeparationConfig {
        mode: Mode::LibraryDetect,
        num_sources: 3,
        stft,
        outer_iters: 5,
        ..SeparationConfig::default()
    };
    let res = separate(&mix, &cfg, Priors::Library(&lib))?;
    let found = res.detected.last().unwrap();
    let names: Vec<&str> = found.iter().map(|&z| lib.block(z).label.as_str()).collect();
    println!("present: {:?}", present.iter().map(|&z| bank[z].label.as_str()).collect::<Vec<_>>());
    println!("detected: {names:?}");
    for (n, lk) in res.block_likelihoods.last().unwrap().iter().enumerate() {
        let row: Vec<String> = lk.iter().map(|v| format!("{v:.2}")).collect();
        println!("source {n} block likelihoods [{}]", row.join(" "));
    }
    Ok(())
}
