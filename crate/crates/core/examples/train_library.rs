//! Trains one spectral basis per synthetic voice and stores the library.
//!
//!     cargo run --release --example train_library -- [out.ntfl]

use ntfsep::corpus::{utterance, voice_bank};
use ntfsep::io::{read_library, write_library};
use ntfsep::priors::{build_library, train_basis, training_matrix};
use ntfsep::{Beta, Signal, StftConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ntfsep::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "voices.ntfl".into());
    let fs = 8000;
    let stft = StftConfig::new(fs, 512, 256)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut blocks = Vec::new();
    for voice in voice_bank(4) {
        let takes: Vec<Signal> = (0..2).map(|s| Signal::mono(fs, utterance(&voice, 2.0, fs, s))).collect();
        let vt = training_matrix(&takes, &stft)?;
        let mut basis = train_basis(&vt, 10, Beta::new(0.9)?, 100, &mut rng)?;
        basis.label = voice.label.clone();
        println!("{}: {} frames -> K = {}", voice.label, vt.cols(), basis.k());
        blocks.push(basis);
    }
    write_library(&out, &build_library(blocks)?)?;
    let back = read_library(&out)?;
    println!("wrote {out}: {} blocks, {} bins", back.len(), back.bins());
    Ok(())
}
