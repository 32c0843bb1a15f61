//! Informed separation: one pre-trained basis per source and known delays.
//!
//!     cargo run --release --example separate_informed

use ntfsep::corpus::{utterance, voice_bank};
use ntfsep::eval::score;
use ntfsep::io::mix::{render_delayed, Room};
use ntfsep::pipeline::{separate, Mode, Priors, SeparationConfig};
use ntfsep::priors::{train_basis, training_matrix};
use ntfsep::{Beta, NonnegMatrix, Signal, StftConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ntfsep::Result<()> {
    let fs = 8000;
    let stft = StftConfig::new(fs, 512, 256)?;
    let bank = voice_bank(3);

    // bases come from other utterances of the same voices
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bases = bank
        .iter()
        .map(|v| {
            let takes: Vec<Signal> = (0..3).map(|s| Signal::mono(fs, utterance(v, 3.0, fs, 500 + s))).collect();
            Ok(train_basis(&training_matrix(&takes, &stft)?, 15, Beta::new(0.9)?, 200, &mut rng)?.into_matrix())
        })
        .collect::<ntfsep::Result<Vec<NonnegMatrix>>>()?;

    let sources: Vec<Vec<f64>> = bank.iter().enumerate().map(|(i, v)| utterance(v, 3.0, fs, 30 + i as u64)).collect();
    let delays = vec![vec![3.0, 0.0], vec![0.0, 0.0], vec![0.0, 3.0]];
    let (mix, images) = render_delayed(&sources, &delays, &Room::new(fs, 0.13), 2)?;

    let cfg = SeparationConfig {
        mode: Mode::Informed,
        num_sources: 3,
        stft,
        outer_iters: 20,
        // channel-1 delay minus channel-0 delay, in seconds, source order
        taus: Some(delays.iter().map(|d| (d[1] - d[0]) / fs as f64).collect()),
        ..SeparationConfig::default()
    };
    let res = separate(&mix, &cfg, Priors::Bases(&bases))?;
    print!("{}", score(&res.waveforms, &images, 64)?.to_table());
    Ok(())
}
