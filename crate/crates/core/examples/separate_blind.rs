//! Blind separation: TDOA initialisation, bases extracted from the mixture.
//!
//!     cargo run --release --example separate_blind -- [outer iterations]

use ntfsep::corpus::{utterance, voice_bank};
use ntfsep::eval::score_best_permutation;
use ntfsep::io::mix::{render_delayed, Room};
use ntfsep::pipeline::{separate, Mode, Priors, SeparationConfig};
use ntfsep::StftConfig;

fn main() -> ntfsep::Result<()> {
    let outer = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let fs = 8000;
    let bank = voice_bank(3);
    let sources: Vec<Vec<f64>> = bank.iter().enumerate().map(|(i, v)| utterance(v, 3.0, fs, 20 + i as u64)).collect();
    let delays = vec![vec![3.0, 0.0], vec![0.0, 0.0], vec![0.0, 3.0]];
    let (mix, images) = render_delayed(&sources, &delays, &Room::new(fs, 0.13), 1)?;

    let cfg = SeparationConfig {
        mode: Mode::BlindExtract,
        num_sources: 3,
        k: 15,
        stft: StftConfig::new(fs, 512, 256)?,
        outer_iters: outer,
        ..SeparationConfig::default()
    };
    let res = separate(&mix, &cfg, Priors::None)?;
    println!(
        "{} outer iterations, objective {:.4e} -> {:.4e}",
        res.objective.len(),
        res.objective[0],
        res.objective.last().unwrap()
    );
    let before = score_best_permutation(&vec![mix.clone(); 3], &images, 64)?;
    let after = score_best_permutation(&res.waveforms, &images, 64)?;
    println!("mixture as estimate: mean SDR {:.2} dB", before.mean().sdr);
    print!("{}", after.to_table());
    Ok(())
}
