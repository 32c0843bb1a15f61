//! Estimates source delays with GCC-PHAT and splits the mixture by
//! nearest steering phase, the initialisation used by the separator.
//!
//!     cargo run --release --example tdoa_clustering

use ntfsep::corpus::{utterance, voice_bank};
use ntfsep::eval::score_best_permutation;
use ntfsep::init::{cluster_tf_points, estimate_tdoas, ArrayGeometry};
use ntfsep::io::mix::{render_delayed, Room};
use ntfsep::stft::{analyze, synthesize};
use ntfsep::StftConfig;

fn main() -> ntfsep::Result<()> {
    let fs = 8000;
    let bank = voice_bank(3);
    let sources: Vec<Vec<f64>> = bank.iter().enumerate().map(|(i, v)| utterance(v, 3.0, fs, i as u64)).collect();
    let delays = vec![vec![3.0, 0.0], vec![0.0, 0.0], vec![0.0, 3.0]];
    let (mix, images) = render_delayed(&sources, &delays, &Room::new(fs, 0.0), 0)?;

    let stft = StftConfig::new(fs, 512, 256)?;
    let x = analyze(&mix, &stft)?;
    let taus = estimate_tdoas(&x, &stft, 3, &ArrayGeometry::default())?;
    let in_samples: Vec<f64> = taus.taus.iter().map(|t| t * fs as f64).collect();
    println!("delays (samples): {in_samples:?}");

    let cl = cluster_tf_points(&x, &stft, &taus)?;
    for n in 0..3 {
        let share = cl.labels.iter().filter(|&&l| l == n).count() as f64 / cl.labels.len() as f64;
        println!("cluster {n}: {:.0} % of time-frequency points", 100.0 * share);
    }
    let estimates = cl.images.iter().map(|c| synthesize(c, &stft, mix.len())).collect::<ntfsep::Result<Vec<_>>>()?;
    println!("{}", score_best_permutation(&estimates, &images, 64)?.to_table());
    Ok(())
}
