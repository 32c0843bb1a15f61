//! SDR/ISR/SIR/SAR of hand-made estimates against two references.
//!
//!     cargo run --release --example evaluate

use ntfsep::eval::{score, Evaluator};
use ntfsep::Signal;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(seed: u64) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Signal::new(8000, (0..2).map(|_| (0..8000).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()).unwrap()
}

fn main() -> ntfsep::Result<()> {
    let refs = vec![noise(1), noise(2)];
    let blend = |a: f64, b: f64| {
        let ch = (0..2)
            .map(|c| (0..8000).map(|t| a * refs[0].channels[c][t] + b * refs[1].channels[c][t]).collect())
            .collect();
        Signal::new(8000, ch).unwrap()
    };
    // 20 dB and 10 dB of leakage
    let estimates = vec![blend(1.0, 0.1), blend(0.316, 1.0)];
    let report = score(&estimates, &refs, 32)?;
    print!("{}", report.to_table());
    print!("{}", report.to_key_values());

    let parts = Evaluator::new(&refs, 32)?.decompose(&estimates[0], 0)?;
    let energy = |x: &[Vec<f64>]| x.iter().flatten().map(|v| v * v).sum::<f64>();
    println!(
        "estimate 1 energy split: target {:.1}, spatial {:.2e}, interference {:.1}, artifacts {:.2e}",
        energy(&parts.target),
        energy(&parts.spatial),
        energy(&parts.interference),
        energy(&parts.artifacts)
    );
    Ok(())
}
