//! Command-line front end. [`run`] returns the process exit status:
//! 0 on success, 1 on a runtime error, 2 on a usage error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::betafac::{Beta, NonnegMatrix};
use crate::error::{Error, Result};
use crate::eval::{score, score_best_permutation, DEFAULT_FILTER_LEN};
use crate::io::{read_library, read_wav, synth_mixture, write_library, write_wav, MixSpec, SampleFormat};
use crate::pipeline::{separate, Mode, Priors, SeparationConfig};
use crate::priors::{build_library, detect_contributions, train_basis, training_matrix, BasisLibrary};
use crate::signal::Signal;
use crate::stft::{analyze, StftConfig};

#[derive(Debug, Parser)]
#[command(name = "ntfsep", version, about = "Multichannel source separation with beta-NTF and smooth Wiener filtering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn one spectral basis per training file and store them as a library.
    Train(TrainArgs),
    /// Render a mixture and its reference images from a TOML spec.
    Mix(MixArgs),
    /// Separate a multichannel mixture.
    Separate(SeparateArgs),
    /// Rank library blocks by their contribution to a recording.
    Detect(DetectArgs),
    /// BSS-Eval style SDR/ISR/SIR/SAR of estimated images.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct StftArgs {
    /// Analysis window length in samples.
    #[arg(long, default_value_t = 2048)]
    window: usize,
    /// Frame shift in samples.
    #[arg(long, default_value_t = 1024)]
    hop: usize,
}

impl StftArgs {
    fn config(&self, sample_rate: u32) -> Result<StftConfig> {
        StftConfig::new(sample_rate, self.window, self.hop)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training recordings, one per library block.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 25)]
    k: usize,
    #[arg(long, default_value_t = 0.9)]
    beta: f64,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    stft: StftArgs,
}

#[derive(Debug, Args)]
struct MixArgs {
    #[arg(long)]
    spec: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Informed,
    Detect,
    Blind,
}

#[derive(Debug, Args)]
struct SeparateArgs {
    #[arg(long)]
    mix: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Blind)]
    mode: ModeArg,
    /// Library to detect from (detect mode).
    #[arg(long)]
    lib: Option<PathBuf>,
    /// Library files whose blocks are the per-source bases, in source order
    /// (informed mode).
    #[arg(long, num_args = 1..)]
    bases: Vec<PathBuf>,
    /// Number of sources; informed mode takes it from the bases.
    #[arg(long, short = 'n', default_value_t = 3)]
    sources: usize,
    /// Known source delays between channel 1 and channel 0, in samples.
    #[arg(long, num_args = 1.., allow_negative_numbers = true)]
    delays: Vec<f64>,
    #[arg(long = "beta-s", default_value_t = 0.6)]
    beta_s: f64,
    #[arg(long = "beta-e", default_value_t = 0.6)]
    beta_e: f64,
    #[arg(long = "beta-d", default_value_t = 0.3)]
    beta_d: f64,
    #[arg(long, default_value_t = 25)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    mu: f64,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    #[command(flatten)]
    stft: StftArgs,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    mix: PathBuf,
    #[arg(long)]
    lib: PathBuf,
    #[arg(long = "beta-d", default_value_t = 0.3)]
    beta_d: f64,
    /// How many blocks to report as detected.
    #[arg(long, short = 'n', default_value_t = 1)]
    sources: usize,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    stft: StftArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, required = true, num_args = 1..)]
    est: Vec<PathBuf>,
    #[arg(long = "ref", required = true, num_args = 1..)]
    references: Vec<PathBuf>,
    #[arg(long = "filter-len", default_value_t = DEFAULT_FILTER_LEN)]
    filter_len: usize,
    /// Score estimate n against reference n instead of searching the best
    /// assignment.
    #[arg(long)]
    fixed_order: bool,
    /// Also write `key=value` lines here.
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let outcome = match cli.command {
        Command::Train(a) => train(&a),
        Command::Mix(a) => mix(&a),
        Command::Separate(a) => separate_cmd(&a),
        Command::Detect(a) => detect(&a),
        Command::Eval(a) => eval(&a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn configure_threads() {
    let Ok(v) = std::env::var("NTF_THREADS") else { return };
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            // fails harmlessly if a pool already exists (tests, repeated runs)
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        _ => log::warn!("ignoring NTF_THREADS={v:?}"),
    }
}

fn beta(v: f64) -> Result<Beta> {
    Beta::new(v)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn train(a: &TrainArgs) -> Result<()> {
    let b = beta(a.beta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut blocks = Vec::with_capacity(a.inputs.len());
    let mut rate = None;
    for path in &a.inputs {
        let sig = read_wav(path)?;
        if *rate.get_or_insert(sig.sample_rate) != sig.sample_rate {
            return Err(Error::InvalidInput(format!("{} has a different sample rate", path.display())));
        }
        let vt = training_matrix(&[sig.clone()], &a.stft.config(sig.sample_rate)?)?;
        let basis = train_basis(&vt, a.k, b, a.iters, &mut rng)?;
        info!("trained {} ({} frames)", path.display(), vt.cols());
        blocks.push(crate::priors::SpectralBasis::new(stem(path), basis.into_matrix())?);
    }
    let lib = build_library(blocks)?;
    write_library(&a.out, &lib)?;
    println!("wrote {} blocks of K = {} to {}", lib.len(), lib.k(), a.out.display());
    Ok(())
}

fn mix(a: &MixArgs) -> Result<()> {
    let spec = MixSpec::load(&a.spec)?;
    let base = a.spec.parent().unwrap_or(Path::new("."));
    let out = synth_mixture(&spec, base)?;
    println!("mixture: {}", out.mixture_path.display());
    for p in &out.reference_paths {
        println!("reference: {}", p.display());
    }
    Ok(())
}

fn separate_cmd(a: &SeparateArgs) -> Result<()> {
    let x = read_wav(&a.mix)?;
    let mut cfg = SeparationConfig {
        num_sources: a.sources,
        k: a.k,
        beta_s: beta(a.beta_s)?,
        beta_e: beta(a.beta_e)?,
        beta_d: beta(a.beta_d)?,
        mu: a.mu,
        outer_iters: a.iters,
        seed: a.seed,
        stft: a.stft.config(x.sample_rate)?,
        ..SeparationConfig::default()
    };
    if !a.delays.is_empty() {
        cfg.taus = Some(a.delays.iter().map(|d| d / x.sample_rate as f64).collect());
    }
    let lib;
    let bases: Vec<NonnegMatrix>;
    let priors = match a.mode {
        ModeArg::Blind => {
            cfg.mode = Mode::BlindExtract;
            Priors::None
        }
        ModeArg::Detect => {
            let path = a.lib.as_ref().ok_or_else(|| Error::InvalidInput("detect mode needs --lib".into()))?;
            lib = read_library(path)?;
            cfg.mode = Mode::LibraryDetect;
            Priors::Library(&lib)
        }
        ModeArg::Informed => {
            if a.bases.is_empty() {
                return Err(Error::InvalidInput("informed mode needs --bases".into()));
            }
            let mut all = Vec::new();
            for p in &a.bases {
                all.extend(read_library(p)?.blocks().iter().map(|b| b.matrix().clone()));
            }
            bases = all;
            cfg.mode = Mode::Informed;
            cfg.num_sources = bases.len();
            Priors::Bases(&bases)
        }
    };
    let res = separate(&x, &cfg, priors)?;
    std::fs::create_dir_all(&a.out_dir)?;
    for (n, w) in res.waveforms.iter().enumerate() {
        let p = a.out_dir.join(format!("source_{}.wav", n + 1));
        write_wav(&p, w, SampleFormat::Float32)?;
        println!("{}", p.display());
    }
    let taus: Vec<String> = res.taus.taus.iter().map(|t| format!("{:.2}", t * x.sample_rate as f64)).collect();
    println!(
        "delays [{}] samples, {} iterations, converged: {}",
        taus.join(", "),
        res.objective.len(),
        res.converged
    );
    if let Some(last) = res.detected.last() {
        println!("detected blocks {last:?}");
    }
    Ok(())
}

/// Library-block likelihoods for a whole recording, channels treated as
/// slices of one observation tensor.
fn detect(a: &DetectArgs) -> Result<()> {
    let x = read_wav(&a.mix)?;
    let lib: BasisLibrary = read_library(&a.lib)?;
    let spec = analyze(&x, &a.stft.config(x.sample_rate)?)?;
    let vc: Vec<NonnegMatrix> = (0..spec.channels()).map(|m| spec.power(m)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let d = detect_contributions(&vc, &lib, beta(a.beta_d)?, a.iters, &mut rng)?;
    let lik = d.block_likelihoods();
    let mut order: Vec<usize> = (0..lik.len()).collect();
    order.sort_by(|&i, &j| lik[j].total_cmp(&lik[i]).then(i.cmp(&j)));
    for &z in &order {
        println!("{:>3}  {:<20}{:.4}", z, lib.block(z).label, lik[z]);
    }
    let picked: Vec<usize> = order.iter().take(a.sources).copied().collect();
    println!("detected={}", picked.iter().map(|z| z.to_string()).collect::<Vec<_>>().join(","));
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let est = a.est.iter().map(read_wav).collect::<Result<Vec<Signal>>>()?;
    let refs = a.references.iter().map(read_wav).collect::<Result<Vec<Signal>>>()?;
    let report = if a.fixed_order {
        score(&est, &refs, a.filter_len)?
    } else {
        score_best_permutation(&est, &refs, a.filter_len)?
    };
    print!("{}", report.to_table());
    let kv = report.to_key_values();
    match &a.report {
        Some(p) => std::fs::write(p, kv)?,
        None => print!("{kv}"),
    }
    Ok(())
}
