//! The outer separation loop: E-step statistics, basis extraction or
//! detection, parameter estimation and Wiener filtering, repeated until the
//! likelihood settles.

use log::{debug, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::betafac::{Beta, NonnegMatrix};
use crate::error::{Error, Result};
use crate::estimation::{estimate_parameters, EstimationState};
use crate::init::{cluster_tf_points, estimate_tdoas, ArrayGeometry, TdoaSet};
use crate::localgauss::{
    apply_gain, empirical_covariance, estep_statistics, gain_from_covariances, neg_log_likelihood, sigma_x,
    tensor_views, GainField, HermitianField, ModelParams, NeighborhoodWindow,
};
use crate::priors::{detect_contributions, extract_basis_warm, select_bases, BasisLibrary, ExtractionState};
use crate::signal::Signal;
use crate::stft::{analyze, synthesize, Spectrogram, StftConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Spectral bases are given, one per source.
    Informed,
    /// Bases are picked from a trained library.
    LibraryDetect,
    /// Bases are extracted from the mixture.
    BlindExtract,
}

/// Prior knowledge handed to [`separate`].
#[derive(Debug, Clone, Copy)]
pub enum Priors<'a> {
    None,
    Bases(&'a [NonnegMatrix]),
    Library(&'a BasisLibrary),
}

#[derive(Debug, Clone)]
pub struct SeparationConfig {
    pub mode: Mode,
    pub num_sources: usize,
    /// Basis size for blind extraction (ignored otherwise).
    pub k: usize,
    /// Estimation, extraction and detection divergences.
    pub beta_s: Beta,
    pub beta_e: Beta,
    pub beta_d: Beta,
    /// Wiener smoothing toward identity.
    pub mu: f64,
    pub outer_iters: usize,
    /// Inner iterations of the first outer pass (cold start).
    pub inner_first: usize,
    /// Inner iterations of later, warm-started passes.
    pub inner_later: usize,
    pub tol: f64,
    pub seed: u64,
    /// Re-run detection every this many outer iterations, and whenever the
    /// objective got worse.
    pub redetect_every: usize,
    pub stft: StftConfig,
    pub neighborhood: NeighborhoodWindow,
    pub geometry: ArrayGeometry,
    /// Known source delays, in source order. Estimated when absent.
    pub taus: Option<Vec<f64>>,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            mode: Mode::BlindExtract,
            num_sources: 3,
            k: 25,
            beta_s: Beta::new(0.6).unwrap(),
            beta_e: Beta::new(0.6).unwrap(),
            beta_d: Beta::new(0.3).unwrap(),
            mu: 0.1,
            outer_iters: 100,
            inner_first: 100,
            inner_later: 10,
            tol: 1e-4,
            seed: 0,
            redetect_every: 1,
            stft: StftConfig::default(),
            neighborhood: NeighborhoodWindow::default(),
            geometry: ArrayGeometry::default(),
            taus: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub images: Vec<Spectrogram>,
    pub waveforms: Vec<Signal>,
    pub params: ModelParams,
    pub taus: TdoaSet,
    /// Minus log-likelihood after every outer iteration.
    pub objective: Vec<f64>,
    /// Library block chosen for each source, per outer iteration.
    pub detected: Vec<Vec<usize>>,
    /// Normalized block likelihoods per source, per outer iteration.
    pub block_likelihoods: Vec<Vec<Vec<f64>>>,
    pub converged: bool,
}

/// True once the relative change `|ξ_t − ξ_{t−1}| / max_s |ξ_s|` has stayed
/// below `tol` for three consecutive steps.
pub fn convergence_check(trace: &[f64], tol: f64) -> bool {
    if trace.len() < 4 {
        return false;
    }
    let scale = trace.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return true;
    }
    trace.windows(2).rev().take(3).all(|w| ((w[1] - w[0]).abs() / scale) < tol)
}

fn check_inputs(x: &Signal, cfg: &SeparationConfig, priors: &Priors) -> Result<()> {
    if x.num_channels() < 2 {
        return Err(Error::InvalidInput("separation needs at least two channels".into()));
    }
    if cfg.num_sources < 1 {
        return Err(Error::InvalidInput("at least one source is required".into()));
    }
    if x.sample_rate != cfg.stft.sample_rate {
        return Err(Error::InvalidInput(format!(
            "mixture rate {} differs from STFT rate {}",
            x.sample_rate, cfg.stft.sample_rate
        )));
    }
    if !(0.0..=1.0).contains(&cfg.mu) {
        return Err(Error::Domain(format!("smoothing factor {} outside [0, 1]", cfg.mu)));
    }
    if let Some(t) = &cfg.taus {
        if t.len() != cfg.num_sources {
            return Err(Error::InvalidInput(format!("{} delays for {} sources", t.len(), cfg.num_sources)));
        }
    }
    match (cfg.mode, priors) {
        (Mode::Informed, Priors::Bases(b)) => {
            if b.len() != cfg.num_sources {
                return Err(Error::InvalidInput(format!("{} bases for {} sources", b.len(), cfg.num_sources)));
            }
            if let Some(bad) = b.iter().find(|u| u.rows() != cfg.stft.num_bins()) {
                return Err(Error::InvalidInput(format!(
                    "basis has {} bins, STFT has {}",
                    bad.rows(),
                    cfg.stft.num_bins()
                )));
            }
        }
        (Mode::LibraryDetect, Priors::Library(lib)) => {
            if lib.bins() != cfg.stft.num_bins() {
                return Err(Error::InvalidInput(format!(
                    "library has {} bins, STFT has {}",
                    lib.bins(),
                    cfg.stft.num_bins()
                )));
            }
        }
        (Mode::BlindExtract, Priors::None) => {}
        (mode, _) => return Err(Error::InvalidInput(format!("priors do not match mode {mode:?}"))),
    }
    Ok(())
}

/// Per-source bookkeeping carried across outer iterations.
enum BasisSource {
    Fixed,
    Extract(Vec<Option<ExtractionState>>),
    Detect { chosen: Vec<usize> },
}

fn data_mean(rt: &HermitianField) -> f64 {
    let v = tensor_views(rt);
    v.diag.iter().map(|d| d.mean()).sum::<f64>() / v.diag.len() as f64
}

/// Runs the full separation on a multichannel waveform.
///
/// Random draws all come from one generator seeded with `cfg.seed`. Within
/// an outer iteration the order is: extraction starts (first iteration
/// only) or detection starts (every detection), in source order; then
/// activation starts for sources that have none yet (first iteration, or
/// after their detected block changed).
pub fn separate(x: &Signal, cfg: &SeparationConfig, priors: Priors) -> Result<SeparationResult> {
    check_inputs(x, cfg, &priors)?;
    let n = cfg.num_sources;
    let spec = analyze(x, &cfg.stft)?;
    let (bins, frames, m) = spec.shape();
    info!("separating {n} sources, {bins} bins x {frames} frames x {m} channels, seed {}", cfg.seed);

    let taus = match &cfg.taus {
        Some(t) => TdoaSet::labelled(t.clone(), cfg.geometry)?,
        None => {
            if cfg.mode == Mode::Informed {
                warn!("informed mode without labelled delays: sources follow ascending delay order");
            }
            estimate_tdoas(&spec, &cfg.stft, n, &cfg.geometry)?
        }
    };
    debug!("delays {:?}", taus.taus);
    let mut images = cluster_tf_points(&spec, &cfg.stft, &taus)?.images;
    let mut sigma_c: Vec<HermitianField> = vec![HermitianField::identity(bins, frames, m, 1.0); n];
    let mut gains: Vec<GainField> = vec![GainField::identity(bins, frames, m); n];
    let rx = empirical_covariance(&spec, Some(&cfg.neighborhood));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut bases: Vec<NonnegMatrix> = match priors {
        Priors::Bases(b) => b.to_vec(),
        _ => Vec::new(),
    };
    let mut basis_source = match cfg.mode {
        Mode::Informed => BasisSource::Fixed,
        Mode::BlindExtract => BasisSource::Extract(vec![None; n]),
        Mode::LibraryDetect => BasisSource::Detect { chosen: Vec::new() },
    };
    let mut states: Vec<Option<EstimationState>> = vec![None; n];
    let mut params = None;
    let mut objective = Vec::new();
    let mut detected = Vec::new();
    let mut likelihoods = Vec::new();
    let mut converged = false;

    for it in 0..cfg.outer_iters {
        let inner = if it == 0 { cfg.inner_first } else { cfg.inner_later };
        let rtilde = (0..n)
            .map(|i| estep_statistics(&images[i], &gains[i], &sigma_c[i], &cfg.neighborhood))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<Vec<NonnegMatrix>> = rtilde.iter().map(|r| tensor_views(r).diag).collect();

        match &mut basis_source {
            BasisSource::Fixed => {}
            BasisSource::Extract(ex) => {
                bases.clear();
                for (i, st) in ex.iter_mut().enumerate() {
                    let (st, iters) = match st {
                        Some(s) => (s, inner),
                        None => (st.insert(ExtractionState::init(&views[i], cfg.k, &mut rng)?), cfg.inner_first),
                    };
                    bases.push(extract_basis_warm(&views[i], st, cfg.beta_e, iters)?.into_matrix());
                }
            }
            BasisSource::Detect { chosen } => {
                let Priors::Library(lib) = priors else { unreachable!() };
                let worsened = objective.len() >= 2 && objective[objective.len() - 1] > objective[objective.len() - 2];
                if chosen.is_empty() || it % cfg.redetect_every.max(1) == 0 || worsened {
                    // Each detection is a fresh factorization: warm-started
                    // contributions drift toward whichever blocks explained
                    // the previous, less separated images.
                    let contributions = views
                        .iter()
                        .map(|v| detect_contributions(v, lib, cfg.beta_d, cfg.inner_first, &mut rng))
                        .collect::<Result<Vec<_>>>()?;
                    let picked = select_bases(&contributions, lib, n)?;
                    likelihoods.push(contributions.iter().map(|d| d.block_likelihoods()).collect());
                    if !chosen.is_empty() {
                        for (i, (a, b)) in chosen.iter().zip(&picked).enumerate() {
                            if a != b {
                                debug!("source {i}: block {a} -> {b}");
                                states[i] = None;
                            }
                        }
                    }
                    *chosen = picked;
                    bases = chosen.iter().map(|&z| lib.block(z).matrix().clone()).collect();
                } else if let Some(last) = likelihoods.last().cloned() {
                    likelihoods.push(last);
                }
                detected.push(chosen.clone());
            }
        }

        let mut ready = Vec::with_capacity(n);
        let mut iters = inner;
        for i in 0..n {
            let st = match states[i].take() {
                Some(s) => s,
                None => {
                    iters = iters.max(cfg.inner_first);
                    let mut fresh = EstimationState::init(&bases[i], frames, m, data_mean(&rtilde[i]), &mut rng);
                    if let Some(p) = params.as_ref().map(|p: &ModelParams| &p.sources[i]) {
                        let (d, o) = crate::estimation::split_spatial(&p.spatial);
                        fresh.diag = d;
                        fresh.off = o;
                    }
                    fresh
                }
            };
            ready.push(st);
        }
        let p = estimate_parameters(&rtilde, &bases, &mut ready, iters, cfg.beta_s)?;
        states = ready.into_iter().map(Some).collect();

        sigma_c = p.sources.iter().map(|s| s.covariance()).collect();
        let sx = sigma_x(&p)?;
        gains = sigma_c
            .iter()
            .map(|c| gain_from_covariances(c, &sx, n, cfg.mu))
            .collect::<Result<Vec<_>>>()?;
        images = gains.iter().map(|g| apply_gain(g, &spec)).collect::<Result<Vec<_>>>()?;
        let xi = neg_log_likelihood(&sx, &rx)?;
        debug!("iteration {it}: objective {xi:.6e}");
        objective.push(xi);
        params = Some(p);
        if convergence_check(&objective, cfg.tol) {
            converged = true;
            break;
        }
    }

    let params = params.ok_or_else(|| Error::InvalidInput("outer_iters must be at least 1".into()))?;
    let waveforms = images
        .iter()
        .map(|c| synthesize(c, &cfg.stft, x.len()))
        .collect::<Result<Vec<_>>>()?;
    info!(
        "finished after {} iterations ({})",
        objective.len(),
        if converged { "converged" } else { "iteration limit" }
    );
    Ok(SeparationResult {
        images,
        waveforms,
        params,
        taus,
        objective,
        detected,
        block_likelihoods: likelihoods,
        converged,
    })
}
