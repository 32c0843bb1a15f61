//! Separation quality: SDR, ISR, SIR and SAR of estimated source images.
//!
//! Each estimate channel is split into four orthogonal-by-construction
//! parts by least-squares projections onto delayed copies of the
//! references:
//!
//! - target: projection onto the matching reference channel (gain only)
//! - spatial distortion: the rest of the projection onto all delayed
//!   channels of the matching reference
//! - interference: what the other references add to that projection
//! - artifacts: the remainder
//!
//! Signals are zero-padded by `filter_len − 1` samples so that every delayed
//! reference fits entirely, which makes the Gram matrices exact
//! cross-correlations.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{shape_err, Error, Result};
use crate::signal::Signal;

pub const DEFAULT_FILTER_LEN: usize = 512;
/// Metrics are clamped to ±this many decibels.
pub const CAP_DB: f64 = 250.0;
/// Diagonal loading of the Gram matrices, relative to their largest
/// diagonal entry. Delayed copies of the channels of one reverberant image
/// are nearly collinear and an unloaded solve returns noise.
const LOADING: f64 = 1e-9;
/// A reference whose energy the earlier references explain to within this
/// fraction is rejected as linearly dependent.
const DEPENDENCE_TOL: f64 = 1e-6;

/// Components of one estimate, each channel of length `len + filter_len − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub target: Vec<Vec<f64>>,
    pub spatial: Vec<Vec<f64>>,
    pub interference: Vec<Vec<f64>>,
    pub artifacts: Vec<Vec<f64>>,
}

fn energy(x: &[Vec<f64>]) -> f64 {
    x.iter().flatten().map(|v| v * v).sum()
}

fn add(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

/// `10·log10(num/den)` clamped to ±[`CAP_DB`]; a zero numerator is −cap.
pub fn ratio_db(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        return -CAP_DB;
    }
    if den <= 0.0 {
        return CAP_DB;
    }
    (10.0 * (num / den).log10()).clamp(-CAP_DB, CAP_DB)
}

/// Per-source metrics in decibels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceMetrics {
    pub sdr: f64,
    pub isr: f64,
    pub sir: f64,
    pub sar: f64,
}

impl Components {
    pub fn metrics(&self) -> SourceMetrics {
        let t = energy(&self.target);
        let ts = add(&self.target, &self.spatial);
        let tsi = add(&ts, &self.interference);
        let distortion = add(&add(&self.spatial, &self.interference), &self.artifacts);
        SourceMetrics {
            sdr: ratio_db(t, energy(&distortion)),
            isr: ratio_db(t, energy(&self.spatial)),
            sir: ratio_db(energy(&ts), energy(&self.interference)),
            sar: ratio_db(energy(&tsi), energy(&self.artifacts)),
        }
    }

    /// Sum of the four parts, which equals the zero-padded estimate.
    pub fn total(&self) -> Vec<Vec<f64>> {
        add(&add(&self.target, &self.spatial), &add(&self.interference, &self.artifacts))
    }
}

struct Spectra {
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    nfft: usize,
}

impl Spectra {
    fn new(nfft: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            fft: planner.plan_fft_forward(nfft),
            ifft: planner.plan_fft_inverse(nfft),
            nfft,
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(self.nfft, Complex64::new(0.0, 0.0));
        self.fft.process(&mut buf);
        buf
    }

    fn inverse(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.ifft.process(&mut buf);
        let s = 1.0 / self.nfft as f64;
        buf.iter().map(|c| c.re * s).collect()
    }

    /// `r(k) = Σ_u a(u)·b(u+k)` for `k` in `−(lags−1)..lags`, indexed by `k + lags − 1`.
    fn xcorr(&self, a: &[Complex64], b: &[Complex64], lags: usize) -> Vec<f64> {
        let prod: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x.conj() * y).collect();
        let r = self.inverse(prod);
        (0..2 * lags - 1)
            .map(|i| {
                let k = i as isize - (lags as isize - 1);
                r[k.rem_euclid(self.nfft as isize) as usize]
            })
            .collect()
    }
}

/// Least-squares projector onto delayed copies of a set of signals.
struct Projector {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    members: Vec<usize>,
}

/// Precomputed reference data shared by all decompositions.
pub struct Evaluator {
    filter_len: usize,
    len: usize,
    channels: usize,
    spectra: Spectra,
    /// Spectra of every reference channel, source-major.
    ref_spec: Vec<Vec<Complex64>>,
    ref_energy: Vec<f64>,
    per_source: Vec<Projector>,
    all: Projector,
}

impl Evaluator {
    pub fn new(references: &[Signal], filter_len: usize) -> Result<Self> {
        let first = references
            .first()
            .ok_or_else(|| Error::InvalidInput("no reference signals".into()))?;
        if filter_len == 0 {
            return Err(Error::Domain("filter length must be positive".into()));
        }
        let (len, channels) = (first.len(), first.num_channels());
        for r in references {
            if r.len() != len || r.num_channels() != channels {
                return Err(shape_err(
                    "references",
                    format!("{channels}x{len}"),
                    format!("{}x{}", r.num_channels(), r.len()),
                ));
            }
        }
        let spectra = Spectra::new((len + 2 * filter_len).next_power_of_two());
        let flat: Vec<&Vec<f64>> = references.iter().flat_map(|r| r.channels.iter()).collect();
        let ref_spec: Vec<Vec<Complex64>> = flat.par_iter().map(|c| spectra.forward(c)).collect();
        let ref_energy = flat.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();

        let count = flat.len();
        let mut corr = vec![Vec::new(); count * count];
        let pairs: Vec<(usize, usize)> = (0..count).flat_map(|a| (a..count).map(move |b| (a, b))).collect();
        let computed: Vec<Vec<f64>> = pairs
            .par_iter()
            .map(|&(a, b)| spectra.xcorr(&ref_spec[a], &ref_spec[b], filter_len))
            .collect();
        for ((a, b), r) in pairs.into_iter().zip(computed) {
            if a != b {
                corr[b * count + a] = r.iter().rev().copied().collect();
            }
            corr[a * count + b] = r;
        }

        let build = |members: Vec<usize>| -> Option<Projector> {
            let size = members.len() * filter_len;
            let mut gram = DMatrix::from_fn(size, size, |row, col| {
                let (a, i) = (members[row / filter_len], row % filter_len);
                let (b, k) = (members[col / filter_len], col % filter_len);
                corr[a * count + b][i + filter_len - 1 - k]
            });
            let load = LOADING * gram.diagonal().max();
            if !(load > 0.0) {
                return None;
            }
            for d in 0..size {
                gram[(d, d)] += load;
            }
            gram.cholesky().map(|chol| Projector { chol, members })
        };
        let channels_of = |n: usize| (n * channels..(n + 1) * channels).collect::<Vec<_>>();

        let mut per_source = Vec::with_capacity(references.len());
        for n in 0..references.len() {
            per_source.push(build(channels_of(n)).ok_or(Error::RankDeficient { source_index: n })?);
        }
        let all = build((0..count).collect()).ok_or(Error::RankDeficient { source_index: 0 })?;
        let ev = Self {
            filter_len,
            len,
            channels,
            spectra,
            ref_spec,
            ref_energy,
            per_source,
            all,
        };
        // a reference that the earlier ones already explain makes the
        // interference/target split meaningless
        for n in 1..references.len() {
            let earlier = build((0..n * channels).collect()).ok_or(Error::RankDeficient { source_index: n })?;
            let own: Vec<Vec<Complex64>> = channels_of(n).iter().map(|&a| ev.ref_spec[a].clone()).collect();
            let proj = ev.project(&earlier, &own);
            let resid: f64 = proj
                .iter()
                .zip(&references[n].channels)
                .map(|(p, r)| p.iter().zip(r.iter().chain(std::iter::repeat(&0.0))).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .sum();
            let total: f64 = channels_of(n).iter().map(|&a| ev.ref_energy[a]).sum();
            if resid <= DEPENDENCE_TOL * total {
                return Err(Error::RankDeficient { source_index: n });
            }
        }
        Ok(ev)
    }

    pub fn num_sources(&self) -> usize {
        self.per_source.len()
    }

    fn project(&self, p: &Projector, est_spec: &[Vec<Complex64>]) -> Vec<Vec<f64>> {
        let l = self.filter_len;
        let size = p.members.len() * l;
        // Σ_u s_a(u)·e(u+i) for each member a and lag i
        let cross: Vec<Vec<f64>> = (0..p.members.len() * est_spec.len())
            .into_par_iter()
            .map(|j| {
                let (slot, col) = (j / est_spec.len(), j % est_spec.len());
                self.spectra.xcorr(&self.ref_spec[p.members[slot]], &est_spec[col], l)
            })
            .collect();
        let rhs = DMatrix::from_fn(size, est_spec.len(), |row, col| {
            cross[(row / l) * est_spec.len() + col][l - 1 + row % l]
        });
        let coef = p.chol.solve(&rhs);
        let out_len = self.len + l - 1;
        (0..est_spec.len())
            .map(|col| {
                let mut acc = vec![Complex64::new(0.0, 0.0); self.spectra.nfft];
                for (slot, &a) in p.members.iter().enumerate() {
                    let taps: Vec<f64> = (0..l).map(|i| coef[(slot * l + i, col)]).collect();
                    let h = self.spectra.forward(&taps);
                    for (o, (x, y)) in acc.iter_mut().zip(h.iter().zip(&self.ref_spec[a])) {
                        *o += x * y;
                    }
                }
                let mut y = self.spectra.inverse(acc);
                y.truncate(out_len);
                y
            })
            .collect()
    }

    /// Splits `estimate` against reference `target`.
    pub fn decompose(&self, estimate: &Signal, target: usize) -> Result<Components> {
        if target >= self.num_sources() {
            return Err(Error::InvalidInput(format!("no reference {target}")));
        }
        if estimate.len() != self.len || estimate.num_channels() != self.channels {
            return Err(shape_err(
                "estimate",
                format!("{}x{}", self.channels, self.len),
                format!("{}x{}", estimate.num_channels(), estimate.len()),
            ));
        }
        let l = self.filter_len;
        let out_len = self.len + l - 1;
        let est_spec: Vec<Vec<Complex64>> = estimate.channels.iter().map(|c| self.spectra.forward(c)).collect();
        let p_own = self.project(&self.per_source[target], &est_spec);
        let p_all = self.project(&self.all, &est_spec);

        let mut comp = Components {
            target: Vec::new(),
            spatial: Vec::new(),
            interference: Vec::new(),
            artifacts: Vec::new(),
        };
        for m in 0..self.channels {
            let a = target * self.channels + m;
            let refc = self.spectra.xcorr(&self.ref_spec[a], &est_spec[m], 1)[0];
            let gain = if self.ref_energy[a] > 0.0 {
                refc / self.ref_energy[a]
            } else {
                0.0
            };
            let mut padded = estimate.channels[m].clone();
            padded.resize(out_len, 0.0);
            let r = self.spectra.inverse(self.ref_spec[a].clone());
            let t: Vec<f64> = (0..out_len).map(|i| gain * r[i]).collect();
            comp.spatial.push(p_own[m].iter().zip(&t).map(|(p, q)| p - q).collect());
            comp.interference.push(p_all[m].iter().zip(&p_own[m]).map(|(p, q)| p - q).collect());
            comp.artifacts.push(padded.iter().zip(&p_all[m]).map(|(p, q)| p - q).collect());
            comp.target.push(t);
        }
        Ok(comp)
    }
}

/// Convenience wrapper for a single decomposition.
pub fn decompose(estimate: &Signal, references: &[Signal], target: usize, filter_len: usize) -> Result<Components> {
    Evaluator::new(references, filter_len)?.decompose(estimate, target)
}

/// Per-source metrics, their means and the estimate-to-reference
/// assignment used (`assignment[n]` is the reference scored against
/// estimate `n`).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub sources: Vec<SourceMetrics>,
    pub assignment: Vec<usize>,
}

impl MetricReport {
    pub fn mean(&self) -> SourceMetrics {
        let n = self.sources.len().max(1) as f64;
        let sum = |f: fn(&SourceMetrics) -> f64| self.sources.iter().map(f).sum::<f64>() / n;
        SourceMetrics {
            sdr: sum(|m| m.sdr),
            isr: sum(|m| m.isr),
            sir: sum(|m| m.sir),
            sar: sum(|m| m.sar),
        }
    }

    /// Aligned plain-text table, two decimals.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<8}{:>5}{:>10}{:>10}{:>10}{:>10}\n", "source", "ref", "SDR", "ISR", "SIR", "SAR");
        let row = |out: &mut String, name: &str, r: &str, m: &SourceMetrics| {
            let _ = writeln!(
                out,
                "{name:<8}{r:>5}{:>10.2}{:>10.2}{:>10.2}{:>10.2}",
                m.sdr, m.isr, m.sir, m.sar
            );
        };
        for (i, (m, a)) in self.sources.iter().zip(&self.assignment).enumerate() {
            row(&mut out, &(i + 1).to_string(), &(a + 1).to_string(), m);
        }
        row(&mut out, "mean", "", &self.mean());
        out
    }

    /// `key=value` lines for scripts.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let mut put = |prefix: &str, m: &SourceMetrics| {
            for (k, v) in [("sdr", m.sdr), ("isr", m.isr), ("sir", m.sir), ("sar", m.sar)] {
                let _ = writeln!(out, "{prefix}.{k}={v:.2}");
            }
        };
        for (i, m) in self.sources.iter().enumerate() {
            put(&format!("source{}", i + 1), m);
        }
        put("mean", &self.mean());
        let perm: Vec<String> = self.assignment.iter().map(|a| (a + 1).to_string()).collect();
        out.push_str(&format!("assignment={}\n", perm.join(",")));
        out
    }
}

/// Scores estimate `n` against reference `n`.
pub fn score(estimates: &[Signal], references: &[Signal], filter_len: usize) -> Result<MetricReport> {
    if estimates.len() != references.len() {
        return Err(shape_err("estimates", references.len(), estimates.len()));
    }
    let ev = Evaluator::new(references, filter_len)?;
    let sources = estimates
        .par_iter()
        .enumerate()
        .map(|(n, e)| ev.decompose(e, n).map(|c| c.metrics()))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        sources,
        assignment: (0..estimates.len()).collect(),
    })
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Scores under the assignment of estimates to references with the best
/// mean SDR. Ties keep the lexicographically smallest assignment.
pub fn score_best_permutation(
    estimates: &[Signal],
    references: &[Signal],
    filter_len: usize,
) -> Result<MetricReport> {
    let n = estimates.len();
    if n != references.len() {
        return Err(shape_err("estimates", references.len(), n));
    }
    if n > 8 {
        return Err(Error::Domain("best-permutation scoring is limited to 8 sources".into()));
    }
    let ev = Evaluator::new(references, filter_len)?;
    let grid = (0..n * n)
        .into_par_iter()
        .map(|i| ev.decompose(&estimates[i / n], i % n).map(|c| c.metrics()))
        .collect::<Result<Vec<_>>>()?;
    let mut perms = permutations(n);
    perms.sort();
    let total = |p: &[usize]| p.iter().enumerate().map(|(e, &r)| grid[e * n + r].sdr).sum::<f64>();
    let mut best = perms[0].clone();
    for p in &perms[1..] {
        if total(p) > total(&best) {
            best = p.clone();
        }
    }
    Ok(MetricReport {
        sources: best.iter().enumerate().map(|(e, &r)| grid[e * n + r]).collect(),
        assignment: best,
    })
}
