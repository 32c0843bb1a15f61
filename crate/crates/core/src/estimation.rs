//! M-step: activations and spatial covariances of each source by β-NTF with
//! a fixed spectral basis.
//!
//! The diagonal of `R̃_c` forms an `Ω × L × M` tensor modelled as
//! `diag(r_m) U W`; activations `W` are shared across channels. The
//! off-diagonal entries are then fitted one pair at a time with `U` and `W`
//! held fixed.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::betafac::{divergence_unchecked, model_powers, Beta, ComplexMatrix, NonnegMatrix, EPS};
use crate::error::{shape_err, Error, Result};
use crate::localgauss::{psd_project, tensor_views, HermitianField, ModelParams, SourceParams};

/// Per-channel spatial gains `r_m(ω)`, the diagonal of `R(ω)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagTensor {
    bins: usize,
    slices: Vec<Vec<f64>>,
}

impl DiagTensor {
    pub fn new(slices: Vec<Vec<f64>>) -> Result<Self> {
        let bins = slices.first().map_or(0, Vec::len);
        if slices.is_empty() || slices.iter().any(|s| s.len() != bins) {
            return Err(Error::InvalidInput("diagonal slices must be nonempty and equally long".into()));
        }
        if slices.iter().flatten().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::Domain("diagonal spatial weights must be finite and >= 0".into()));
        }
        Ok(Self { bins, slices })
    }

    pub fn ones(bins: usize, channels: usize) -> Self {
        Self {
            bins,
            slices: vec![vec![1.0; bins]; channels],
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channels(&self) -> usize {
        self.slices.len()
    }

    pub fn slice(&self, m: usize) -> &[f64] {
        &self.slices[m]
    }

    pub fn slice_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.slices[m]
    }
}

/// Complex off-diagonal spatial weights `r_{m1 m2}(ω)` for `m1 < m2`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffDiagWeights {
    pairs: Vec<(usize, usize, Vec<Complex64>)>,
}

impl OffDiagWeights {
    /// All off-diagonal weights equal to one.
    pub fn ones(bins: usize, channels: usize) -> Self {
        let mut pairs = Vec::new();
        for i in 0..channels {
            for j in i + 1..channels {
                pairs.push((i, j, vec![Complex64::new(1.0, 0.0); bins]));
            }
        }
        Self { pairs }
    }

    pub fn pairs(&self) -> &[(usize, usize, Vec<Complex64>)] {
        &self.pairs
    }

    pub fn pair(&self, m1: usize, m2: usize) -> Option<&[Complex64]> {
        self.pairs
            .iter()
            .find(|(i, j, _)| (*i, *j) == (m1, m2))
            .map(|(_, _, w)| w.as_slice())
    }
}

/// Assembles `R(ω)` as a one-frame Hermitian field.
pub fn assemble_spatial(diag: &DiagTensor, off: &OffDiagWeights) -> HermitianField {
    let m = diag.channels();
    let mut f = HermitianField::zeros(diag.bins(), 1, m);
    for b in 0..diag.bins() {
        for i in 0..m {
            f.set(b, 0, i, i, Complex64::new(diag.slices[i][b], 0.0));
        }
        for (i, j, w) in &off.pairs {
            f.set(b, 0, *i, *j, w[b]);
        }
    }
    f
}

/// Splits a one-frame spatial field back into its diagonal and off-diagonal
/// parts.
pub fn split_spatial(field: &HermitianField) -> (DiagTensor, OffDiagWeights) {
    let (bins, _, m) = field.shape();
    let slices = (0..m)
        .map(|i| (0..bins).map(|b| field.get(b, 0, i, i).re.max(0.0)).collect())
        .collect();
    let mut pairs = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            pairs.push((i, j, (0..bins).map(|b| field.get(b, 0, i, j)).collect()));
        }
    }
    (DiagTensor { bins, slices }, OffDiagWeights { pairs })
}

fn check_slices(vc: &[NonnegMatrix], u: &NonnegMatrix, w: &NonnegMatrix, bins: usize, m: usize) -> Result<()> {
    if vc.len() != m {
        return Err(shape_err("estimation", format!("{m} observation slices"), vc.len()));
    }
    if u.cols() != w.rows() || u.rows() != bins {
        return Err(shape_err(
            "estimation",
            format!("basis {bins}x{}", w.rows()),
            format!("{}x{}", u.rows(), u.cols()),
        ));
    }
    for s in vc {
        if s.shape() != (bins, w.cols()) {
            return Err(shape_err(
                "estimation",
                format!("{bins}x{} observation", w.cols()),
                format!("{:?}", s.shape()),
            ));
        }
    }
    Ok(())
}

/// One multiplicative step on the shared activations `W`:
///
/// `W ← W ∘ Σ_m (D_m U)ᵀ[V_m ∘ Λ_m^(β−2)] / Σ_m (D_m U)ᵀ Λ_m^(β−1)`,
/// `Λ_m = D_m U W`, `D_m = diag(r_m)`.
pub fn update_w(
    vc: &[NonnegMatrix],
    u: &NonnegMatrix,
    w: &NonnegMatrix,
    vr: &DiagTensor,
    beta: Beta,
) -> Result<NonnegMatrix> {
    check_slices(vc, u, w, vr.bins(), vr.channels())?;
    let p = u.matmul(w);
    let (bins, frames) = p.shape();
    let b = beta.value();
    let mut neg = vec![0.0; bins * frames];
    let mut pos = vec![0.0; bins * frames];
    for (m, v) in vc.iter().enumerate() {
        let r = vr.slice(m);
        for om in 0..bins {
            let rm = r[om];
            if rm == 0.0 {
                continue;
            }
            let row = om * frames;
            for l in 0..frames {
                let lam = (rm * p.as_slice()[row + l]).max(EPS);
                let (pm1, pm2) = model_powers(lam, b);
                neg[row + l] += rm * v.as_slice()[row + l] * pm2;
                pos[row + l] += rm * pm1;
            }
        }
    }
    let num = u.t_matmul(&NonnegMatrix::from_vec_unchecked(bins, frames, neg));
    let den = u.t_matmul(&NonnegMatrix::from_vec_unchecked(bins, frames, pos));
    let mut out = w.clone();
    crate::betafac::mu_apply(out.as_mut_slice(), num.as_slice(), den.as_slice());
    Ok(out)
}

/// One multiplicative step on a diagonal spatial slice:
///
/// `r(ω) ← r(ω) · Σ_l V Λ^(β−2) P / Σ_l Λ^(β−1) P`, `P = U W`, `Λ = r P`.
pub fn update_spatial_diag(
    vc_slice: &NonnegMatrix,
    u: &NonnegMatrix,
    w: &NonnegMatrix,
    r: &[f64],
    beta: Beta,
) -> Result<Vec<f64>> {
    check_slices(std::slice::from_ref(vc_slice), u, w, r.len(), 1)?;
    let p = u.matmul(w);
    Ok(diag_step(vc_slice, &p, r, beta.value()))
}

fn diag_step(v: &NonnegMatrix, p: &NonnegMatrix, r: &[f64], b: f64) -> Vec<f64> {
    let frames = p.cols();
    r.iter()
        .enumerate()
        .map(|(om, &rm)| {
            if rm == 0.0 {
                return 0.0;
            }
            let (mut num, mut den) = (0.0, 0.0);
            let (vrow, prow) = (v.row(om), p.row(om));
            for l in 0..frames {
                let lam = (rm * prow[l]).max(EPS);
                let (pm1, pm2) = model_powers(lam, b);
                num += vrow[l] * pm2 * prow[l];
                den += pm1 * prow[l];
            }
            rm * num / den.max(EPS)
        })
        .collect()
}

/// One multiplicative step on a complex off-diagonal weight.
///
/// The model `Λ = r P` is complex only through the constant phase of
/// `r(ω)`. The ratio weights every term by the real factor `|Λ|^(β−2)`:
///
/// `r ← r · Σ_l V |Λ|^(β−2) P / Σ_l Λ |Λ|^(β−2) P`,
///
/// which reduces to the diagonal step for real positive data, keeps zero
/// weights at zero and leaves an exactly matched model unchanged.
pub fn update_spatial_offdiag(
    vc_off: &ComplexMatrix,
    u: &NonnegMatrix,
    w: &NonnegMatrix,
    r: &[Complex64],
    beta: Beta,
) -> Result<Vec<Complex64>> {
    if vc_off.shape() != (u.rows(), w.cols()) || r.len() != u.rows() || u.cols() != w.rows() {
        return Err(shape_err(
            "update_spatial_offdiag",
            format!("{}x{} observation, {} weights", u.rows(), w.cols(), u.rows()),
            format!("{:?} observation, {} weights", vc_off.shape(), r.len()),
        ));
    }
    let p = u.matmul(w);
    Ok(offdiag_step(vc_off, &p, r, beta.value()))
}

fn offdiag_step(v: &ComplexMatrix, p: &NonnegMatrix, r: &[Complex64], b: f64) -> Vec<Complex64> {
    let frames = p.cols();
    r.iter()
        .enumerate()
        .map(|(om, &rm)| {
            let mag = rm.norm();
            if mag == 0.0 {
                return rm;
            }
            let mut num = Complex64::new(0.0, 0.0);
            let mut den = Complex64::new(0.0, 0.0);
            let prow = p.row(om);
            for l in 0..frames {
                let a = (mag * prow[l]).max(EPS);
                let (_, pm2) = model_powers(a, b);
                num += v.get(om, l) * (pm2 * prow[l]);
                den += rm * (prow[l] * pm2 * prow[l]);
            }
            let dn = den.norm();
            if dn < EPS {
                den = if dn > 0.0 { den * (EPS / dn) } else { Complex64::new(EPS, 0.0) };
            }
            rm * num / den
        })
        .collect()
}

/// Diagonal-tensor objective `Σ_m Σ d_β(V_m | diag(r_m) U W)`.
pub fn diag_objective(vc: &[NonnegMatrix], u: &NonnegMatrix, w: &NonnegMatrix, vr: &DiagTensor, beta: Beta) -> Result<f64> {
    check_slices(vc, u, w, vr.bins(), vr.channels())?;
    let p = u.matmul(w);
    let b = beta.value();
    let frames = p.cols();
    let mut total = 0.0;
    for (m, v) in vc.iter().enumerate() {
        for (om, &rm) in vr.slice(m).iter().enumerate() {
            for l in 0..frames {
                let x = v.get(om, l);
                if b <= 0.0 && x == 0.0 {
                    return Err(Error::Domain("zero observation with beta <= 0".into()));
                }
                total += divergence_unchecked(x, (rm * p.get(om, l)).max(EPS), b);
            }
        }
    }
    Ok(total)
}

/// Warm-startable estimation variables of one source.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationState {
    pub activations: NonnegMatrix,
    pub diag: DiagTensor,
    pub off: OffDiagWeights,
}

impl EstimationState {
    /// Random activations uniform in (0.5, 1.5) rescaled so that the mean of
    /// `U W` matches `data_mean`; spatial weights start at one.
    pub fn init<R: Rng>(basis: &NonnegMatrix, frames: usize, channels: usize, data_mean: f64, rng: &mut R) -> Self {
        let k = basis.cols();
        let mut w = NonnegMatrix::from_fn(k, frames, |_, _| rng.random_range(0.5..1.5));
        let model_mean = basis.matmul(&w).mean();
        if model_mean > 0.0 && data_mean > 0.0 {
            w.scale(data_mean / model_mean);
        }
        Self {
            activations: w,
            diag: DiagTensor::ones(basis.rows(), channels),
            off: OffDiagWeights::ones(basis.rows(), channels),
        }
    }

    /// Spatial covariance implied by the current weights.
    pub fn spatial(&self) -> HermitianField {
        assemble_spatial(&self.diag, &self.off)
    }

    /// Moves the scale of the spatial weights into the activations so that
    /// slice 0 has unit mean over frequency. `U W D` is unchanged.
    fn fix_gauge(&mut self) {
        let c = self.diag.slice(0).iter().sum::<f64>() / self.diag.bins().max(1) as f64;
        if !(c > 0.0) || !c.is_finite() {
            return;
        }
        for s in &mut self.diag.slices {
            s.iter_mut().for_each(|x| *x /= c);
        }
        for (_, _, w) in &mut self.off.pairs {
            w.iter_mut().for_each(|x| *x /= c);
        }
        self.activations.scale(c);
    }
}

/// Fits one source to its E-step statistics `R̃_c`, basis `U` fixed.
///
/// Runs `iters` rounds of the activation step followed by every diagonal
/// step, then `iters` off-diagonal steps with `W` fixed. The spatial
/// weights are rescaled into `W`, the resulting `R(ω)` is projected onto
/// the PSD cone and the state is updated in place.
pub fn estimate_source(
    rtilde: &HermitianField,
    basis: &NonnegMatrix,
    state: &mut EstimationState,
    iters: usize,
    beta: Beta,
) -> Result<SourceParams> {
    let (bins, frames, m) = rtilde.shape();
    if basis.rows() != bins
        || state.activations.shape() != (basis.cols(), frames)
        || state.diag.bins() != bins
        || state.diag.channels() != m
    {
        return Err(shape_err(
            "estimate_source",
            format!("{bins} bins, {frames} frames, {m} channels, K = {}", basis.cols()),
            format!(
                "activations {:?}, spatial {}x{}",
                state.activations.shape(),
                state.diag.bins(),
                state.diag.channels()
            ),
        ));
    }
    let views = tensor_views(rtilde);
    let b = beta.value();
    for _ in 0..iters {
        state.activations = update_w(&views.diag, basis, &state.activations, &state.diag, beta)?;
        let p = basis.matmul(&state.activations);
        for (mi, v) in views.diag.iter().enumerate() {
            let next = diag_step(v, &p, state.diag.slice(mi), b);
            state.diag.slices[mi] = next;
        }
    }
    let p = basis.matmul(&state.activations);
    for (i, j, v) in &views.off {
        let entry = state
            .off
            .pairs
            .iter_mut()
            .find(|(a, c, _)| (*a, *c) == (*i, *j))
            .expect("pairs cover every m1 < m2");
        for _ in 0..iters.max(1) {
            entry.2 = offdiag_step(v, &p, &entry.2, b);
        }
    }
    state.fix_gauge();
    let spatial = psd_project(&state.spatial());
    let (diag, off) = split_spatial(&spatial);
    state.diag = diag;
    state.off = off;
    Ok(SourceParams {
        basis: basis.clone(),
        activations: state.activations.clone(),
        spatial,
    })
}

/// [`estimate_source`] for every source, in parallel.
pub fn estimate_parameters(
    rtilde: &[HermitianField],
    bases: &[NonnegMatrix],
    states: &mut [EstimationState],
    iters: usize,
    beta: Beta,
) -> Result<ModelParams> {
    if rtilde.len() != bases.len() || rtilde.len() != states.len() {
        return Err(shape_err(
            "estimate_parameters",
            format!("{} sources", rtilde.len()),
            format!("{} bases, {} states", bases.len(), states.len()),
        ));
    }
    let sources = rtilde
        .par_iter()
        .zip(bases.par_iter())
        .zip(states.par_iter_mut())
        .map(|((r, u), s)| estimate_source(r, u, s, iters, beta))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelParams { sources })
}
