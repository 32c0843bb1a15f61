//! Local Gaussian model: empirical and model covariances, E-step statistics
//! and smooth multichannel Wiener filtering.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::betafac::{ComplexMatrix, NonnegMatrix, EPS};
use crate::error::{shape_err, Error, Result};
use crate::linalg::CMat;
use crate::stft::Spectrogram;

/// Relative diagonal loading applied before every covariance inversion.
pub const REGULARIZATION: f64 = 1e-9;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[inline]
fn tri_len(m: usize) -> usize {
    m * (m + 1) / 2
}

/// Field of Hermitian `M × M` matrices over `(bin, frame)`.
///
/// Only the upper triangle is stored, so `entry(i, j) == conj(entry(j, i))`
/// holds by construction and diagonal entries are real. A time-invariant
/// field (such as a spatial covariance `R_n(ω)`) has one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianField {
    bins: usize,
    frames: usize,
    m: usize,
    data: Vec<Complex64>,
}

impl HermitianField {
    pub fn zeros(bins: usize, frames: usize, m: usize) -> Self {
        Self {
            bins,
            frames,
            m,
            data: vec![ZERO; bins * frames * tri_len(m)],
        }
    }

    /// `value · I` at every point.
    pub fn identity(bins: usize, frames: usize, m: usize, value: f64) -> Self {
        let mut f = Self::zeros(bins, frames, m);
        for b in 0..bins {
            for l in 0..frames {
                for i in 0..m {
                    f.set(b, l, i, i, Complex64::new(value, 0.0));
                }
            }
        }
        f
    }

    pub fn from_fn(bins: usize, frames: usize, m: usize, mut f: impl FnMut(usize, usize) -> CMat) -> Self {
        let mut out = Self::zeros(bins, frames, m);
        for b in 0..bins {
            for l in 0..frames {
                out.set_matrix(b, l, &f(b, l));
            }
        }
        out
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.m
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.bins, self.frames, self.m)
    }

    #[inline]
    fn offset(&self, bin: usize, frame: usize) -> usize {
        (bin * self.frames + frame) * tri_len(self.m)
    }

    #[inline]
    pub fn get(&self, bin: usize, frame: usize, i: usize, j: usize) -> Complex64 {
        let o = self.offset(bin, frame);
        if i <= j {
            self.data[o + packed(self.m, i, j)]
        } else {
            self.data[o + packed(self.m, j, i)].conj()
        }
    }

    /// Sets entry `(i, j)` and implicitly its conjugate partner. Diagonal
    /// entries keep only the real part.
    #[inline]
    pub fn set(&mut self, bin: usize, frame: usize, i: usize, j: usize, value: Complex64) {
        let o = self.offset(bin, frame);
        let m = self.m;
        if i == j {
            self.data[o + packed(m, i, i)] = Complex64::new(value.re, 0.0);
        } else if i < j {
            self.data[o + packed(m, i, j)] = value;
        } else {
            self.data[o + packed(m, j, i)] = value.conj();
        }
    }

    pub fn matrix(&self, bin: usize, frame: usize) -> CMat {
        CMat::from_fn(self.m, |i, j| self.get(bin, frame, i, j))
    }

    /// Stores the upper triangle of `a`; the lower triangle is ignored.
    pub fn set_matrix(&mut self, bin: usize, frame: usize, a: &CMat) {
        for i in 0..self.m {
            for j in i..self.m {
                self.set(bin, frame, i, j, a.get(i, j));
            }
        }
    }

    pub fn trace(&self, bin: usize, frame: usize) -> f64 {
        (0..self.m).map(|i| self.get(bin, frame, i, i).re).sum()
    }

    pub fn max_abs_diff(&self, other: &HermitianField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn add(&self, other: &HermitianField) -> Result<HermitianField> {
        if self.shape() != other.shape() {
            return Err(shape_err(
                "HermitianField::add",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(HermitianField {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            ..*self
        })
    }

    pub fn scaled(&self, s: f64) -> HermitianField {
        HermitianField {
            data: self.data.iter().map(|a| a * s).collect(),
            ..*self
        }
    }

    fn packed_point(&self, bin: usize, frame: usize) -> &[Complex64] {
        let o = self.offset(bin, frame);
        &self.data[o..o + tri_len(self.m)]
    }
}

/// Position of `(i, j)`, `i <= j`, in the packed upper triangle.
#[inline]
fn packed(m: usize, i: usize, j: usize) -> usize {
    i * m - (i * i - i) / 2 + (j - i)
}

/// Bi-dimensional weighting window over `(Δbin, Δframe)` offsets, centred.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodWindow {
    bins: usize,
    frames: usize,
    weights: Vec<f64>,
}

impl NeighborhoodWindow {
    /// `weights` is `bins × frames`, row-major; both extents must be odd.
    pub fn new(bins: usize, frames: usize, weights: Vec<f64>) -> Result<Self> {
        if bins % 2 == 0 || frames % 2 == 0 || weights.len() != bins * frames {
            return Err(Error::InvalidInput(format!(
                "neighborhood must be odd-sized with {} weights, got {}x{} and {}",
                bins * frames,
                bins,
                frames,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("neighborhood weights must be nonnegative".into()));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidInput("neighborhood weights sum to zero".into()));
        }
        Ok(Self { bins, frames, weights })
    }

    /// Separable Hann-shaped window without the zero end points,
    /// `w(k) = 0.5 − 0.5 cos(2πk/(n+1))`, `k = 1..=n`.
    pub fn hann(bins: usize, frames: usize) -> Result<Self> {
        let taps = |n: usize| -> Vec<f64> {
            (1..=n)
                .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / (n + 1) as f64).cos())
                .collect()
        };
        let (a, b) = (taps(bins), taps(frames));
        let weights = a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect();
        Self::new(bins, frames, weights)
    }

    pub fn uniform(bins: usize, frames: usize) -> Result<Self> {
        Self::new(bins, frames, vec![1.0; bins * frames])
    }

    /// Single-point window; equivalent to the linear (rank-1) covariance.
    pub fn single() -> Self {
        Self {
            bins: 1,
            frames: 1,
            weights: vec![1.0],
        }
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.bins, self.frames)
    }

    pub fn weight(&self, db: usize, dl: usize) -> f64 {
        self.weights[db * self.frames + dl]
    }
}

impl Default for NeighborhoodWindow {
    fn default() -> Self {
        Self::hann(3, 3).expect("3x3 window is valid")
    }
}

/// Parameters of one source: `Σ_c(ω,l) = (U W)(ω,l) · R(ω)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceParams {
    /// `Ω × K` spectral basis.
    pub basis: NonnegMatrix,
    /// `K × L` activations.
    pub activations: NonnegMatrix,
    /// Time-invariant spatial covariance, one frame.
    pub spatial: HermitianField,
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        let (bins, k) = self.basis.shape();
        if self.activations.rows() != k {
            return Err(shape_err("SourceParams", format!("{k} activation rows"), self.activations.rows()));
        }
        if self.spatial.bins() != bins || self.spatial.frames() != 1 {
            return Err(shape_err(
                "SourceParams",
                format!("spatial field {bins} bins x 1 frame"),
                format!("{} x {}", self.spatial.bins(), self.spatial.frames()),
            ));
        }
        Ok(())
    }

    /// `v(ω, l) = u(ω)·w(l)`.
    pub fn variance(&self) -> NonnegMatrix {
        self.basis.matmul(&self.activations)
    }

    /// `Σ_c(ω, l) = v(ω, l) R(ω)`.
    pub fn covariance(&self) -> HermitianField {
        let v = self.variance();
        let (bins, frames) = v.shape();
        let m = self.spatial.channels();
        let t = tri_len(m);
        let mut out = HermitianField::zeros(bins, frames, m);
        out.data
            .par_chunks_mut(frames * t)
            .enumerate()
            .for_each(|(b, chunk)| {
                let r = self.spatial.packed_point(b, 0);
                for l in 0..frames {
                    let s = v.get(b, l);
                    for (o, &x) in chunk[l * t..(l + 1) * t].iter_mut().zip(r) {
                        *o = x * s;
                    }
                }
            });
        out
    }
}

/// Parameter set `θ` of all sources.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub sources: Vec<SourceParams>,
}

impl ModelParams {
    /// Checks every source and their mutual consistency; returns
    /// `(bins, frames, channels)`.
    pub fn validate(&self) -> Result<(usize, usize, usize)> {
        let first = self
            .sources
            .first()
            .ok_or_else(|| Error::InvalidInput("model has no sources".into()))?;
        first.validate()?;
        let dims = (first.basis.rows(), first.activations.cols(), first.spatial.channels());
        for s in &self.sources[1..] {
            s.validate()?;
            let d = (s.basis.rows(), s.activations.cols(), s.spatial.channels());
            if d != dims {
                return Err(shape_err("ModelParams", format!("{dims:?}"), format!("{d:?}")));
            }
        }
        Ok(dims)
    }
}

/// Per-point `M × M` gain matrices (full storage; gains are not Hermitian).
#[derive(Debug, Clone, PartialEq)]
pub struct GainField {
    bins: usize,
    frames: usize,
    m: usize,
    data: Vec<Complex64>,
}

impl GainField {
    pub fn identity(bins: usize, frames: usize, m: usize) -> Self {
        let mut data = vec![ZERO; bins * frames * m * m];
        for p in data.chunks_mut(m * m) {
            for i in 0..m {
                p[i * m + i] = Complex64::new(1.0, 0.0);
            }
        }
        Self { bins, frames, m, data }
    }

    pub fn zeros(bins: usize, frames: usize, m: usize) -> Self {
        Self {
            bins,
            frames,
            m,
            data: vec![ZERO; bins * frames * m * m],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.bins, self.frames, self.m)
    }

    pub fn matrix(&self, bin: usize, frame: usize) -> CMat {
        let n = self.m * self.m;
        let o = (bin * self.frames + frame) * n;
        CMat::from_rows(self.m, self.data[o..o + n].to_vec())
    }

    pub fn set_matrix(&mut self, bin: usize, frame: usize, g: &CMat) {
        let n = self.m * self.m;
        let o = (bin * self.frames + frame) * n;
        self.data[o..o + n].copy_from_slice(g.as_slice());
    }
}

/// Empirical covariance of a spectrogram.
///
/// `None` gives the linear form `x xᴴ` at each point. With a window the
/// outer products are averaged over the neighbourhood, with the weights
/// renormalised over the in-bounds part at the edges.
pub fn empirical_covariance(spec: &Spectrogram, win: Option<&NeighborhoodWindow>) -> HermitianField {
    let (bins, frames, m) = spec.shape();
    let t = tri_len(m);
    let mut outer = vec![ZERO; bins * frames * t];
    outer.par_chunks_mut(t).enumerate().for_each(|(p, o)| {
        let x = spec.point(p / frames, p % frames);
        let mut k = 0;
        for i in 0..m {
            for j in i..m {
                o[k] = x[i] * x[j].conj();
                k += 1;
            }
        }
    });
    let win = match win {
        None => {
            return HermitianField {
                bins,
                frames,
                m,
                data: outer,
            }
        }
        Some(w) if w.extent() == (1, 1) => {
            return HermitianField {
                bins,
                frames,
                m,
                data: outer,
            }
        }
        Some(w) => w,
    };
    let (wb, wl) = win.extent();
    let (hb, hl) = ((wb / 2) as isize, (wl / 2) as isize);
    let mut data = vec![ZERO; bins * frames * t];
    data.par_chunks_mut(frames * t).enumerate().for_each(|(b, chunk)| {
        let mut acc = vec![ZERO; t];
        for l in 0..frames {
            acc.iter_mut().for_each(|a| *a = ZERO);
            let mut norm = 0.0;
            for db in -hb..=hb {
                let bb = b as isize + db;
                if bb < 0 || bb >= bins as isize {
                    continue;
                }
                for dl in -hl..=hl {
                    let ll = l as isize + dl;
                    if ll < 0 || ll >= frames as isize {
                        continue;
                    }
                    let w = win.weight((db + hb) as usize, (dl + hl) as usize);
                    if w == 0.0 {
                        continue;
                    }
                    norm += w;
                    let o = (bb as usize * frames + ll as usize) * t;
                    for (a, &v) in acc.iter_mut().zip(&outer[o..o + t]) {
                        *a += v * w;
                    }
                }
            }
            let dst = &mut chunk[l * t..(l + 1) * t];
            if norm > 0.0 {
                for (d, a) in dst.iter_mut().zip(&acc) {
                    *d = a / norm;
                }
            }
        }
    });
    HermitianField {
        bins,
        frames,
        m,
        data,
    }
}

/// Mixture covariance `Σ_x = Σ_n v_n R_n`.
pub fn sigma_x(params: &ModelParams) -> Result<HermitianField> {
    params.validate()?;
    let mut total = params.sources[0].covariance();
    for s in &params.sources[1..] {
        total = total.add(&s.covariance())?;
    }
    Ok(total)
}

/// Smooth Wiener gain `G = Σ_c [(1−μ)Σ_x + μΣ_c]⁻¹` of source `n`.
///
/// Both covariances are loaded before inversion: each source gets
/// `δ·tr(Σ_x)/(M·N)·I` so the loaded mixture covariance is
/// `Σ_x + δ·tr(Σ_x)/M·I` and the gains of all sources still sum to the
/// identity at `μ = 0`.
pub fn wiener_gain(params: &ModelParams, n: usize, sigma_x: &HermitianField, mu: f64) -> Result<GainField> {
    if n >= params.sources.len() {
        return Err(Error::InvalidInput(format!(
            "source index {n} out of range for {} sources",
            params.sources.len()
        )));
    }
    let sigma_c = params.sources[n].covariance();
    gain_from_covariances(&sigma_c, sigma_x, params.sources.len(), mu)
}

/// [`wiener_gain`] from precomputed covariances of one of `num_sources`
/// sources.
pub fn gain_from_covariances(
    sigma_c: &HermitianField,
    sigma_x: &HermitianField,
    num_sources: usize,
    mu: f64,
) -> Result<GainField> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::Domain(format!("smoothing factor {mu} outside [0, 1]")));
    }
    if sigma_c.shape() != sigma_x.shape() {
        return Err(shape_err(
            "wiener_gain",
            format!("{:?}", sigma_x.shape()),
            format!("{:?}", sigma_c.shape()),
        ));
    }
    let (bins, frames, m) = sigma_x.shape();
    let mut out = GainField::zeros(bins, frames, m);
    let mm = m * m;
    out.data
        .par_chunks_mut(frames * mm)
        .enumerate()
        .try_for_each(|(b, chunk)| -> Result<()> {
            for l in 0..frames {
                let tr = sigma_x.trace(b, l);
                if !(tr > 0.0) || !tr.is_finite() {
                    return Err(Error::Singular { bin: b, frame: l });
                }
                let load = REGULARIZATION * tr / m as f64;
                let mut sc = sigma_c.matrix(b, l);
                sc.add_diagonal(load / num_sources as f64);
                let mut sx = sigma_x.matrix(b, l);
                sx.add_diagonal(load);
                let a = sx.scale(1.0 - mu).add(&sc.scale(mu));
                let inv = a.inverse().ok_or(Error::Singular { bin: b, frame: l })?;
                let g = sc.mul(&inv);
                chunk[l * mm..(l + 1) * mm].copy_from_slice(g.as_slice());
            }
            Ok(())
        })?;
    Ok(out)
}

/// `c̃(ω, l) = G(ω, l) x(ω, l)`.
pub fn apply_gain(gain: &GainField, x: &Spectrogram) -> Result<Spectrogram> {
    if gain.shape() != x.shape() {
        return Err(shape_err(
            "apply_gain",
            format!("{:?}", x.shape()),
            format!("{:?}", gain.shape()),
        ));
    }
    let (bins, frames, m) = x.shape();
    let mut out = Spectrogram::zeros(bins, frames, m);
    let mm = m * m;
    out.as_mut_slice()
        .par_chunks_mut(m)
        .enumerate()
        .for_each(|(p, y)| {
            let g = &gain.data[p * mm..(p + 1) * mm];
            let xp = x.point(p / frames, p % frames);
            for i in 0..m {
                y[i] = (0..m).map(|j| g[i * m + j] * xp[j]).sum();
            }
        });
    Ok(out)
}

/// E-step statistics `R̃_c = R̂_c + (I − G) Σ_c`, with `R̂_c` the windowed
/// empirical covariance of the image estimate `c̃`.
///
/// Diagonal entries can come out negative when the second term is
/// indefinite; [`tensor_views`] floors them.
pub fn estep_statistics(
    c_hat: &Spectrogram,
    gain: &GainField,
    sigma_c: &HermitianField,
    win: &NeighborhoodWindow,
) -> Result<HermitianField> {
    if gain.shape() != c_hat.shape() || sigma_c.shape() != c_hat.shape() {
        return Err(shape_err(
            "estep_statistics",
            format!("{:?}", c_hat.shape()),
            format!("gain {:?}, covariance {:?}", gain.shape(), sigma_c.shape()),
        ));
    }
    let mut r = empirical_covariance(c_hat, Some(win));
    let (_, frames, m) = c_hat.shape();
    let t = tri_len(m);
    let mm = m * m;
    r.data
        .par_chunks_mut(t)
        .enumerate()
        .for_each(|(p, dst)| {
            let (b, l) = (p / frames, p % frames);
            let g = &gain.data[p * mm..(p + 1) * mm];
            let mut k = 0;
            for i in 0..m {
                for j in i..m {
                    // row i of (I - G) times column j of Σ_c
                    let mut s = sigma_c.get(b, l, i, j);
                    for q in 0..m {
                        s -= g[i * m + q] * sigma_c.get(b, l, q, j);
                    }
                    dst[k] += s;
                    k += 1;
                }
            }
            // diagonal stays real
            let mut d = 0;
            for i in 0..m {
                dst[d].im = 0.0;
                d += m - i;
            }
        });
    Ok(r)
}

/// [`estep_statistics`] for source `n` of a parameter set.
pub fn estep_statistics_for(
    c_hat: &Spectrogram,
    gain: &GainField,
    params: &ModelParams,
    n: usize,
    win: &NeighborhoodWindow,
) -> Result<HermitianField> {
    let src = params
        .sources
        .get(n)
        .ok_or_else(|| Error::InvalidInput(format!("source index {n} out of range")))?;
    estep_statistics(c_hat, gain, &src.covariance(), win)
}

/// Clamps the eigenvalues of every matrix in the field at zero.
pub fn psd_project(field: &HermitianField) -> HermitianField {
    let (bins, frames, m) = field.shape();
    let t = tri_len(m);
    let mut out = field.clone();
    out.data.par_chunks_mut(t).enumerate().for_each(|(p, dst)| {
        let a = field.matrix(p / frames, p % frames);
        let (vals, vecs) = a.hermitian_eigen();
        if vals[0] >= 0.0 {
            return;
        }
        let clamped: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
        let b = CMat::from_eigen(&clamped, &vecs);
        let mut k = 0;
        for i in 0..m {
            for j in i..m {
                dst[k] = if i == j { Complex64::new(b.get(i, i).re, 0.0) } else { b.get(i, j) };
                k += 1;
            }
        }
    });
    let _ = bins;
    out
}

/// Diagonal slices and upper off-diagonal entries of a Hermitian field.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorViews {
    /// `M` real `Ω × L` slices, floored at [`EPS`].
    pub diag: Vec<NonnegMatrix>,
    /// `(m1, m2, Ω × L)` for every `m1 < m2`.
    pub off: Vec<(usize, usize, ComplexMatrix)>,
}

impl TensorViews {
    /// Reassembles the field from the views.
    pub fn to_field(&self) -> HermitianField {
        let (bins, frames) = self.diag[0].shape();
        let m = self.diag.len();
        let mut f = HermitianField::zeros(bins, frames, m);
        for b in 0..bins {
            for l in 0..frames {
                for (i, d) in self.diag.iter().enumerate() {
                    f.set(b, l, i, i, Complex64::new(d.get(b, l), 0.0));
                }
                for (i, j, o) in &self.off {
                    f.set(b, l, *i, *j, o.get(b, l));
                }
            }
        }
        f
    }
}

/// Splits a field into the diagonal tensor and the off-diagonal matrices
/// that the factorizations observe.
pub fn tensor_views(field: &HermitianField) -> TensorViews {
    let (bins, frames, m) = field.shape();
    let diag = (0..m)
        .map(|i| NonnegMatrix::from_fn(bins, frames, |b, l| field.get(b, l, i, i).re.max(EPS)))
        .collect();
    let mut off = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            let mut c = ComplexMatrix::zeros(bins, frames);
            for b in 0..bins {
                for l in 0..frames {
                    c.set(b, l, field.get(b, l, i, j));
                }
            }
            off.push((i, j, c));
        }
    }
    TensorViews { diag, off }
}

/// Minus log-likelihood `Σ tr(Σ_x⁻¹ R̃_x) + log|π Σ_x|` with the same
/// diagonal loading as [`wiener_gain`].
pub fn neg_log_likelihood(sigma_x: &HermitianField, rx: &HermitianField) -> Result<f64> {
    if sigma_x.shape() != rx.shape() {
        return Err(shape_err(
            "neg_log_likelihood",
            format!("{:?}", sigma_x.shape()),
            format!("{:?}", rx.shape()),
        ));
    }
    let (bins, frames, m) = sigma_x.shape();
    let ln_pi = m as f64 * std::f64::consts::PI.ln();
    let per_bin: Result<Vec<f64>> = (0..bins)
        .into_par_iter()
        .map(|b| {
            let mut s = 0.0;
            for l in 0..frames {
                let tr = sigma_x.trace(b, l);
                if !(tr > 0.0) || !tr.is_finite() {
                    return Err(Error::Singular { bin: b, frame: l });
                }
                let mut sx = sigma_x.matrix(b, l);
                sx.add_diagonal(REGULARIZATION * tr / m as f64);
                let inv = sx.inverse().ok_or(Error::Singular { bin: b, frame: l })?;
                let logdet = sx.log_abs_det().ok_or(Error::Singular { bin: b, frame: l })?;
                s += inv.mul(&rx.matrix(b, l)).trace().re + logdet + ln_pi;
            }
            Ok(s)
        })
        .collect();
    Ok(per_bin?.iter().sum())
}
