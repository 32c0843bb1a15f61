//! Spectral-basis prior information: offline training, blind extraction
//! from multichannel observations, and detection in a basis library.

use log::warn;
use rand::Rng;

use crate::betafac::{mu_apply, mu_terms, total_divergence, Beta, NonnegMatrix};
use crate::error::{shape_err, Error, Result};
use crate::signal::Signal;
use crate::stft::{analyze, StftConfig};

/// `Ω × K` nonnegative basis with a source label.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    pub label: String,
    matrix: NonnegMatrix,
}

impl SpectralBasis {
    pub fn new(label: impl Into<String>, matrix: NonnegMatrix) -> Result<Self> {
        if matrix.rows() == 0 || matrix.cols() == 0 {
            return Err(Error::InvalidInput("spectral basis must be nonempty".into()));
        }
        Ok(Self {
            label: label.into(),
            matrix,
        })
    }

    pub fn matrix(&self) -> &NonnegMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> NonnegMatrix {
        self.matrix
    }

    pub fn bins(&self) -> usize {
        self.matrix.rows()
    }

    pub fn k(&self) -> usize {
        self.matrix.cols()
    }
}

/// Ordered blocks `[U_1 | U_2 | … | U_Z]` sharing `Ω` and `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisLibrary {
    blocks: Vec<SpectralBasis>,
}

impl BasisLibrary {
    pub fn new(blocks: Vec<SpectralBasis>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::InvalidInput("library needs at least one block".into()))?;
        let (bins, k) = (first.bins(), first.k());
        for (z, b) in blocks.iter().enumerate() {
            if b.bins() != bins || b.k() != k {
                return Err(shape_err(
                    "build_library",
                    format!("{bins}x{k} blocks"),
                    format!("block {z} is {}x{}", b.bins(), b.k()),
                ));
            }
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[SpectralBasis] {
        &self.blocks
    }

    pub fn block(&self, z: usize) -> &SpectralBasis {
        &self.blocks[z]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn bins(&self) -> usize {
        self.blocks[0].bins()
    }

    pub fn k(&self) -> usize {
        self.blocks[0].k()
    }

    pub fn width(&self) -> usize {
        self.len() * self.k()
    }

    /// Maps a column of the concatenated matrix to `(block, column)`.
    pub fn locate(&self, column: usize) -> (usize, usize) {
        (column / self.k(), column % self.k())
    }

    /// The `Ω × ZK` concatenation.
    pub fn concatenated(&self) -> NonnegMatrix {
        let k = self.k();
        NonnegMatrix::from_fn(self.bins(), self.width(), |i, j| self.blocks[j / k].matrix.get(i, j % k))
    }
}

/// Concatenates trained bases into a library.
pub fn build_library(bases: Vec<SpectralBasis>) -> Result<BasisLibrary> {
    BasisLibrary::new(bases)
}

/// Per-column contributions of a library, normalised so the largest is one.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionVector {
    values: Vec<f64>,
    k: usize,
    degenerate: bool,
}

impl ContributionVector {
    /// Normalises `raw` by its maximum. An all-zero (or non-finite) input is
    /// degenerate and becomes all ones.
    pub fn from_raw(raw: Vec<f64>, k: usize) -> Result<Self> {
        if k == 0 || raw.is_empty() || raw.len() % k != 0 {
            return Err(shape_err("ContributionVector", format!("multiple of K = {k}"), raw.len()));
        }
        let max = raw.iter().cloned().fold(0.0, f64::max);
        if !(max > 0.0) || !max.is_finite() {
            return Ok(Self {
                values: vec![1.0; raw.len()],
                k,
                degenerate: true,
            });
        }
        Ok(Self {
            values: raw.iter().map(|x| x.max(0.0) / max).collect(),
            k,
            degenerate: false,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// True when the observations carried no information (all-zero input).
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// `Σ_k d_z(k)` for every block.
    pub fn block_sums(&self) -> Vec<f64> {
        self.values.chunks(self.k).map(|c| c.iter().sum()).collect()
    }

    /// Mean normalized contribution of each block, `Σ_k d_z(k) / K`, in
    /// `[0, 1]`. Grows as the block explains the data more exclusively.
    pub fn block_likelihoods(&self) -> Vec<f64> {
        self.block_sums().iter().map(|x| x / self.k as f64).collect()
    }
}

/// Index of the block with the largest summed contribution; ties go to the
/// lowest index.
pub fn select_block(d: &ContributionVector) -> usize {
    let mut best = 0;
    let sums = d.block_sums();
    for (z, &s) in sums.iter().enumerate() {
        if s > sums[best] {
            best = z;
        }
    }
    best
}

/// One library block per source tensor. Duplicates are allowed (the outer
/// loop may correct them later) but logged.
pub fn select_bases(ds: &[ContributionVector], lib: &BasisLibrary, n: usize) -> Result<Vec<usize>> {
    if n > lib.len() {
        return Err(Error::InvalidInput(format!(
            "cannot select {n} sources from a library of {} blocks",
            lib.len()
        )));
    }
    if ds.len() != n {
        return Err(shape_err("select_bases", format!("{n} contribution vectors"), ds.len()));
    }
    let picks: Vec<usize> = ds.iter().map(select_block).collect();
    for (i, a) in picks.iter().enumerate() {
        if picks[..i].contains(a) {
            warn!("library block {a} detected for more than one source: {picks:?}");
            break;
        }
    }
    Ok(picks)
}

/// Power spectra of training utterances concatenated along time.
///
/// Channels are averaged; frames more than 60 dB below the loudest frame of
/// their utterance are dropped.
pub fn training_matrix(utterances: &[Signal], cfg: &StftConfig) -> Result<NonnegMatrix> {
    let bins = cfg.num_bins();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for sig in utterances {
        let spec = analyze(sig, cfg)?;
        let m = spec.channels() as f64;
        let frames: Vec<Vec<f64>> = (0..spec.frames())
            .map(|l| {
                (0..bins)
                    .map(|b| spec.point(b, l).iter().map(|z| z.norm_sqr()).sum::<f64>() / m)
                    .collect()
            })
            .collect();
        let energy: Vec<f64> = frames.iter().map(|f| f.iter().sum()).collect();
        let peak = energy.iter().cloned().fold(0.0, f64::max);
        let gate = peak * 1e-6;
        columns.extend(frames.into_iter().zip(&energy).filter(|(_, &e)| e > gate && e > 0.0).map(|(f, _)| f));
    }
    if columns.is_empty() {
        return Err(Error::InvalidInput("training material is silent".into()));
    }
    let t = columns.len();
    Ok(NonnegMatrix::from_fn(bins, t, |b, l| columns[l][b]))
}

fn check_rank(k: usize, bins: usize, frames: usize) -> Result<()> {
    if k == 0 || k > frames || k > bins {
        return Err(Error::InvalidInput(format!(
            "basis size K = {k} must be in 1..=min(bins = {bins}, frames = {frames})"
        )));
    }
    Ok(())
}

/// Random positive `U` (columns normalised) and `W` scaled so the model mean
/// matches `data_mean`. Draw order: all of `U`, then all of `W`.
fn init_factors<R: Rng>(bins: usize, frames: usize, k: usize, data_mean: f64, rng: &mut R) -> (NonnegMatrix, NonnegMatrix) {
    let mut u = NonnegMatrix::from_fn(bins, k, |_, _| rng.random_range(0.5..1.5));
    u.normalize_columns();
    let mut w = NonnegMatrix::from_fn(k, frames, |_, _| rng.random_range(0.5..1.5));
    let mean = u.matmul(&w).mean();
    if mean > 0.0 && data_mean > 0.0 {
        w.scale(data_mean / mean);
    }
    (u, w)
}

fn fold_column_sums(u: &mut NonnegMatrix, ws: &mut [NonnegMatrix]) {
    let sums = u.normalize_columns();
    for w in ws {
        let cols = w.cols();
        let data = w.as_mut_slice();
        for (k, &s) in sums.iter().enumerate() {
            if s > 0.0 {
                data[k * cols..(k + 1) * cols].iter_mut().for_each(|x| *x *= s);
            }
        }
    }
}

/// One training iteration: `U` step, `W` step, then unit-sum columns with
/// the sums moved into `W`.
pub fn train_step(vt: &NonnegMatrix, u: &mut NonnegMatrix, w: &mut NonnegMatrix, beta: Beta) {
    extract_step(std::slice::from_ref(vt), u, std::slice::from_mut(w), beta);
}

/// `d_β(V | U W)`.
pub fn nmf_objective(v: &NonnegMatrix, u: &NonnegMatrix, w: &NonnegMatrix, beta: Beta) -> Result<f64> {
    total_divergence(v, &u.matmul(w), beta)
}

/// Learns a unit-column-sum basis from the concatenated power spectra `vt`.
pub fn train_basis<R: Rng>(vt: &NonnegMatrix, k: usize, beta: Beta, iters: usize, rng: &mut R) -> Result<SpectralBasis> {
    check_rank(k, vt.rows(), vt.cols())?;
    let (mut u, mut w) = init_factors(vt.rows(), vt.cols(), k, vt.mean(), rng);
    for _ in 0..iters {
        train_step(vt, &mut u, &mut w, beta);
    }
    SpectralBasis::new("", u)
}

/// One extraction iteration on slices `V_m ≈ U W_m`: shared `U` step summed
/// over slices, per-slice `W_m` steps, then column normalisation of `U`.
pub fn extract_step(vc: &[NonnegMatrix], u: &mut NonnegMatrix, ws: &mut [NonnegMatrix], beta: Beta) {
    let (bins, k) = u.shape();
    let mut num = vec![0.0; bins * k];
    let mut den = vec![0.0; bins * k];
    for (v, w) in vc.iter().zip(ws.iter()) {
        let (neg, pos) = mu_terms(v, &u.matmul(w), beta);
        for (a, b) in num.iter_mut().zip(neg.matmul_t(w).as_slice()) {
            *a += b;
        }
        for (a, b) in den.iter_mut().zip(pos.matmul_t(w).as_slice()) {
            *a += b;
        }
    }
    mu_apply(u.as_mut_slice(), &num, &den);
    for (v, w) in vc.iter().zip(ws.iter_mut()) {
        let (neg, pos) = mu_terms(v, &u.matmul(w), beta);
        let (n, d) = (u.t_matmul(&neg), u.t_matmul(&pos));
        mu_apply(w.as_mut_slice(), n.as_slice(), d.as_slice());
    }
    fold_column_sums(u, ws);
}

/// `Σ_m d_β(V_m | U W_m)`.
pub fn extract_objective(vc: &[NonnegMatrix], u: &NonnegMatrix, ws: &[NonnegMatrix], beta: Beta) -> Result<f64> {
    vc.iter().zip(ws).map(|(v, w)| nmf_objective(v, u, w, beta)).sum()
}

/// Warm-startable extraction variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionState {
    pub basis: NonnegMatrix,
    pub activations: Vec<NonnegMatrix>,
}

impl ExtractionState {
    /// Random positive start; every slice gets a copy of the same `W` draw,
    /// so one slice reproduces the training initialisation exactly.
    pub fn init<R: Rng>(vc: &[NonnegMatrix], k: usize, rng: &mut R) -> Result<Self> {
        let first = vc
            .first()
            .ok_or_else(|| Error::InvalidInput("no observation slices".into()))?;
        let (bins, frames) = first.shape();
        if let Some(bad) = vc.iter().find(|v| v.shape() != (bins, frames)) {
            return Err(shape_err("extract_basis", format!("{bins}x{frames}"), format!("{:?}", bad.shape())));
        }
        check_rank(k, bins, frames)?;
        let mean = vc.iter().map(|v| v.mean()).sum::<f64>() / vc.len() as f64;
        let (u, w) = init_factors(bins, frames, k, mean, rng);
        Ok(Self {
            basis: u,
            activations: vec![w; vc.len()],
        })
    }
}

/// Blind extraction of a shared basis from the diagonal observation tensor.
pub fn extract_basis<R: Rng>(vc: &[NonnegMatrix], k: usize, beta: Beta, iters: usize, rng: &mut R) -> Result<SpectralBasis> {
    let mut st = ExtractionState::init(vc, k, rng)?;
    extract_basis_warm(vc, &mut st, beta, iters)
}

/// Continues an extraction from `state`.
pub fn extract_basis_warm(vc: &[NonnegMatrix], state: &mut ExtractionState, beta: Beta, iters: usize) -> Result<SpectralBasis> {
    if vc.len() != state.activations.len() {
        return Err(shape_err("extract_basis", format!("{} slices", state.activations.len()), vc.len()));
    }
    for v in vc {
        if v.shape() != (state.basis.rows(), state.activations[0].cols()) {
            return Err(shape_err(
                "extract_basis",
                format!("{}x{}", state.basis.rows(), state.activations[0].cols()),
                format!("{:?}", v.shape()),
            ));
        }
    }
    for _ in 0..iters {
        extract_step(vc, &mut state.basis, &mut state.activations, beta);
    }
    SpectralBasis::new("extracted", state.basis.clone())
}

/// Detection variables: per-slice diagonal contributions `D_m` (as vectors)
/// and shared library activations.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionState {
    pub contributions: Vec<Vec<f64>>,
    pub activations: NonnegMatrix,
}

impl DetectionState {
    /// `D_m` is the identity scaled so that the initial model mean matches
    /// the mean of slice `m`; activations are uniform in (0.5, 1.5).
    pub fn init<R: Rng>(vc: &[NonnegMatrix], lib: &NonnegMatrix, rng: &mut R) -> Self {
        let frames = vc.first().map_or(0, |v| v.cols());
        let w = NonnegMatrix::from_fn(lib.cols(), frames, |_, _| rng.random_range(0.5..1.5));
        let base = lib.matmul(&w).mean();
        let contributions = vc
            .iter()
            .map(|v| {
                let s = if base > 0.0 && v.mean() > 0.0 { v.mean() / base } else { 1.0 };
                vec![s; lib.cols()]
            })
            .collect();
        Self {
            contributions,
            activations: w,
        }
    }
}

fn scale_rows(w: &NonnegMatrix, d: &[f64]) -> NonnegMatrix {
    let cols = w.cols();
    NonnegMatrix::from_fn(w.rows(), cols, |i, j| d[i] * w.get(i, j))
}

/// One detection iteration: every `D_m` step, then the shared activation
/// step, for `V_m ≈ U_lib D_m W_lib`.
pub fn detect_step(vc: &[NonnegMatrix], lib: &NonnegMatrix, st: &mut DetectionState, beta: Beta) {
    let w = &st.activations;
    let frames = w.cols();
    for (v, d) in vc.iter().zip(st.contributions.iter_mut()) {
        let (neg, pos) = mu_terms(v, &lib.matmul(&scale_rows(w, d)), beta);
        let (a, b) = (lib.t_matmul(&neg), lib.t_matmul(&pos));
        let num: Vec<f64> = (0..d.len())
            .map(|j| (0..frames).map(|l| a.get(j, l) * w.get(j, l)).sum())
            .collect();
        let den: Vec<f64> = (0..d.len())
            .map(|j| (0..frames).map(|l| b.get(j, l) * w.get(j, l)).sum())
            .collect();
        mu_apply(d, &num, &den);
    }
    let zk = lib.cols();
    let mut num = vec![0.0; zk * frames];
    let mut den = vec![0.0; zk * frames];
    for (v, d) in vc.iter().zip(&st.contributions) {
        let (neg, pos) = mu_terms(v, &lib.matmul(&scale_rows(&st.activations, d)), beta);
        let (a, b) = (lib.t_matmul(&neg), lib.t_matmul(&pos));
        for j in 0..zk {
            for l in 0..frames {
                num[j * frames + l] += d[j] * a.get(j, l);
                den[j * frames + l] += d[j] * b.get(j, l);
            }
        }
    }
    mu_apply(st.activations.as_mut_slice(), &num, &den);
}

/// `Σ_m d_β(V_m | U_lib D_m W_lib)`.
pub fn detect_objective(vc: &[NonnegMatrix], lib: &NonnegMatrix, st: &DetectionState, beta: Beta) -> Result<f64> {
    vc.iter()
        .zip(&st.contributions)
        .map(|(v, d)| total_divergence(v, &lib.matmul(&scale_rows(&st.activations, d)), beta))
        .sum()
}

fn check_detection_input(vc: &[NonnegMatrix], lib: &BasisLibrary) -> Result<()> {
    let first = vc
        .first()
        .ok_or_else(|| Error::InvalidInput("no observation slices".into()))?;
    for v in vc {
        if v.rows() != lib.bins() || v.cols() != first.cols() {
            return Err(shape_err(
                "detect_contributions",
                format!("{}x{} slices", lib.bins(), first.cols()),
                format!("{:?}", v.shape()),
            ));
        }
    }
    Ok(())
}

/// Contribution of every library column to the observation tensor, from a
/// fresh initialisation.
pub fn detect_contributions<R: Rng>(
    vc: &[NonnegMatrix],
    lib: &BasisLibrary,
    beta: Beta,
    iters: usize,
    rng: &mut R,
) -> Result<ContributionVector> {
    check_detection_input(vc, lib)?;
    let ulib = lib.concatenated();
    let st = DetectionState::init(vc, &ulib, rng);
    detect_contributions_with_init(vc, lib, beta, iters, st)
}

/// [`detect_contributions`] from a given initial state.
pub fn detect_contributions_with_init(
    vc: &[NonnegMatrix],
    lib: &BasisLibrary,
    beta: Beta,
    iters: usize,
    mut st: DetectionState,
) -> Result<ContributionVector> {
    detect_contributions_warm(vc, lib, beta, iters, &mut st)
}

/// Continues a detection from `st`, leaving the updated state behind.
pub fn detect_contributions_warm(
    vc: &[NonnegMatrix],
    lib: &BasisLibrary,
    beta: Beta,
    iters: usize,
    st: &mut DetectionState,
) -> Result<ContributionVector> {
    check_detection_input(vc, lib)?;
    if st.contributions.len() != vc.len()
        || st.contributions.iter().any(|d| d.len() != lib.width())
        || st.activations.shape() != (lib.width(), vc[0].cols())
    {
        return Err(shape_err(
            "detect_contributions",
            format!("{} slices of width {}", vc.len(), lib.width()),
            format!("{} slices", st.contributions.len()),
        ));
    }
    let ulib = lib.concatenated();
    for _ in 0..iters {
        detect_step(vc, &ulib, st, beta);
    }
    let m = vc.len() as f64;
    let raw: Vec<f64> = (0..lib.width())
        .map(|j| st.contributions.iter().map(|d| d[j]).sum::<f64>() / m)
        .collect();
    let d = ContributionVector::from_raw(raw, lib.k())?;
    if d.is_degenerate() {
        warn!("detection saw no signal energy; contributions are uninformative");
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn beta(v: f64) -> Beta {
        Beta::new(v).unwrap()
    }

    fn exp_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> NonnegMatrix {
        NonnegMatrix::from_fn(r, c, |_, _| -rng.random_range(1e-3f64..1.0).ln())
    }

    fn col_sums(u: &NonnegMatrix) -> Vec<f64> {
        (0..u.cols()).map(|j| u.column(j).iter().sum()).collect()
    }

    #[test]
    fn training_exact_rank_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u0 = exp_mat(&mut rng, 12, 3);
        let w0 = exp_mat(&mut rng, 3, 20);
        let v = u0.matmul(&w0);
        let (mut u, mut w) = init_factors(12, 20, 3, v.mean(), &mut rng);
        let b = beta(1.0);
        let first = nmf_objective(&v, &u, &w, b).unwrap();
        for _ in 0..3000 {
            train_step(&v, &mut u, &mut w, b);
        }
        let last = nmf_objective(&v, &u, &w, b).unwrap();
        assert!(last < 1e-8 * first, "{last} / {first}");
        assert!(col_sums(&u).iter().all(|s| (s - 1.0).abs() < 1e-10));
    }

    #[test]
    fn training_constant_matrix_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = NonnegMatrix::filled(8, 10, 3.0);
        let (mut u, mut w) = init_factors(8, 10, 2, v.mean(), &mut rng);
        for _ in 0..5000 {
            train_step(&v, &mut u, &mut w, beta(0.9));
        }
        let model = u.matmul(&w);
        let err = model.as_slice().iter().map(|x| (x - 3.0).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn rank_one_training_matches_power_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = exp_mat(&mut rng, 6, 9);
        let basis = train_basis(&v, 1, beta(2.0), 2000, &mut rng).unwrap();
        // leading singular vector by power iteration on V Vᵀ
        let g = v.matmul_t(&v);
        let mut x = vec![1.0; 6];
        for _ in 0..500 {
            let y: Vec<f64> = (0..6).map(|i| (0..6).map(|j| g.get(i, j) * x[j]).sum()).collect();
            let s: f64 = y.iter().sum();
            x = y.iter().map(|t| t / s).collect();
        }
        for (a, b) in basis.matrix().column(0).iter().zip(&x) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn rank_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = NonnegMatrix::filled(5, 3, 1.0);
        assert!(train_basis(&v, 4, beta(1.0), 1, &mut rng).is_err());
        assert!(extract_basis(&[v.clone()], 4, beta(1.0), 1, &mut rng).is_err());
    }

    #[test]
    fn single_slice_extraction_is_training() {
        let v = exp_mat(&mut ChaCha8Rng::seed_from_u64(5), 10, 14);
        let a = train_basis(&v, 3, beta(0.6), 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = extract_basis(&[v], 3, beta(0.6), 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.matrix(), b.matrix());
    }

    #[test]
    fn duplicated_slices_extract_same_basis() {
        let v = exp_mat(&mut ChaCha8Rng::seed_from_u64(6), 10, 14);
        let one = extract_basis(&[v.clone()], 3, beta(0.6), 40, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let two = extract_basis(&[v.clone(), v], 3, beta(0.6), 40, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for (a, b) in one.matrix().as_slice().iter().zip(two.matrix().as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn library_layout() {
        let mk = |x: f64| SpectralBasis::new("s", NonnegMatrix::filled(4, 3, x)).unwrap();
        let lib = build_library(vec![mk(1.0)]).unwrap();
        assert_eq!(lib.concatenated(), *lib.block(0).matrix());
        let lib = build_library((0..6).map(|z| mk(z as f64)).collect()).unwrap();
        assert_eq!(lib.width(), 18);
        assert_eq!(lib.locate(2 * 3 + 2), (2, 2));
        assert_eq!(lib.concatenated().get(1, 7), 2.0);
        let bad = SpectralBasis::new("x", NonnegMatrix::filled(5, 3, 1.0)).unwrap();
        assert!(build_library(vec![mk(1.0), bad]).is_err());
    }

    #[test]
    fn selection_rules() {
        let d = ContributionVector::from_raw(vec![0.1, 0.1, 0.2, 0.0, 0.5, 0.5, 0.0, 0.0], 2).unwrap();
        assert_eq!(select_block(&d), 2);
        let tie = ContributionVector::from_raw(vec![1.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(select_block(&tie), 0);
        let mk = |x: f64| SpectralBasis::new("s", NonnegMatrix::filled(4, 2, x)).unwrap();
        let lib = build_library(vec![mk(1.0), mk(2.0)]).unwrap();
        assert!(select_bases(&[tie.clone(), tie.clone(), tie.clone()], &lib, 3).is_err());
        assert_eq!(select_bases(&[tie.clone(), tie], &lib, 2).unwrap(), vec![0, 0]);
    }

    fn toy_library(rng: &mut ChaCha8Rng, z: usize, bins: usize, k: usize) -> BasisLibrary {
        // each block lives mostly on its own band of bins
        let blocks = (0..z)
            .map(|b| {
                let mut u = NonnegMatrix::from_fn(bins, k, |i, _| {
                    let centre = (b * bins / z) as f64;
                    let width = (bins / z) as f64;
                    let dist = (i as f64 - centre - width / 2.0) / width;
                    (-dist * dist * 2.0).exp() * rng.random_range(0.5..1.5) + 1e-3
                });
                u.normalize_columns();
                SpectralBasis::new(format!("b{b}"), u).unwrap()
            })
            .collect();
        build_library(blocks).unwrap()
    }

    #[test]
    fn detection_finds_the_generating_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lib = toy_library(&mut rng, 4, 40, 3);
        for z in 0..4 {
            let w = exp_mat(&mut rng, 3, 30);
            let p = lib.block(z).matrix().matmul(&w);
            let vc = vec![p.clone(), {
                let mut q = p.clone();
                q.scale(0.4);
                q
            }];
            let d = detect_contributions(&vc, &lib, beta(0.3), 100, &mut rng).unwrap();
            assert_eq!(select_block(&d), z);
            assert!((d.values().iter().cloned().fold(0.0, f64::max) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_observations_are_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lib = toy_library(&mut rng, 2, 10, 2);
        let vc = vec![NonnegMatrix::zeros(10, 6); 2];
        let d = detect_contributions(&vc, &lib, beta(0.6), 10, &mut rng).unwrap();
        assert!(d.is_degenerate());
        assert!(d.values().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn training_matrix_drops_silence() {
        let cfg = StftConfig::new(8000, 64, 32).unwrap();
        let mut samples = vec![0.0; 640];
        for (i, s) in samples.iter_mut().enumerate().take(320) {
            *s = (i as f64 * 0.3).sin();
        }
        let v = training_matrix(&[Signal::mono(8000, samples)], &cfg).unwrap();
        assert_eq!(v.rows(), 33);
        assert!(v.cols() < cfg.num_frames(640));
        assert!(v.cols() >= 8);
    }
}
