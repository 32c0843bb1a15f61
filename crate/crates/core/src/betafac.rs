//! β-divergence and the multiplicative-update kernels shared by every
//! factorization in the crate.
//!
//! The divergence family interpolates between Itakura-Saito (β = 0),
//! Kullback-Leibler (β = 1) and half squared Euclidean distance (β = 2).
//! Multiplicative updates rescale a nonnegative factor by the ratio of the
//! negative and positive parts of the gradient; with a model `Λ` and data
//! `V` those parts are always built from the two maps
//! `V ∘ Λ^(β-2)` and `Λ^(β-1)` returned by [`mu_terms`].

use num_complex::Complex64;

use crate::error::{shape_err, Error, Result};

/// Floor applied to MU denominators and to magnitudes raised to negative powers.
pub const EPS: f64 = 1e-12;

/// Divergence order β.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beta(f64);

impl Beta {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() {
            Ok(Self(value))
        } else {
            Err(Error::Domain(format!("beta must be finite, got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn itakura_saito() -> Self {
        Self(0.0)
    }

    pub fn kullback_leibler() -> Self {
        Self(1.0)
    }
}

impl std::fmt::Display for Beta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `d_β(a | b)`.
///
/// β = 0 and β = 1 use their closed forms. `a = 0` is accepted for β = 1
/// (value `b`) and for β > 0 in the generic branch; it is out of domain for
/// β ≤ 0 where the divergence is infinite.
pub fn beta_divergence(a: f64, b: f64, beta: Beta) -> Result<f64> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::Domain(format!("d_beta requires b > 0, got {b}")));
    }
    if !(a >= 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("d_beta requires a >= 0, got {a}")));
    }
    if a == 0.0 && beta.0 <= 0.0 {
        return Err(Error::Domain(format!(
            "d_beta(0 | b) is infinite for beta = {}",
            beta.0
        )));
    }
    Ok(divergence_unchecked(a, b, beta.0))
}

/// Divergence without domain checks; callers guarantee `b > 0` and `a >= 0`
/// (`a > 0` when β ≤ 0).
#[inline]
pub(crate) fn divergence_unchecked(a: f64, b: f64, beta: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let d = if beta == 0.0 {
        let r = a / b;
        r - r.ln() - 1.0
    } else if beta == 1.0 {
        if a == 0.0 {
            b
        } else {
            a * (a / b).ln() + b - a
        }
    } else {
        let a_pow = if a == 0.0 { 0.0 } else { a.powf(beta) };
        let b_pow_m1 = b.powf(beta - 1.0);
        (a_pow + (beta - 1.0) * b_pow_m1 * b - beta * a * b_pow_m1) / (beta * (beta - 1.0))
    };
    d.max(0.0)
}

/// A dense nonnegative matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NonnegMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl NonnegMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err("NonnegMatrix::new", rows * cols, data.len()));
        }
        if let Some(bad) = data.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(Error::Domain(format!(
                "nonnegative matrix entry must be finite and >= 0, got {bad}"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(value >= 0.0, "nonnegative matrix fill must be >= 0");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds a matrix from `f(row, col)`; negative values are clamped to zero.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j).max(0.0));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(value >= 0.0, "nonnegative matrix entry must be >= 0");
        self.data[row * self.cols + col] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, col)).collect()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn scale(&mut self, factor: f64) {
        assert!(factor >= 0.0);
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn transpose(&self) -> NonnegMatrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Self::from_vec_unchecked(self.cols, self.rows, out)
    }

    /// `self · other`.
    pub fn matmul(&self, other: &NonnegMatrix) -> NonnegMatrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = vec![0.0; self.rows * other.cols];
        gemm(
            self.rows,
            self.cols,
            other.cols,
            &self.data,
            (self.cols as isize, 1),
            &other.data,
            (other.cols as isize, 1),
            &mut out,
        );
        Self::from_vec_unchecked(self.rows, other.cols, out)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &NonnegMatrix) -> NonnegMatrix {
        assert_eq!(self.rows, other.rows, "t_matmul inner dimension");
        let mut out = vec![0.0; self.cols * other.cols];
        gemm(
            self.cols,
            self.rows,
            other.cols,
            &self.data,
            (1, self.cols as isize),
            &other.data,
            (other.cols as isize, 1),
            &mut out,
        );
        Self::from_vec_unchecked(self.cols, other.cols, out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &NonnegMatrix) -> NonnegMatrix {
        assert_eq!(self.cols, other.cols, "matmul_t inner dimension");
        let mut out = vec![0.0; self.rows * other.rows];
        gemm(
            self.rows,
            self.cols,
            other.rows,
            &self.data,
            (self.cols as isize, 1),
            &other.data,
            (1, other.cols as isize),
            &mut out,
        );
        Self::from_vec_unchecked(self.rows, other.rows, out)
    }

    /// Scales every column to unit sum and returns the original sums.
    /// All-zero columns are left untouched and report a sum of zero.
    pub fn normalize_columns(&mut self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, x) in sums.iter_mut().zip(self.row(i)) {
                *s += x;
            }
        }
        for i in 0..self.rows {
            let cols = self.cols;
            for (j, x) in self.data[i * cols..(i + 1) * cols].iter_mut().enumerate() {
                if sums[j] > 0.0 {
                    *x /= sums[j];
                }
            }
        }
        sums
    }

    fn check_same_shape(&self, other: &NonnegMatrix, context: &'static str) -> Result<()> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(shape_err(
                context,
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    // SAFETY: the strides describe matrices that lie entirely inside the
    // borrowed slices (asserted by the callers' dimension checks), and `c`
    // is a distinct, exclusively borrowed m×n row-major buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// A dense complex matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err("ComplexMatrix::new", rows * cols, data.len()));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Domain("complex matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }
}

impl From<&NonnegMatrix> for ComplexMatrix {
    fn from(m: &NonnegMatrix) -> Self {
        Self {
            rows: m.rows,
            cols: m.cols,
            data: m.data.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        }
    }
}

/// Raises one complex value to a real power, keeping its phase:
/// `z^p = |z|^p · e^{i·arg z}`. Zero magnitudes are floored at [`EPS`] when
/// `p < 0`.
#[inline]
pub fn complex_power(z: Complex64, p: f64) -> Complex64 {
    let mag = z.norm();
    if mag == 0.0 {
        return if p < 0.0 {
            Complex64::new(EPS.powf(p), 0.0)
        } else if p == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
    let mag_p = if p < 0.0 { mag.max(EPS).powf(p) } else { mag.powf(p) };
    z * (mag_p / mag)
}

/// Elementwise [`complex_power`].
pub fn elementwise_power(z: &ComplexMatrix, p: f64) -> ComplexMatrix {
    ComplexMatrix {
        rows: z.rows,
        cols: z.cols,
        data: z.data.iter().map(|&v| complex_power(v, p)).collect(),
    }
}

/// Sum of `d_β(a_ij | b_ij)`; entries of `b` are floored at [`EPS`].
pub fn total_divergence(a: &NonnegMatrix, b: &NonnegMatrix, beta: Beta) -> Result<f64> {
    a.check_same_shape(b, "total_divergence")?;
    if beta.0 <= 0.0 && a.data.iter().any(|&x| x == 0.0) {
        return Err(Error::Domain(format!(
            "zero observation is out of domain for beta = {}",
            beta.0
        )));
    }
    Ok(a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| divergence_unchecked(x, y.max(EPS), beta.0))
        .sum())
}

/// One multiplicative update `factor ∘ numerator / max(denominator, EPS)`.
pub fn mu_step(
    numerator: &NonnegMatrix,
    denominator: &NonnegMatrix,
    factor: &NonnegMatrix,
) -> Result<NonnegMatrix> {
    numerator.check_same_shape(denominator, "mu_step")?;
    numerator.check_same_shape(factor, "mu_step")?;
    let mut out = factor.clone();
    mu_apply(out.as_mut_slice(), numerator.as_slice(), denominator.as_slice());
    Ok(out)
}

/// In-place form of [`mu_step`] on raw slices.
#[inline]
pub(crate) fn mu_apply(factor: &mut [f64], numerator: &[f64], denominator: &[f64]) {
    for ((f, &n), &d) in factor.iter_mut().zip(numerator).zip(denominator) {
        *f *= n / d.max(EPS);
    }
}

/// For data `V` and model `Λ` (floored at [`EPS`]) returns
/// `(V ∘ Λ^(β-2), Λ^(β-1))`, the raw material of every MU numerator and
/// denominator.
pub fn mu_terms(data: &NonnegMatrix, model: &NonnegMatrix, beta: Beta) -> (NonnegMatrix, NonnegMatrix) {
    assert_eq!(data.shape(), model.shape(), "mu_terms shape");
    let b = beta.0;
    let mut neg = Vec::with_capacity(data.data.len());
    let mut pos = Vec::with_capacity(data.data.len());
    for (&v, &m) in data.data.iter().zip(&model.data) {
        let m = m.max(EPS);
        let (pm1, pm2) = model_powers(m, b);
        neg.push(v * pm2);
        pos.push(pm1);
    }
    (
        NonnegMatrix::from_vec_unchecked(data.rows, data.cols, neg),
        NonnegMatrix::from_vec_unchecked(data.rows, data.cols, pos),
    )
}

/// `(m^(β-1), m^(β-2))` for a positive model value, avoiding `powf` on the
/// common integer orders.
#[inline]
pub(crate) fn model_powers(m: f64, beta: f64) -> (f64, f64) {
    if beta == 1.0 {
        (1.0, 1.0 / m)
    } else if beta == 2.0 {
        (m, 1.0)
    } else if beta == 0.0 {
        let inv = 1.0 / m;
        (inv, inv * inv)
    } else {
        let pm2 = m.powf(beta - 2.0);
        (pm2 * m, pm2)
    }
}
