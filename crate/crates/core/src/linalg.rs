//! Small dense complex matrices for per-point M×M algebra.

use nalgebra::DMatrix;
use num_complex::Complex64;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    n: usize,
    data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![ZERO; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn from_rows(n: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), n * n);
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.n + j] = v;
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn mul(&self, other: &CMat) -> CMat {
        let n = self.n;
        let mut out = CMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[Complex64], out: &mut [Complex64]) {
        let n = self.n;
        for i in 0..n {
            out[i] = (0..n).map(|j| self.data[i * n + j] * x[j]).sum();
        }
    }

    pub fn add(&self, other: &CMat) -> CMat {
        CMat {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        CMat {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> CMat {
        CMat {
            n: self.n,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    pub fn add_diagonal(&mut self, s: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += s;
        }
    }

    pub fn adjoint(&self) -> CMat {
        CMat::from_fn(self.n, |i, j| self.get(j, i).conj())
    }

    pub fn max_abs_diff(&self, other: &CMat) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// LU factorization with partial pivoting. Returns `None` when a pivot
    /// falls below `1e-14` of the largest entry magnitude.
    fn lu(&self) -> Option<(Vec<Complex64>, Vec<usize>, bool)> {
        let n = self.n;
        let mut a = self.data.clone();
        let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return None;
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut odd = false;
        for col in 0..n {
            let (piv, mag) = (col..n)
                .map(|r| (r, a[r * n + col].norm()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if mag <= 1e-14 * scale {
                return None;
            }
            if piv != col {
                for j in 0..n {
                    a.swap(piv * n + j, col * n + j);
                }
                perm.swap(piv, col);
                odd = !odd;
            }
            let p = a[col * n + col];
            for r in col + 1..n {
                let f = a[r * n + col] / p;
                a[r * n + col] = f;
                for j in col + 1..n {
                    let v = a[col * n + j];
                    a[r * n + j] -= f * v;
                }
            }
        }
        Some((a, perm, odd))
    }

    pub fn inverse(&self) -> Option<CMat> {
        let n = self.n;
        let (lu, perm, _) = self.lu()?;
        let mut inv = CMat::zeros(n);
        let mut col = vec![ZERO; n];
        for j in 0..n {
            for i in 0..n {
                col[i] = if perm[i] == j { ONE } else { ZERO };
            }
            for i in 0..n {
                let mut s = col[i];
                for k in 0..i {
                    s -= lu[i * n + k] * col[k];
                }
                col[i] = s;
            }
            for i in (0..n).rev() {
                let mut s = col[i];
                for k in i + 1..n {
                    s -= lu[i * n + k] * col[k];
                }
                col[i] = s / lu[i * n + i];
            }
            for i in 0..n {
                inv.data[i * n + j] = col[i];
            }
        }
        Some(inv)
    }

    /// `ln |det|`; `None` when singular.
    pub fn log_abs_det(&self) -> Option<f64> {
        let n = self.n;
        let (lu, _, _) = self.lu()?;
        Some((0..n).map(|i| lu[i * n + i].norm().ln()).sum())
    }

    /// Eigen-decomposition of a Hermitian matrix (only the upper triangle is
    /// read): ascending eigenvalues and column eigenvectors.
    pub fn hermitian_eigen(&self) -> (Vec<f64>, CMat) {
        let n = self.n;
        let h = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(self.get(i, i).re, 0.0)
            } else if i < j {
                self.get(i, j)
            } else {
                self.get(j, i).conj()
            }
        });
        let eig = h.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = CMat::from_fn(n, |i, j| eig.eigenvectors[(i, order[j])]);
        (values, vectors)
    }

    /// `V diag(values) Vᴴ`.
    pub fn from_eigen(values: &[f64], vectors: &CMat) -> CMat {
        let n = vectors.n;
        CMat::from_fn(n, |i, j| {
            (0..n)
                .map(|k| vectors.get(i, k) * values[k] * vectors.get(j, k).conj())
                .sum()
        })
    }
}
