//! Small dense and banded linear-algebra kernels.
//!
//! Only what the solver stack needs: a row-major dense matrix for the
//! N x N mode-coupling matrices and a banded LU with partial pivoting for
//! the per-step systems of the wave solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `y = self * x`
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = dot(self.row(i), x);
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `y += alpha * self^T * x`
    pub fn mul_t_vec_acc(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (i, &xi) in x.iter().enumerate() {
            let s = alpha * xi;
            if s == 0.0 {
                continue;
            }
            for (yj, &aij) in y.iter_mut().zip(self.row(i)) {
                *yj += s * aij;
            }
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Linear combination `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        }
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// General banded matrix under construction. Entries outside the band are
/// rejected at insertion time.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    // Row i stores columns i-kl ..= i+ku+kl; the extra kl columns hold fill
    // created by row interchanges during factorization.
    width: usize,
    ab: Vec<f64>,
}

impl BandMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            ab: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside band (kl={}, ku={})",
            self.kl,
            self.ku
        );
        let s = self.slot(i, j);
        self.ab[s] += v;
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.ab[self.slot(i, j)]
    }

    #[inline]
    fn get_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let s = self.slot(i, j);
        &mut self.ab[s]
    }

    /// In-place LU factorization with partial (row) pivoting.
    pub fn factor(mut self) -> Result<BandedLu> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut pivots = vec![0usize; n];
        let scale = self.ab.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for r in k + 1..=last_row {
                let v = self.get(r, k).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if !(best > scale * 1e-14) {
                return Err(Error::SingularMatrix { pivot: k });
            }
            pivots[k] = p;
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = self.get(k, j);
                    let b = self.get(p, j);
                    *self.get_mut(k, j) = b;
                    *self.get_mut(p, j) = a;
                }
            }
            let pivot = self.get(k, k);
            for r in k + 1..=last_row {
                let f = self.get(r, k) / pivot;
                *self.get_mut(r, k) = f;
                if f == 0.0 {
                    continue;
                }
                for j in k + 1..=last_col {
                    let ukj = self.get(k, j);
                    *self.get_mut(r, j) -= f * ukj;
                }
            }
        }
        Ok(BandedLu { band: self, pivots })
    }
}

/// Factorized band matrix; reusable across right-hand sides.
#[derive(Clone, Debug)]
pub struct BandedLu {
    band: BandMatrix,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn dim(&self) -> usize {
        self.band.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let a = &self.band;
        let n = a.n;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for r in k + 1..=(k + a.kl).min(n - 1) {
                    b[r] -= a.get(r, k) * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + a.kl + a.ku).min(n - 1) {
                s -= a.get(k, j) * b[j];
            }
            b[k] = s / a.get(k, k);
        }
    }
}

/// Symmetric banded matrix holding its lower triangle: row `i` stores
/// columns `i - k ..= i`.
#[derive(Clone, Debug)]
pub struct SymmetricBandMatrix {
    n: usize,
    k: usize,
    ab: Vec<f64>,
}

impl SymmetricBandMatrix {
    pub fn new(n: usize, bandwidth: usize) -> Self {
        Self {
            n,
            k: bandwidth,
            ab: vec![0.0; n * (bandwidth + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.k
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * (self.k + 1) + (j + self.k - i)
    }

    /// Add `v` to entry `(i, j)` of the lower triangle (`j ≤ i`).
    pub fn add_lower(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j <= i && i - j <= self.k,
            "entry ({i}, {j}) outside lower band {}",
            self.k
        );
        let s = self.slot(i, j);
        self.ab[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.k {
            0.0
        } else {
            self.ab[self.slot(i, j)]
        }
    }

    /// In-place Cholesky factorization `A = L Lᵀ`; the band has no fill.
    pub fn factor(mut self) -> Result<BandedCholesky> {
        let (n, k) = (self.n, self.k);
        let w = k + 1;
        for i in 0..n {
            let first = i.saturating_sub(k);
            for j in first..=i {
                // Σ_p L_ip L_jp over the columns both rows store
                let lo = first.max(j.saturating_sub(k));
                let ri = i * w + (lo + k - i);
                let rj = j * w + (lo + k - j);
                let len = j - lo;
                let mut s = self.ab[i * w + (j + k - i)];
                for (a, b) in self.ab[ri..ri + len].iter().zip(&self.ab[rj..rj + len]) {
                    s -= a * b;
                }
                let slot = i * w + (j + k - i);
                if j < i {
                    self.ab[slot] = s / self.ab[j * w + k];
                } else {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite);
                    }
                    self.ab[slot] = s.sqrt();
                }
            }
        }
        Ok(BandedCholesky { band: self })
    }
}

/// Cholesky factor of a [`SymmetricBandMatrix`].
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    band: SymmetricBandMatrix,
}

impl BandedCholesky {
    pub fn dim(&self) -> usize {
        self.band.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, k) = (self.band.n, self.band.k);
        let w = k + 1;
        let ab = &self.band.ab;
        assert_eq!(b.len(), n);
        for i in 0..n {
            let first = i.saturating_sub(k);
            let row = &ab[i * w + (first + k - i)..i * w + k];
            let s: f64 = row.iter().zip(&b[first..i]).map(|(l, y)| l * y).sum();
            b[i] = (b[i] - s) / ab[i * w + k];
        }
        for i in (0..n).rev() {
            b[i] /= ab[i * w + k];
            let bi = b[i];
            let first = i.saturating_sub(k);
            for (j, l) in (first..i).zip(&ab[i * w + (first + k - i)..i * w + k]) {
                b[j] -= l * bi;
            }
        }
    }
}

/// Dense Cholesky solve; test oracle and tiny-system helper.
pub fn cholesky_solve(m: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = m.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 {
            return Err(Error::NotPositiveDefinite);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[(i, k)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[(k, i)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    Ok(y)
}
