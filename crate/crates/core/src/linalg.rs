//! Small dense and banded linear solvers used by the theory engine and the
//! grid solver.

use crate::error::{Error, Result};

/// LDLᵀ factorization of a symmetric positive-definite tridiagonal matrix,
/// reusable across many right-hand sides.
#[derive(Debug, Clone)]
pub struct TridiagFactor {
    d: Vec<f64>,
    l: Vec<f64>,
}

impl TridiagFactor {
    /// Factor the SPD tridiagonal matrix with diagonal `diag` and
    /// sub/super-diagonal `off`.
    pub fn new(diag: &[f64], off: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut d = vec![0.0; n];
        let mut l = vec![0.0; n.saturating_sub(1)];
        d[0] = diag[0];
        if d[0] <= 0.0 || !d[0].is_finite() {
            return Err(Error::SingularSystem(0));
        }
        for i in 0..n - 1 {
            l[i] = off[i] / d[i];
            d[i + 1] = diag[i + 1] - l[i] * off[i];
            if d[i + 1] <= 0.0 || !d[i + 1].is_finite() {
                return Err(Error::SingularSystem(i + 1));
            }
        }
        Ok(Self { d, l })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        let mut x = rhs.to_vec();
        for i in 1..n {
            x[i] -= self.l[i - 1] * x[i - 1];
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.l[i] * x[i + 1];
        }
        x
    }
}

/// Symmetric positive-definite banded matrix in lower-band storage:
/// `band(i, d)` holds A[i][i-d] for d = 0..=bandwidth.
#[derive(Debug, Clone)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, d: usize) -> usize {
        i * (self.bw + 1) + d
    }

    /// Add `v` to A[i][j] (and by symmetry A[j][i]); |i-j| must fit the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        debug_assert!(d <= self.bw);
        let k = self.idx(hi, d);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        if d > self.bw {
            0.0
        } else {
            self.data[self.idx(hi, d)]
        }
    }

    /// y = A x.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            y[i] += self.get(i, i) * x[i];
            for d in 1..=self.bw.min(i) {
                let a = self.data[self.idx(i, d)];
                y[i] += a * x[i - d];
                y[i - d] += a * x[i];
            }
        }
        y
    }

    /// Banded Cholesky A = L Lᵀ; fails on a non-positive pivot.
    pub fn cholesky(&self) -> Result<BandedChol> {
        let mut l = self.clone();
        for j in 0..self.n {
            let mut v = l.data[l.idx(j, 0)];
            for k in 1..=self.bw.min(j) {
                let x = l.data[l.idx(j, k)];
                v -= x * x;
            }
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::SingularSystem(j));
            }
            let pivot = v.sqrt();
            l.data[l.idx(j, 0)] = pivot;
            let hi = (j + self.bw).min(self.n - 1);
            for i in j + 1..=hi {
                let mut s = l.data[l.idx(i, i - j)];
                // Σ_k L[i][k] L[j][k] over the overlapping band.
                let k_lo = i.saturating_sub(self.bw).max(j.saturating_sub(self.bw));
                for k in k_lo..j {
                    s -= l.data[l.idx(i, i - k)] * l.data[l.idx(j, j - k)];
                }
                l.data[l.idx(i, i - j)] = s / pivot;
            }
        }
        Ok(BandedChol { inner: l })
    }
}

/// Cholesky factor of a [`BandedSpd`].
#[derive(Debug, Clone)]
pub struct BandedChol {
    inner: BandedSpd,
}

impl BandedChol {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.inner.n;
        let bw = self.inner.bw;
        let mut y = rhs.to_vec();
        for i in 0..n {
            for d in 1..=bw.min(i) {
                y[i] -= self.inner.data[self.inner.idx(i, d)] * y[i - d];
            }
            y[i] /= self.inner.data[self.inner.idx(i, 0)];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            for j in i + 1..=hi {
                y[i] -= self.inner.data[self.inner.idx(j, j - i)] * y[j];
            }
            y[i] /= self.inner.data[self.inner.idx(i, 0)];
        }
        y
    }
}

/// Dense Gaussian elimination with partial pivoting for small systems.
pub fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::SingularSystem(col));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let m = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= m * a[col][k];
            }
            b[row] -= m * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[i][k] * x[k];
        }
        x[i] = s / a[i][i];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tridiag_solves_poisson_like() {
        let n = 64;
        let diag = vec![2.5; n];
        let off = vec![-1.0; n - 1];
        let factor = TridiagFactor::new(&diag, &off).unwrap();
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            rhs[i] = 2.5 * x_true[i];
            if i > 0 {
                rhs[i] -= x_true[i - 1];
            }
            if i < n - 1 {
                rhs[i] -= x_true[i + 1];
            }
        }
        let x = factor.solve(&rhs);
        for i in 0..n {
            assert_relative_eq!(x[i], x_true[i], epsilon = 1e-11);
        }
    }

    #[test]
    fn banded_matches_tridiag_and_wider() {
        let n = 40;
        let mut a = BandedSpd::zeros(n, 2);
        for i in 0..n {
            a.add(i, i, 4.0 + 0.01 * i as f64);
            if i + 1 < n {
                a.add(i, i + 1, -1.0);
            }
            if i + 2 < n {
                a.add(i, i + 2, -0.5);
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| 1.0 + (i % 5) as f64).collect();
        let rhs = a.mul(&x_true);
        let x = a.cholesky().unwrap().solve(&rhs);
        for i in 0..n {
            assert_relative_eq!(x[i], x_true[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn banded_rejects_indefinite() {
        let mut a = BandedSpd::zeros(3, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, -1.0);
        a.add(2, 2, 1.0);
        assert!(a.cholesky().is_err());
    }

    #[test]
    fn dense_small_system() {
        let mut a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let mut b = vec![5.0, 10.0];
        let x = solve_dense(&mut a, &mut b).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 3.0, epsilon = 1e-12);
    }
}
