//! Banded storage and an LU factorization with partial pivoting.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Real square matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    /// Row-major, `kl + ku + 1` slots per row; slot `j + kl - i` holds `(i, j)`.
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.kl >= i && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[i * self.width() + j + self.kl - i]
        } else {
            0.0
        }
    }

    /// Panics outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let w = self.width();
        self.data[i * w + j + self.kl - i] += v;
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| self.row_range(i).map(|j| x[j] * self.get(i, j)).sum())
            .collect()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }
}

/// LU factors of `M - shift I` for a banded `M`.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    /// Upper bandwidth of `U` after pivoting.
    ku_fill: usize,
    upper: Vec<Complex64>,
    lower: Vec<Complex64>,
    pivots: Vec<usize>,
    /// `max |u_kk| / min |u_kk|`, a cheap conditioning indicator.
    pub pivot_ratio: f64,
}

impl BandLu {
    pub fn factor_shifted(m: &BandMatrix, shift: Complex64) -> Result<Self> {
        let n = m.n;
        let kl = m.kl;
        let ku_fill = m.kl + m.ku;
        let w = kl + ku_fill + 1;
        let idx = |i: usize, j: usize| i * w + j + kl - i;
        let mut upper = vec![Complex64::new(0.0, 0.0); n * w];
        for i in 0..n {
            for j in m.row_range(i) {
                upper[idx(i, j)] = Complex64::new(m.get(i, j), 0.0);
            }
            upper[idx(i, i)] -= shift;
        }
        let mut lower = vec![Complex64::new(0.0, 0.0); n * kl.max(1)];
        let mut pivots = vec![0; n];
        let (mut pmax, mut pmin) = (0.0f64, f64::INFINITY);
        for k in 0..n {
            let last_row = (k + kl + 1).min(n);
            let last_col = (k + ku_fill + 1).min(n);
            let mut p = k;
            let mut best = upper[idx(k, k)].norm();
            for i in k + 1..last_row {
                let v = upper[idx(i, k)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > 0.0) || !best.is_finite() {
                return Err(Error::Breakdown(format!(
                    "zero pivot at row {k} of {n}; shifted matrix is singular"
                )));
            }
            pivots[k] = p;
            if p != k {
                for j in k..last_col {
                    upper.swap(idx(k, j), idx(p, j));
                }
            }
            let pivot = upper[idx(k, k)];
            pmax = pmax.max(best);
            pmin = pmin.min(best);
            for i in k + 1..last_row {
                let f = upper[idx(i, k)] / pivot;
                lower[k * kl + (i - k - 1)] = f;
                upper[idx(i, k)] = Complex64::new(0.0, 0.0);
                if f != Complex64::new(0.0, 0.0) {
                    for j in k + 1..last_col {
                        let ukj = upper[idx(k, j)];
                        upper[idx(i, j)] -= f * ukj;
                    }
                }
            }
        }
        Ok(Self {
            n,
            kl,
            ku_fill,
            upper,
            lower,
            pivots,
            pivot_ratio: pmax / pmin,
        })
    }

    #[allow(clippy::needless_range_loop)]
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let (n, kl) = (self.n, self.kl);
        let w = kl + self.ku_fill + 1;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            for i in k + 1..(k + kl + 1).min(n) {
                x[i] -= self.lower[k * kl + (i - k - 1)] * xk;
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..(k + self.ku_fill + 1).min(n) {
                s -= self.upper[k * w + j + kl - k] * x[j];
            }
            x[k] = s / self.upper[k * w + kl];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (n, kl, ku) in [(1, 0, 0), (7, 1, 1), (30, 4, 2), (25, 3, 5), (40, 6, 6)] {
            let mut m = BandMatrix::zeros(n, kl, ku);
            for i in 0..n {
                for j in m.row_range(i) {
                    m.add(i, j, rng.gen_range(-1.0..1.0));
                }
            }
            let shift = Complex64::new(0.3, -0.7);
            let lu = BandLu::factor_shifted(&m, shift).unwrap();
            let b: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let x = lu.solve(&b);
            let dense =
                m.to_dense().map(|v| Complex64::new(v, 0.0)) - DMatrix::<Complex64>::identity(n, n) * shift;
            let xd = dense.lu().solve(&DVector::from_vec(b.clone())).unwrap();
            let err: f64 = x
                .iter()
                .zip(xd.iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "n={n} err={err}");
        }
    }

    #[test]
    fn singular_matrix_reports_breakdown() {
        let m = BandMatrix::zeros(4, 1, 1);
        assert!(matches!(
            BandLu::factor_shifted(&m, Complex64::new(0.0, 0.0)),
            Err(Error::Breakdown(_))
        ));
    }
}
