//! Operator arithmetic over the cross-section space.
//!
//! Every operator the resolvent needs is a function of the transversal
//! matrix `A`. [`SpectralPath`] stores such functions as their values on the
//! eigenvalues of `A` and works in eigen-coordinates; [`DensePath`] stores
//! full complex matrices and works in node coordinates. Formulas written
//! against [`CrossAlgebra`] run unchanged on either.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operator::{
    build_generator_from_matrix, expm_with_cutoff, singular_extremes, CMat, CVec, GeneratorKind,
    TransversalOperator, EXP_UNDERFLOW_CUTOFF,
};
use crate::sector::{f_symbol, SymbolParams};

/// Arithmetic on functions of the transversal operator.
pub trait CrossAlgebra: Send + Sync {
    type Op: Clone + Send + Sync + std::fmt::Debug;

    fn dim(&self) -> usize;
    fn identity(&self) -> Self::Op;
    fn add(&self, a: &Self::Op, b: &Self::Op) -> Self::Op;
    fn sub(&self, a: &Self::Op, b: &Self::Op) -> Self::Op;
    fn mul(&self, a: &Self::Op, b: &Self::Op) -> Self::Op;
    fn scale(&self, a: &Self::Op, c: f64) -> Self::Op;
    fn inverse(&self, a: &Self::Op) -> Result<Self::Op>;
    fn apply(&self, a: &Self::Op, v: &CVec) -> CVec;

    /// `-sqrt(-A + ((r + lambda)/d) I)`.
    fn generator(&self, d: f64, r: f64, lambda: Complex64) -> Result<Self::Op>;
    /// Largest real part of the spectrum of `b`.
    fn abscissa(&self, b: &Self::Op) -> f64;
    /// `e^{x b}` for `x >= 0`, zero past the underflow cutoff.
    fn exp(&self, b: &Self::Op, x: f64) -> Self::Op;
    /// Local weights of the linear-interpolant convolution on a step `h`:
    /// `(h phi2(h b), h (phi1(h b) - phi2(h b)))`.
    fn phi_weights(&self, b: &Self::Op, h: f64) -> (Self::Op, Self::Op);

    /// Node coordinates to working coordinates.
    fn to_work(&self, v: &CVec) -> CVec;
    /// Working coordinates to node coordinates.
    #[allow(clippy::wrong_self_convention)]
    fn from_work(&self, v: &CVec) -> CVec;

    fn norm2(&self, a: &Self::Op) -> f64;
    fn condition(&self, a: &Self::Op) -> f64;

    /// `(1/f)(-A)` when the path can evaluate the symbol directly.
    fn symbol_inverse(&self, _p: &SymbolParams) -> Option<Self::Op> {
        None
    }

    /// Dense node-coordinate matrix of `a`.
    fn to_dense(&self, a: &Self::Op) -> CMat;
}

/// `phi1(z) = (e^z - 1)/z` and `phi2(z) = (e^z - 1 - z)/z^2`.
pub fn phi12(z: Complex64) -> (Complex64, Complex64) {
    if z.norm() < 0.1 {
        // Taylor series: phi_k(z) = sum z^m / (m + k)!
        let mut p1 = Complex64::new(0.0, 0.0);
        let mut p2 = Complex64::new(0.0, 0.0);
        let mut zm = Complex64::new(1.0, 0.0);
        let mut fact1 = 1.0; // (m+1)!
        let mut fact2 = 2.0; // (m+2)!
        for m in 0..14 {
            p1 += zm / fact1;
            p2 += zm / fact2;
            zm *= z;
            fact1 *= (m + 2) as f64;
            fact2 *= (m + 3) as f64;
        }
        (p1, p2)
    } else {
        let e = if z.re < -EXP_UNDERFLOW_CUTOFF {
            Complex64::new(0.0, 0.0)
        } else {
            z.exp()
        };
        let p1 = (e - 1.0) / z;
        let p2 = (p1 - 1.0) / z;
        (p1, p2)
    }
}

/// Diagonal representation in the eigenbasis of a symmetric transversal matrix.
#[derive(Debug, Clone)]
pub struct SpectralPath {
    pub values: Arc<DVector<f64>>,
    pub vectors: Arc<DMatrix<f64>>,
}

impl SpectralPath {
    pub fn new(op: &TransversalOperator) -> Self {
        let e = op.eigen();
        Self {
            values: Arc::new(e.values.clone()),
            vectors: Arc::new(e.vectors.clone()),
        }
    }

    /// Single-mode path with eigenvalue `mu`.
    pub fn scalar(mu: f64) -> Self {
        Self {
            values: Arc::new(DVector::from_element(1, mu)),
            vectors: Arc::new(DMatrix::from_element(1, 1, 1.0)),
        }
    }
}

impl CrossAlgebra for SpectralPath {
    type Op = CVec;

    fn dim(&self) -> usize {
        self.values.len()
    }
    fn identity(&self) -> CVec {
        CVec::from_element(self.dim(), Complex64::new(1.0, 0.0))
    }
    fn add(&self, a: &CVec, b: &CVec) -> CVec {
        a + b
    }
    fn sub(&self, a: &CVec, b: &CVec) -> CVec {
        a - b
    }
    fn mul(&self, a: &CVec, b: &CVec) -> CVec {
        a.component_mul(b)
    }
    fn scale(&self, a: &CVec, c: f64) -> CVec {
        a * Complex64::new(c, 0.0)
    }
    fn inverse(&self, a: &CVec) -> Result<CVec> {
        if a.iter().any(|v| v.norm() == 0.0) {
            return Err(Error::Breakdown("diagonal operator has a zero entry".into()));
        }
        Ok(a.map(|v| Complex64::new(1.0, 0.0) / v))
    }
    fn apply(&self, a: &CVec, v: &CVec) -> CVec {
        a.component_mul(v)
    }
    fn generator(&self, d: f64, r: f64, lambda: Complex64) -> Result<CVec> {
        let shift = (Complex64::new(r, 0.0) + lambda) / d;
        let mut out = CVec::zeros(self.dim());
        for (k, &mu) in self.values.iter().enumerate() {
            let m = shift - mu;
            if m.re <= 0.0 && m.im.abs() <= 1e-8 * m.norm().max(1.0) {
                return Err(Error::SingularBranch(format!(
                    "mode {k}: {m} lies on the closed negative real axis"
                )));
            }
            out[k] = -m.sqrt();
        }
        Ok(out)
    }
    fn abscissa(&self, b: &CVec) -> f64 {
        b.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max)
    }
    fn exp(&self, b: &CVec, x: f64) -> CVec {
        if x == 0.0 {
            return self.identity();
        }
        let ab = self.abscissa(b);
        if ab < 0.0 && x * ab.abs() > EXP_UNDERFLOW_CUTOFF {
            return CVec::zeros(self.dim());
        }
        b.map(|v| (v * x).exp())
    }
    fn phi_weights(&self, b: &CVec, h: f64) -> (CVec, CVec) {
        let mut w0 = CVec::zeros(self.dim());
        let mut w1 = CVec::zeros(self.dim());
        for (k, &bk) in b.iter().enumerate() {
            let (p1, p2) = phi12(bk * h);
            w0[k] = p2 * h;
            w1[k] = (p1 - p2) * h;
        }
        (w0, w1)
    }
    fn to_work(&self, v: &CVec) -> CVec {
        let vt = self.vectors.transpose();
        let re = &vt * v.map(|c| c.re);
        let im = &vt * v.map(|c| c.im);
        CVec::from_fn(v.len(), |i, _| Complex64::new(re[i], im[i]))
    }
    fn from_work(&self, v: &CVec) -> CVec {
        let re = &*self.vectors * v.map(|c| c.re);
        let im = &*self.vectors * v.map(|c| c.im);
        CVec::from_fn(v.len(), |i, _| Complex64::new(re[i], im[i]))
    }
    fn norm2(&self, a: &CVec) -> f64 {
        a.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
    fn condition(&self, a: &CVec) -> f64 {
        let hi = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let lo = a.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min);
        hi / lo
    }
    fn symbol_inverse(&self, p: &SymbolParams) -> Option<CVec> {
        Some(CVec::from_fn(self.dim(), |k, _| {
            Complex64::new(1.0, 0.0) / f_symbol(Complex64::new(-self.values[k], 0.0), p)
        }))
    }
    fn to_dense(&self, a: &CVec) -> CMat {
        let v = self.vectors.map(|x| Complex64::new(x, 0.0));
        &v * CMat::from_diagonal(a) * v.transpose()
    }
}

/// Full complex matrices in node coordinates; `a` may be nonsymmetric.
#[derive(Debug, Clone)]
pub struct DensePath {
    pub a: Arc<CMat>,
}

impl DensePath {
    pub fn new(op: &TransversalOperator) -> Self {
        Self {
            a: Arc::new(op.complex_matrix()),
        }
    }

    pub fn from_matrix(a: CMat) -> Self {
        Self { a: Arc::new(a) }
    }
}

impl CrossAlgebra for DensePath {
    type Op = CMat;

    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn identity(&self) -> CMat {
        CMat::identity(self.dim(), self.dim())
    }
    fn add(&self, a: &CMat, b: &CMat) -> CMat {
        a + b
    }
    fn sub(&self, a: &CMat, b: &CMat) -> CMat {
        a - b
    }
    fn mul(&self, a: &CMat, b: &CMat) -> CMat {
        a * b
    }
    fn scale(&self, a: &CMat, c: f64) -> CMat {
        a * Complex64::new(c, 0.0)
    }
    fn inverse(&self, a: &CMat) -> Result<CMat> {
        a.clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Breakdown("dense inversion failed".into()))
    }
    fn apply(&self, a: &CMat, v: &CVec) -> CVec {
        a * v
    }
    fn generator(&self, d: f64, r: f64, lambda: Complex64) -> Result<CMat> {
        Ok(build_generator_from_matrix(&self.a, d, r, lambda, GeneratorKind::Generic)?.matrix)
    }
    fn abscissa(&self, b: &CMat) -> f64 {
        b.clone()
            .schur()
            .eigenvalues()
            .map(|e| e.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max))
            .unwrap_or(0.0)
    }
    fn exp(&self, b: &CMat, x: f64) -> CMat {
        expm_with_cutoff(b, x, self.abscissa(b))
    }
    fn phi_weights(&self, b: &CMat, h: f64) -> (CMat, CMat) {
        // exp([[Z, I, 0], [0, 0, I], [0, 0, 0]]) carries phi1(Z), phi2(Z) in its first block row.
        let n = self.dim();
        let mut aug = CMat::zeros(3 * n, 3 * n);
        let z = b * Complex64::new(h, 0.0);
        aug.view_mut((0, 0), (n, n)).copy_from(&z);
        for i in 0..n {
            aug[(i, n + i)] = Complex64::new(1.0, 0.0);
            aug[(n + i, 2 * n + i)] = Complex64::new(1.0, 0.0);
        }
        let e = aug.exp();
        let p1 = e.view((0, n), (n, n)).into_owned();
        let p2 = e.view((0, 2 * n), (n, n)).into_owned();
        let hc = Complex64::new(h, 0.0);
        (&p2 * hc, (p1 - &p2) * hc)
    }
    fn to_work(&self, v: &CVec) -> CVec {
        v.clone()
    }
    fn from_work(&self, v: &CVec) -> CVec {
        v.clone()
    }
    fn norm2(&self, a: &CMat) -> f64 {
        singular_extremes(a).1
    }
    fn condition(&self, a: &CMat) -> f64 {
        let (lo, hi) = singular_extremes(a);
        hi / lo
    }
    fn to_dense(&self, a: &CMat) -> CMat {
        a.clone()
    }
}
