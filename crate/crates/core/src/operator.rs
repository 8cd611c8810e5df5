//! The transversal Dirichlet Laplacian, principal square roots and
//! exponentials of complex matrices, and sectoriality measurements.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::error::{domain, Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Exponent magnitude beyond which a propagator is returned as exactly zero.
pub const EXP_UNDERFLOW_CUTOFF: f64 = 700.0;

/// Eigenpairs of the transversal operator, ordered by increasing magnitude.
#[derive(Debug, Clone)]
pub struct TransversalEigen {
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns.
    pub vectors: DMatrix<f64>,
}

/// Second-difference Dirichlet Laplacian on `(0, 1)` with `n` interior nodes.
#[derive(Debug)]
pub struct TransversalOperator {
    pub n: usize,
    pub h: f64,
    pub matrix: DMatrix<f64>,
    eigen: OnceLock<TransversalEigen>,
}

impl Clone for TransversalOperator {
    fn clone(&self) -> Self {
        let eigen = OnceLock::new();
        if let Some(e) = self.eigen.get() {
            let _ = eigen.set(e.clone());
        }
        Self {
            n: self.n,
            h: self.h,
            matrix: self.matrix.clone(),
            eigen,
        }
    }
}

/// Builds the tridiagonal `(1, -2, 1) / h^2` matrix with `h = 1/(n+1)`.
pub fn build_dirichlet_laplacian(n: usize) -> Result<TransversalOperator> {
    if n == 0 {
        return Err(domain("transversal size must be at least 1"));
    }
    let h = 1.0 / (n as f64 + 1.0);
    let s = 1.0 / (h * h);
    let matrix = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            -2.0 * s
        } else if i.abs_diff(j) == 1 {
            s
        } else {
            0.0
        }
    });
    Ok(TransversalOperator {
        n,
        h,
        matrix,
        eigen: OnceLock::new(),
    })
}

impl TransversalOperator {
    /// Closed-form eigenpairs `-(4/h^2) sin^2(k pi h / 2)` with sine
    /// eigenvectors; computed once and shared.
    pub fn eigen(&self) -> &TransversalEigen {
        self.eigen.get_or_init(|| {
            let n = self.n;
            let h = self.h;
            let values = DVector::from_fn(n, |k, _| {
                let s = ((k + 1) as f64 * PI * h / 2.0).sin();
                -4.0 / (h * h) * s * s
            });
            let norm = (2.0 * h).sqrt();
            let vectors = DMatrix::from_fn(n, n, |j, k| {
                norm * ((j + 1) as f64 * (k + 1) as f64 * PI * h).sin()
            });
            TransversalEigen { values, vectors }
        })
    }

    /// Node coordinates `y_j = j h`, `j = 1..n`.
    pub fn nodes(&self) -> Vec<f64> {
        (1..=self.n).map(|j| j as f64 * self.h).collect()
    }

    pub fn complex_matrix(&self) -> CMat {
        self.matrix.map(|v| Complex64::new(v, 0.0))
    }
}

/// Largest value of `|lambda| ||(L - lambda)^{-1}||` over a sample set.
#[derive(Debug, Clone)]
pub struct SectorialityReport {
    pub m_constant: f64,
    pub angle_bound: f64,
    pub scanned_set: String,
    pub accepted: usize,
    /// Samples within `1e-10` of the spectrum, skipped.
    pub rejected: Vec<Complex64>,
}

/// Smallest and largest singular values.
pub(crate) fn singular_extremes(m: &CMat) -> (f64, f64) {
    let sv = m.clone().singular_values();
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sv.iter().cloned().fold(0.0, f64::max);
    (lo, hi)
}

/// Spectral norm of a complex matrix.
pub fn spectral_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_extremes(m).1
}

/// Measures `M = sup |lambda| ||(L - lambda I)^{-1}||_2` over `samples`.
pub fn measure_sectoriality(
    op: &CMat,
    samples: &[Complex64],
    description: &str,
) -> Result<SectorialityReport> {
    if !op.is_square() {
        return Err(domain("operator must be square"));
    }
    let n = op.nrows();
    let mut m = 0.0f64;
    let mut rejected = Vec::new();
    let mut accepted = 0;
    for &lam in samples {
        let shifted = op - CMat::identity(n, n) * lam;
        let (smin, _) = singular_extremes(&shifted);
        if smin < 1e-10 {
            rejected.push(lam);
            continue;
        }
        accepted += 1;
        m = m.max(lam.norm() / smin);
    }
    if accepted == 0 {
        return Err(domain("every sample was rejected"));
    }
    let angle_bound = if m >= 1.0 { PI - (1.0 / m).asin() } else { f64::NAN };
    Ok(SectorialityReport {
        m_constant: m,
        angle_bound,
        scanned_set: description.to_string(),
        accepted,
        rejected,
    })
}

/// Principal square root through a complex Schur form and the triangular
/// recurrence `R_ij = (T_ij - sum R_ik R_kj) / (R_ii + R_jj)`.
pub fn principal_sqrt(m: &CMat) -> Result<CMat> {
    if !m.is_square() {
        return Err(domain("matrix must be square"));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(m.clone());
    }
    let scale = m
        .iter()
        .map(|v| v.norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Breakdown("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    for i in 0..n {
        let e = t[(i, i)];
        let dist = if e.re <= 0.0 { e.im.abs() } else { e.norm() };
        if dist <= 1e-8 * scale.max(1.0) {
            return Err(Error::SingularBranch(format!(
                "eigenvalue {e} lies within 1e-8 of the closed negative real axis"
            )));
        }
    }
    let mut r = CMat::zeros(n, n);
    for i in 0..n {
        r[(i, i)] = t[(i, i)].sqrt();
    }
    for d in 1..n {
        for i in 0..n - d {
            let j = i + d;
            let mut s = t[(i, j)];
            for k in i + 1..j {
                s -= r[(i, k)] * r[(k, j)];
            }
            r[(i, j)] = s / (r[(i, i)] + r[(j, j)]);
        }
    }
    Ok(&q * r * q.adjoint())
}

/// Matrix exponential of `x * b` with the underflow cutoff applied when
/// `x * |abscissa| > 700`; `abscissa` is the largest real part of `b`'s spectrum.
pub fn expm_with_cutoff(b: &CMat, x: f64, abscissa: f64) -> CMat {
    let n = b.nrows();
    if x == 0.0 {
        return CMat::identity(n, n);
    }
    if abscissa < 0.0 && x * abscissa.abs() > EXP_UNDERFLOW_CUTOFF {
        return CMat::zeros(n, n);
    }
    (b * Complex64::new(x, 0.0)).exp()
}

/// Which habitat a generator belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    BMinus,
    BPlus,
    Generic,
}

/// `B = -sqrt(-A + ((r + lambda)/d) I)` with its spectrum.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    pub matrix: CMat,
    pub kind: GeneratorKind,
    pub d: f64,
    pub r: f64,
    pub lambda: Complex64,
    pub spectrum: Vec<Complex64>,
}

impl GeneratorMatrix {
    /// Largest real part of the spectrum.
    pub fn abscissa(&self) -> f64 {
        self.spectrum
            .iter()
            .map(|e| e.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Builds the generator for one habitat from an arbitrary transversal matrix.
pub fn build_generator_from_matrix(
    a: &CMat,
    d: f64,
    r: f64,
    lambda: Complex64,
    kind: GeneratorKind,
) -> Result<GeneratorMatrix> {
    if !(d > 0.0) || !(r > 0.0) {
        return Err(domain("d and r must be positive"));
    }
    let n = a.nrows();
    let shift = (Complex64::new(r, 0.0) + lambda) / d;
    let m = -a + CMat::identity(n, n) * shift;
    let root = principal_sqrt(&m)?;
    let matrix = -root;
    let spectrum = matrix
        .clone()
        .schur()
        .eigenvalues()
        .map(|v| v.iter().cloned().collect())
        .unwrap_or_default();
    Ok(GeneratorMatrix {
        matrix,
        kind,
        d,
        r,
        lambda,
        spectrum,
    })
}

/// Generator for the transversal Laplacian.
pub fn build_generator(
    op: &TransversalOperator,
    d: f64,
    r: f64,
    lambda: Complex64,
) -> Result<GeneratorMatrix> {
    build_generator_from_matrix(&op.complex_matrix(), d, r, lambda, GeneratorKind::Generic)
}

/// `e^{x B}` for `x >= 0`.
pub fn propagator(b: &GeneratorMatrix, x: f64) -> Result<CMat> {
    if x < 0.0 {
        return Err(domain("propagators are only defined for nonnegative distances"));
    }
    Ok(expm_with_cutoff(&b.matrix, x, b.abscissa()))
}

/// Fitted constants of `||e^{tB}|| <= C exp(-c t sqrt|lambda/d + rho|)`.
#[derive(Debug, Clone, Copy)]
pub struct DecayFit {
    pub c_big: f64,
    pub c_rate: f64,
}

/// Least-squares fit of `ln ||e^{tB}||` against `t sqrt|lambda/d + rho|` over
/// all generators and times; `C` is then raised to bound every sample.
pub fn fit_propagator_decay(gens: &[GeneratorMatrix], times: &[f64]) -> Result<DecayFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for g in gens {
        let k = (g.lambda / g.d + g.r / g.d).norm().sqrt();
        for &t in times {
            let nrm = spectral_norm(&propagator(g, t)?);
            if nrm > 1e-250 {
                xs.push(t * k);
                ys.push(nrm.ln());
            }
        }
    }
    if xs.len() < 2 {
        return Err(domain("not enough nonzero propagator samples"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let c_rate = -sxy / sxx;
    let ln_c = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y + c_rate * x)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DecayFit {
        c_big: ln_c.exp(),
        c_rate,
    })
}

/// `sup (1 + |z|) ||(B - z I)^{-1}||` over the given `z` samples.
pub fn generator_resolvent_sup(b: &GeneratorMatrix, zs: &[Complex64]) -> Result<f64> {
    let n = b.matrix.nrows();
    let mut sup = 0.0f64;
    for &z in zs {
        let (smin, _) = singular_extremes(&(&b.matrix - CMat::identity(n, n) * z));
        if smin < 1e-14 {
            return Err(domain(format!("z = {z} hits the spectrum of B")));
        }
        sup = sup.max((1.0 + z.norm()) / smin);
    }
    Ok(sup)
}
