//! Direct finite-difference model of the two-habitat problem, used as an
//! independent reference for the closed-form resolvent.
//!
//! Unknowns are the nodes of `(-ell, 0]` and `[0, L)` on the shared grid,
//! with the two interface values kept separate. The interface rows eliminate
//! a ghost value through the flux condition on each side.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::banded::{BandLu, BandMatrix};
use crate::error::{domain, Error, Result};
use crate::operator::CVec;
use crate::resolvent::{GridFunction, HabitatConfig, Side};

/// Index map between grid nodes and matrix rows.
///
/// Node `p < n_minus` is minus-side node `p + 1`; node `p >= n_minus` is
/// plus-side node `p - n_minus`. Row is `p * n_t + k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_t: usize,
    pub n_minus: usize,
    pub n_plus: usize,
}

impl Layout {
    pub fn size(&self) -> usize {
        self.n_t * (self.n_minus + self.n_plus)
    }

    pub fn row(&self, side: Side, node: usize, k: usize) -> usize {
        let p = match side {
            Side::Minus => node - 1,
            Side::Plus => self.n_minus + node,
        };
        p * self.n_t + k
    }
}

#[derive(Debug, Clone)]
pub struct Direct2DOperator {
    pub cfg: HabitatConfig,
    pub layout: Layout,
    pub matrix: BandMatrix,
    /// Trapezoid-times-rectangle quadrature weight of each unknown.
    pub weights: Vec<f64>,
}

pub fn build_2d_operator(cfg: &HabitatConfig) -> Result<Direct2DOperator> {
    cfg.validate()?;
    let n_t = cfg.n_transversal;
    let layout = Layout {
        n_t,
        n_minus: cfg.n_long_minus - 1,
        n_plus: cfg.n_long_plus - 1,
    };
    let h = cfg.transversal_step();
    let mut m = BandMatrix::zeros(layout.size(), n_t, n_t);
    let mut weights = vec![0.0; layout.size()];

    let sides = [
        (
            Side::Minus,
            cfg.d_minus,
            cfg.r_minus,
            cfg.minus_step(),
            layout.n_minus,
        ),
        (Side::Plus, cfg.d_plus, cfg.r_plus, cfg.plus_step(), layout.n_plus),
    ];
    for (side, d, r, dx, count) in sides {
        let cx = d / (dx * dx);
        let cy = d / (h * h);
        let nodes: Vec<usize> = match side {
            Side::Minus => (1..=count).collect(),
            Side::Plus => (0..count).collect(),
        };
        for &i in &nodes {
            let interface = match side {
                Side::Minus => i == count,
                Side::Plus => i == 0,
            };
            for k in 0..n_t {
                let row = layout.row(side, i, k);
                m.add(row, row, -2.0 * cx - 2.0 * cy - r);
                if k > 0 {
                    m.add(row, row - 1, cy);
                }
                if k + 1 < n_t {
                    m.add(row, row + 1, cy);
                }
                if interface {
                    // d (w_ghost - 2 w + w_in) / dx^2 with the ghost from the flux condition
                    let (inner, other) = match side {
                        Side::Minus => (layout.row(side, i - 1, k), layout.row(Side::Plus, 0, k)),
                        Side::Plus => (layout.row(side, 1, k), layout.row(Side::Minus, layout.n_minus, k)),
                    };
                    if inner != row {
                        m.add(row, inner, 2.0 * cx);
                    }
                    let c = 2.0 * cfg.q / dx;
                    m.add(row, row, -c);
                    m.add(row, other, c);
                    weights[row] = 0.5 * dx * h;
                } else {
                    let (left, right) = match side {
                        Side::Minus => (i >= 2, true),
                        Side::Plus => (true, i + 1 < count),
                    };
                    if left {
                        m.add(row, layout.row(side, i - 1, k), cx);
                    }
                    if right {
                        m.add(row, layout.row(side, i + 1, k), cx);
                    }
                    weights[row] = dx * h;
                }
            }
        }
    }
    Ok(Direct2DOperator {
        cfg: *cfg,
        layout,
        matrix: m,
        weights,
    })
}

impl Direct2DOperator {
    /// Packs the unknown nodes of `f` into a vector (Dirichlet ends dropped).
    pub fn pack(&self, f: &GridFunction) -> Result<Vec<Complex64>> {
        if !f.matches(&self.cfg) {
            return Err(domain("grid function shape does not match the operator grid"));
        }
        let mut out = Vec::with_capacity(self.layout.size());
        for v in &f.minus[1..] {
            out.extend(v.iter().copied());
        }
        for v in &f.plus[..f.plus.len() - 1] {
            out.extend(v.iter().copied());
        }
        Ok(out)
    }

    /// Inverse of [`pack`](Self::pack), with zeros at the Dirichlet ends.
    pub fn unpack(&self, x: &[Complex64]) -> GridFunction {
        let mut g = GridFunction::zeros(&self.cfg);
        let n_t = self.layout.n_t;
        for i in 1..=self.layout.n_minus {
            let r = self.layout.row(Side::Minus, i, 0);
            g.minus[i] = CVec::from_column_slice(&x[r..r + n_t]);
        }
        for j in 0..self.layout.n_plus {
            let r = self.layout.row(Side::Plus, j, 0);
            g.plus[j] = CVec::from_column_slice(&x[r..r + n_t]);
        }
        g
    }

    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        Ok(self.unpack(&self.matrix.matvec(&self.pack(u)?)))
    }

    pub fn dense(&self) -> DMatrix<f64> {
        self.matrix.to_dense()
    }

    /// `W^{1/2} M W^{-1/2}`, symmetric when the interface rows are consistent.
    pub fn weighted_symmetric(&self) -> DMatrix<f64> {
        let s: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        let m = self.dense();
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| s[i] * m[(i, j)] / s[j])
    }

    /// Eigenvalues of the symmetrized matrix, ascending.
    pub fn symmetric_spectrum(&self) -> Vec<f64> {
        let a = self.weighted_symmetric();
        let sym = (&a + a.transpose()) * 0.5;
        let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    /// Eigenvalues of the raw (non-symmetric) matrix through its real Schur form.
    pub fn general_spectrum(&self) -> Vec<Complex64> {
        self.dense().complex_eigenvalues().iter().copied().collect()
    }

    pub fn factor(&self, lambda: Complex64) -> Result<ShiftedSolver<'_>> {
        let lu = BandLu::factor_shifted(&self.matrix, lambda)?;
        Ok(ShiftedSolver { op: self, lambda, lu })
    }

    /// `max_i |(M - lambda) x - b|_i`.
    fn residual(&self, lambda: Complex64, x: &[Complex64], b: &[Complex64]) -> f64 {
        self.matrix
            .matvec(x)
            .iter()
            .zip(x)
            .zip(b)
            .map(|((mx, xi), bi)| (mx - lambda * xi - bi).norm())
            .fold(0.0, f64::max)
    }

    /// Eigenpair nearest `shift` by inverse iteration, with the Rayleigh
    /// quotient taken in the weighted inner product.
    pub fn inverse_iteration(&self, shift: f64, max_iter: usize) -> Result<(f64, GridFunction)> {
        let solver = self.factor(Complex64::new(shift, 0.0))?;
        let n = self.layout.size();
        let mut x: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(1.0 + 0.1 * ((i * 7919) % 13) as f64, 0.0))
            .collect();
        let wnorm = |v: &[Complex64]| {
            v.iter()
                .zip(&self.weights)
                .map(|(c, w)| w * c.norm_sqr())
                .sum::<f64>()
                .sqrt()
        };
        let mut nu = shift;
        for it in 0..max_iter {
            let y = solver.lu.solve(&x);
            let s = wnorm(&y);
            x = y.iter().map(|c| c / s).collect();
            let mx = self.matrix.matvec(&x);
            let rq: f64 = x
                .iter()
                .zip(&mx)
                .zip(&self.weights)
                .map(|((a, b), w)| w * (a.conj() * b).re)
                .sum();
            let res = wnorm(&mx.iter().zip(&x).map(|(a, b)| a - b * rq).collect::<Vec<_>>());
            nu = rq;
            if res <= 1e-11 * rq.abs().max(1.0) {
                return Ok((nu, self.unpack(&x)));
            }
            if it + 1 == max_iter {
                return Err(Error::NoConvergence {
                    iterations: max_iter,
                    last_change: res / rq.abs().max(1.0),
                });
            }
        }
        Ok((nu, self.unpack(&x)))
    }
}

/// A factorization of `M - lambda I` kept for repeated solves.
#[derive(Debug, Clone)]
pub struct ShiftedSolver<'a> {
    op: &'a Direct2DOperator,
    pub lambda: Complex64,
    lu: BandLu,
}

impl ShiftedSolver<'_> {
    pub fn solve_vec(&self, b: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut x = self.lu.solve(b);
        let bnorm = b.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let mut res = self.op.residual(self.lambda, &x, b);
        if res > 1e-10 * bnorm {
            // one step of iterative refinement
            let r: Vec<Complex64> = self
                .op
                .matrix
                .matvec(&x)
                .iter()
                .zip(&x)
                .zip(b)
                .map(|((mx, xi), bi)| bi - (mx - self.lambda * xi))
                .collect();
            let dx = self.lu.solve(&r);
            for (xi, di) in x.iter_mut().zip(dx) {
                *xi += di;
            }
            res = self.op.residual(self.lambda, &x, b);
        }
        if res > 1e-10 * bnorm {
            return Err(Error::Breakdown(format!(
                "residual {res:.3e} exceeds 1e-10 * |f| (pivot ratio {:.3e})",
                self.lu.pivot_ratio
            )));
        }
        Ok(x)
    }

    pub fn solve(&self, f: &GridFunction) -> Result<GridFunction> {
        let x = self.solve_vec(&self.op.pack(f)?)?;
        Ok(self.op.unpack(&x))
    }
}

/// `(M - lambda I)^{-1} f` by banded LU.
pub fn direct_resolvent_solve(
    op: &Direct2DOperator,
    lambda: Complex64,
    f: &GridFunction,
) -> Result<GridFunction> {
    op.factor(lambda)?.solve(f)
}

/// Largest step accepted by the Crank–Nicolson reference.
pub const CN_MAX_STEP: f64 = 1e-2;

/// Crank–Nicolson stepper with a cached factorization of `M - (2/dt) I`.
#[derive(Debug, Clone)]
pub struct CrankNicolson<'a> {
    op: &'a Direct2DOperator,
    pub dt: f64,
    lu: BandLu,
}

impl<'a> CrankNicolson<'a> {
    pub fn new(op: &'a Direct2DOperator, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt <= CN_MAX_STEP) {
            return Err(domain(format!("time step {dt} outside (0, {CN_MAX_STEP}]")));
        }
        let lu = BandLu::factor_shifted(&op.matrix, Complex64::new(2.0 / dt, 0.0))?;
        Ok(Self { op, dt, lu })
    }

    /// Advances the packed state `x` by `n_steps`.
    pub fn advance(&self, x: &mut Vec<Complex64>, n_steps: usize) {
        let c = 2.0 / self.dt;
        for _ in 0..n_steps {
            // (M - c) x_new = -(M + c) x
            let rhs: Vec<Complex64> = self
                .op
                .matrix
                .matvec(x)
                .iter()
                .zip(x.iter())
                .map(|(mx, xi)| -(mx + xi * c))
                .collect();
            *x = self.lu.solve(&rhs);
        }
    }
}

pub fn time_step_cn(
    op: &Direct2DOperator,
    u0: &GridFunction,
    dt: f64,
    n_steps: usize,
) -> Result<GridFunction> {
    if n_steps == 0 {
        return Err(domain("n_steps must be positive"));
    }
    let cn = CrankNicolson::new(op, dt)?;
    let mut x = op.pack(u0)?;
    cn.advance(&mut x, n_steps);
    Ok(op.unpack(&x))
}

/// 1D hat-function stiffness and mass rows on one habitat, applied along x.
/// `half_at` is the node index carrying a half hat (the interface).
fn apply_x(u: &[CVec], dx: f64, half_at: usize, stiff: bool) -> Vec<CVec> {
    let n = u.len();
    let zero = CVec::zeros(u[0].len());
    let get = |i: isize| -> &CVec {
        if i < 0 || i as usize >= n {
            &zero
        } else {
            &u[i as usize]
        }
    };
    (0..n)
        .map(|i| {
            let ii = i as isize;
            // neighbour on the far side of the half hat does not exist
            let (l, r) = if i == half_at && half_at == 0 {
                (&zero, get(ii + 1))
            } else if i == half_at {
                (get(ii - 1), &zero)
            } else {
                (get(ii - 1), get(ii + 1))
            };
            let half = i == half_at;
            let c = |x: f64| Complex64::new(x, 0.0);
            if stiff {
                let diag = if half { 1.0 } else { 2.0 };
                (&u[i] * c(diag) - l - r) * c(1.0 / dx)
            } else {
                let diag = if half { 2.0 } else { 4.0 };
                (&u[i] * c(diag) + l + r) * c(dx / 6.0)
            }
        })
        .collect()
}

fn apply_y(v: &CVec, h: f64, stiff: bool) -> CVec {
    let n = v.len();
    CVec::from_fn(n, |k, _| {
        let l = if k > 0 { v[k - 1] } else { Complex64::new(0.0, 0.0) };
        let r = if k + 1 < n {
            v[k + 1]
        } else {
            Complex64::new(0.0, 0.0)
        };
        if stiff {
            (v[k] * 2.0 - l - r) / h
        } else {
            (v[k] * 4.0 + l + r) * (h / 6.0)
        }
    })
}

/// Largest weak-form defect `|a(u, phi) + b(u, phi) - l(phi)|` over tensor
/// hat test functions `phi` at every unknown node, for `-P u = g`.
///
/// Forms are integrated exactly for the bilinear interpolants of `u` and `g`.
pub fn weak_residual(op: &Direct2DOperator, u: &GridFunction, g: &GridFunction) -> Result<f64> {
    let cfg = &op.cfg;
    if !u.matches(cfg) || !g.matches(cfg) {
        return Err(domain("grid function shape does not match the operator grid"));
    }
    let h = cfg.transversal_step();
    let c = |x: f64| Complex64::new(x, 0.0);
    let jump = &u.plus[0] - &u.minus[u.minus.len() - 1];
    let jump_mass = apply_y(&jump, h, false) * c(cfg.q);
    let mut worst = 0.0f64;
    let sides = [
        (
            Side::Minus,
            &u.minus,
            &g.minus,
            cfg.d_minus,
            cfg.r_minus,
            cfg.minus_step(),
        ),
        (
            Side::Plus,
            &u.plus,
            &g.plus,
            cfg.d_plus,
            cfg.r_plus,
            cfg.plus_step(),
        ),
    ];
    for (side, us, gs, d, r, dx) in sides {
        let half_at = match side {
            Side::Minus => us.len() - 1,
            Side::Plus => 0,
        };
        let kx = apply_x(us, dx, half_at, true);
        let mx = apply_x(us, dx, half_at, false);
        let mg = apply_x(gs, dx, half_at, false);
        let tested: Vec<usize> = match side {
            Side::Minus => (1..us.len()).collect(),
            Side::Plus => (0..us.len() - 1).collect(),
        };
        for i in tested {
            let mut res = apply_y(&kx[i], h, false) * c(d)
                + apply_y(&mx[i], h, true) * c(d)
                + apply_y(&mx[i], h, false) * c(r)
                - apply_y(&mg[i], h, false);
            if i == half_at {
                match side {
                    Side::Minus => res -= &jump_mass,
                    Side::Plus => res += &jump_mass,
                }
            }
            worst = worst.max(res.iter().map(|z| z.norm()).fold(0.0, f64::max));
        }
    }
    Ok(worst)
}

/// Discrete energy `-<M u, u>_W`, which is `a(u,u) + b(u,u)` for the
/// finite-difference forms.
pub fn discrete_energy(op: &Direct2DOperator, u: &GridFunction) -> Result<f64> {
    let x = op.pack(u)?;
    let mx = op.matrix.matvec(&x);
    Ok(-x
        .iter()
        .zip(&mx)
        .zip(&op.weights)
        .map(|((a, b), w)| w * (a.conj() * b).re)
        .sum::<f64>())
}

/// `cos(kappa x)` and `sin(kappa x) / kappa` as functions of `kappa^2`.
fn trig_pair(kappa2: f64, x: f64) -> (f64, f64) {
    if kappa2 >= 0.0 {
        let k = kappa2.sqrt();
        if k * x < 1e-8 {
            (1.0, x)
        } else {
            ((k * x).cos(), (k * x).sin() / k)
        }
    } else {
        let m = (-kappa2).sqrt();
        if m * x < 1e-8 {
            (1.0, x)
        } else {
            ((m * x).cosh(), (m * x).sinh() / m)
        }
    }
}

/// Eigenpair of the operator that is discrete across and continuous along
/// the habitats, for transversal mode `mode` (0-based) and longitudinal
/// index `root` (0 = top eigenvalue of that mode).
///
/// Built from `sin`/`sinh` profiles matched through the two flux conditions;
/// independent of the resolvent formulas. The eigenfunction is sampled on
/// the configuration grid and scaled to unit `p2` norm.
pub fn semidiscrete_eigenpair(cfg: &HabitatConfig, mode: usize, root: usize) -> Result<(f64, GridFunction)> {
    cfg.validate()?;
    if mode >= cfg.n_transversal {
        return Err(domain("mode index exceeds the transversal size"));
    }
    let op = cfg.transversal()?;
    let mu = op.eigen().values[mode];
    let parts = |nu: f64| {
        let km = mu - (cfg.r_minus + nu) / cfg.d_minus;
        let kp = mu - (cfg.r_plus + nu) / cfg.d_plus;
        let (cm, sm) = trig_pair(km, cfg.ell);
        let (cp, sp) = trig_pair(kp, cfg.big_l);
        (km, kp, cm, sm, cp, sp)
    };
    let det = |nu: f64| {
        let (_, _, cm, sm, cp, sp) = parts(nu);
        (cfg.d_minus * cm + cfg.q * sm) * (-cfg.d_plus * cp - cfg.q * sp) + cfg.q * cfg.q * sm * sp
    };
    let scale = cfg.d_minus.min(cfg.d_plus) * std::f64::consts::PI.powi(2) / cfg.ell.max(cfg.big_l).powi(2);
    let step = 1e-3 * scale;
    let mut found = 0;
    let mut a = 0.0;
    let mut fa = det(a);
    let limit = 1e7 * scale;
    let nu = loop {
        let b = a - step;
        let fb = det(b);
        if fa == 0.0 || fa.signum() != fb.signum() {
            if found == root {
                let (mut lo, mut hi, mut flo) = (b, a, fb);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid == lo || mid == hi {
                        break;
                    }
                    let fm = det(mid);
                    if fm.signum() == flo.signum() {
                        lo = mid;
                        flo = fm;
                    } else {
                        hi = mid;
                    }
                }
                break 0.5 * (lo + hi);
            }
            found += 1;
        }
        a = b;
        fa = fb;
        if a < -limit {
            return Err(Error::NoConvergence {
                iterations: (limit / step) as usize,
                last_change: fa.abs(),
            });
        }
    };
    let (km, kp, cm, sm, _, sp) = parts(nu);
    // null vector of the 2x2 interface system
    let alpha = cfg.q * sp;
    let beta = cfg.d_minus * cm + cfg.q * sm;
    let phi = op.eigen().vectors.column(mode).into_owned();
    let f = GridFunction::from_fn(cfg, |side, x, y| {
        let k = ((y / op.h).round() as usize).saturating_sub(1);
        let prof = match side {
            Side::Minus => alpha * trig_pair(km, x + cfg.ell).1,
            Side::Plus => beta * trig_pair(kp, cfg.big_l - x).1,
        };
        Complex64::new(prof * phi[k], 0.0)
    });
    let s = f.p2_norm();
    Ok((nu, f.scale(Complex64::new(1.0 / s, 0.0))))
}

/// Dense matrix of the closed-form resolvent at `lambda` on the interior
/// unknowns (Dirichlet ends removed), built column by column.
pub fn resolvent_matrix(cfg: &HabitatConfig, lambda: Complex64) -> Result<DMatrix<Complex64>> {
    let op = build_2d_operator(cfg)?;
    let n = op.layout.size();
    let ws = crate::resolvent::ResolventWorkspace::assemble(
        crate::calculus::SpectralPath::new(&cfg.transversal()?),
        cfg,
        lambda,
        0.0,
    )?;
    let mut out = DMatrix::zeros(n, n);
    let mut e = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        e[j] = Complex64::new(1.0, 0.0);
        let w = ws.apply(&op.unpack(&e))?;
        out.set_column(j, &DVector::from_vec(op.pack(&w)?));
        e[j] = Complex64::new(0.0, 0.0);
    }
    Ok(out)
}
