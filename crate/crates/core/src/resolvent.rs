//! Closed-form resolvent of the transmission operator.
//!
//! For a spectral parameter `lambda` the problem splits into two abstract
//! second-order equations `w'' - B^2 w = g` on `(-ell, 0)` and `(0, L)`,
//! coupled through two Robin-type interface conditions. The solution is a
//! variation-of-constants convolution plus four boundary terms whose
//! coefficients solve a 2x2 operator system with an explicit determinant.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::calculus::{CrossAlgebra, DensePath, SpectralPath};
use crate::error::{config, domain, Error, Result};
use crate::operator::{build_dirichlet_laplacian, CVec, TransversalOperator};
use crate::sector::{in_resolvent_region, SymbolParams};

/// Physical constants of the two habitats and the discretization sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HabitatConfig {
    pub ell: f64,
    #[serde(rename = "L")]
    pub big_l: f64,
    pub d_minus: f64,
    pub d_plus: f64,
    pub r_minus: f64,
    pub r_plus: f64,
    pub q: f64,
    pub n_transversal: usize,
    /// Node count on `[-ell, 0]`, both ends included.
    pub n_long_minus: usize,
    /// Node count on `[0, L]`, both ends included.
    pub n_long_plus: usize,
}

impl HabitatConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("habitat.ell", self.ell),
            ("habitat.L", self.big_l),
            ("habitat.d_minus", self.d_minus),
            ("habitat.d_plus", self.d_plus),
            ("habitat.r_minus", self.r_minus),
            ("habitat.r_plus", self.r_plus),
            ("habitat.q", self.q),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(config(name, format!("must be strictly positive, got {v}")));
            }
        }
        if self.n_transversal == 0 {
            return Err(config("habitat.n_transversal", "must be at least 1"));
        }
        if self.n_long_minus < 3 {
            return Err(config("habitat.n_long_minus", "must be at least 3"));
        }
        if self.n_long_plus < 3 {
            return Err(config("habitat.n_long_plus", "must be at least 3"));
        }
        Ok(())
    }

    pub fn minus_step(&self) -> f64 {
        self.ell / (self.n_long_minus - 1) as f64
    }

    pub fn plus_step(&self) -> f64 {
        self.big_l / (self.n_long_plus - 1) as f64
    }

    pub fn transversal_step(&self) -> f64 {
        1.0 / (self.n_transversal as f64 + 1.0)
    }

    pub fn minus_nodes(&self) -> Vec<f64> {
        let h = self.minus_step();
        let n = self.n_long_minus - 1;
        (0..=n)
            .map(|i| if i == n { 0.0 } else { -self.ell + i as f64 * h })
            .collect()
    }

    pub fn plus_nodes(&self) -> Vec<f64> {
        let h = self.plus_step();
        let n = self.n_long_plus - 1;
        (0..=n)
            .map(|i| if i == n { self.big_l } else { i as f64 * h })
            .collect()
    }

    pub fn transversal_nodes(&self) -> Vec<f64> {
        let h = self.transversal_step();
        (1..=self.n_transversal).map(|j| j as f64 * h).collect()
    }

    pub fn transversal(&self) -> Result<TransversalOperator> {
        build_dirichlet_laplacian(self.n_transversal)
    }

    pub fn symbol_params(&self, lambda: Complex64) -> SymbolParams {
        SymbolParams {
            ell: self.ell,
            big_l: self.big_l,
            d_minus: self.d_minus,
            d_plus: self.d_plus,
            r_minus: self.r_minus,
            r_plus: self.r_plus,
            q: self.q,
            lambda,
        }
    }

    /// Same physics with new discretization sizes.
    pub fn with_grid(&self, n_transversal: usize, n_long_minus: usize, n_long_plus: usize) -> Self {
        Self {
            n_transversal,
            n_long_minus,
            n_long_plus,
            ..*self
        }
    }
}

/// Which habitat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Minus,
    Plus,
}

/// Cross-section vectors sampled at the longitudinal nodes of both habitats.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub minus: Vec<CVec>,
    pub plus: Vec<CVec>,
    pub minus_nodes: Vec<f64>,
    pub plus_nodes: Vec<f64>,
    pub transversal_nodes: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(cfg: &HabitatConfig) -> Self {
        let n = cfg.n_transversal;
        Self {
            minus: vec![CVec::zeros(n); cfg.n_long_minus],
            plus: vec![CVec::zeros(n); cfg.n_long_plus],
            minus_nodes: cfg.minus_nodes(),
            plus_nodes: cfg.plus_nodes(),
            transversal_nodes: cfg.transversal_nodes(),
        }
    }

    /// Samples `f(side, x, y)` at every node.
    pub fn from_fn(cfg: &HabitatConfig, mut f: impl FnMut(Side, f64, f64) -> Complex64) -> Self {
        let mut g = Self::zeros(cfg);
        let ys = g.transversal_nodes.clone();
        for (i, &x) in g.minus_nodes.clone().iter().enumerate() {
            g.minus[i] = CVec::from_fn(ys.len(), |k, _| f(Side::Minus, x, ys[k]));
        }
        for (i, &x) in g.plus_nodes.clone().iter().enumerate() {
            g.plus[i] = CVec::from_fn(ys.len(), |k, _| f(Side::Plus, x, ys[k]));
        }
        g
    }

    pub fn matches(&self, cfg: &HabitatConfig) -> bool {
        self.minus.len() == cfg.n_long_minus
            && self.plus.len() == cfg.n_long_plus
            && self
                .minus
                .iter()
                .chain(self.plus.iter())
                .all(|v| v.len() == cfg.n_transversal)
    }

    fn steps(&self) -> (f64, f64, f64) {
        let sm = self.minus_nodes[1] - self.minus_nodes[0];
        let sp = self.plus_nodes[1] - self.plus_nodes[0];
        let h = if !self.transversal_nodes.is_empty() {
            1.0 / (self.transversal_nodes.len() as f64 + 1.0)
        } else {
            1.0
        };
        (sm, sp, h)
    }

    /// Trapezoid weights (times the transversal step) for each node of each side.
    pub fn weights(&self) -> (Vec<f64>, Vec<f64>) {
        let (sm, sp, h) = self.steps();
        let wm = trapezoid(self.minus.len(), sm * h);
        let wp = trapezoid(self.plus.len(), sp * h);
        (wm, wp)
    }

    /// Discrete L2 norm: trapezoid rule along each habitat, rectangle rule across.
    pub fn p2_norm(&self) -> f64 {
        self.inner(self).re.max(0.0).sqrt()
    }

    /// Weighted inner product `sum w conj(u) v`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        let (wm, wp) = self.weights();
        let mut s = Complex64::new(0.0, 0.0);
        for (i, w) in wm.iter().enumerate() {
            s += self.minus[i].dotc(&other.minus[i]) * *w;
        }
        for (i, w) in wp.iter().enumerate() {
            s += self.plus[i].dotc(&other.plus[i]) * *w;
        }
        s
    }

    pub fn p1_norm(&self) -> f64 {
        let (wm, wp) = self.weights();
        let a: f64 = self
            .minus
            .iter()
            .zip(&wm)
            .map(|(v, w)| w * v.iter().map(|c| c.norm()).sum::<f64>())
            .sum();
        let b: f64 = self
            .plus
            .iter()
            .zip(&wp)
            .map(|(v, w)| w * v.iter().map(|c| c.norm()).sum::<f64>())
            .sum();
        a + b
    }

    pub fn pinf_norm(&self) -> f64 {
        self.minus
            .iter()
            .chain(self.plus.iter())
            .flat_map(|v| v.iter().map(|c| c.norm()))
            .fold(0.0, f64::max)
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(&CVec, &CVec) -> CVec) -> Self {
        Self {
            minus: self
                .minus
                .iter()
                .zip(&other.minus)
                .map(|(a, b)| f(a, b))
                .collect(),
            plus: self.plus.iter().zip(&other.plus).map(|(a, b)| f(a, b)).collect(),
            ..self.clone_shape()
        }
    }

    pub fn map(&self, f: impl Fn(&CVec) -> CVec) -> Self {
        Self {
            minus: self.minus.iter().map(&f).collect(),
            plus: self.plus.iter().map(&f).collect(),
            ..self.clone_shape()
        }
    }

    fn clone_shape(&self) -> Self {
        Self {
            minus: Vec::new(),
            plus: Vec::new(),
            minus_nodes: self.minus_nodes.clone(),
            plus_nodes: self.plus_nodes.clone(),
            transversal_nodes: self.transversal_nodes.clone(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|a| a * c)
    }

    pub fn conj(&self) -> Self {
        self.map(|a| a.map(|c| c.conj()))
    }

    pub fn real_part(&self) -> Self {
        self.map(|a| a.map(|c| Complex64::new(c.re, 0.0)))
    }

    /// Largest absolute imaginary part over all nodes.
    pub fn max_imag(&self) -> f64 {
        self.minus
            .iter()
            .chain(self.plus.iter())
            .flat_map(|v| v.iter().map(|c| c.im.abs()))
            .fold(0.0, f64::max)
    }
}

fn trapezoid(n: usize, step: f64) -> Vec<f64> {
    (0..n)
        .map(|i| if i == 0 || i + 1 == n { step / 2.0 } else { step })
        .collect()
}

/// Values and interface derivatives of the particular solutions at the ends
/// of each habitat.
#[derive(Debug, Clone, PartialEq)]
pub struct Traces {
    /// `v_-(-ell)`
    pub minus_left: CVec,
    /// `v_-(0)`
    pub minus_zero: CVec,
    /// `v_+(0)`
    pub plus_zero: CVec,
    /// `v_+(L)`
    pub plus_right: CVec,
    /// `v_-'(0)`
    pub minus_deriv_zero: CVec,
    /// `v_+'(0)`
    pub plus_deriv_zero: CVec,
}

/// Output of the one-sided convolution.
#[derive(Debug, Clone)]
pub struct SideConvolution {
    /// `v(x_j)` at every node.
    pub v: Vec<CVec>,
    /// Derivative at the interface from the exact trace formula.
    pub deriv_zero: CVec,
    /// `I_j = int_{x_0}^{x_j} e^{(x_j - t) B} g(t) dt`.
    pub forward: Vec<CVec>,
    /// `J_j = int_{x_j}^{x_n} e^{(t - x_j) B} g(t) dt`.
    pub backward: Vec<CVec>,
}

/// Interface and boundary coefficients `j_-, k_-, j_+, k_+`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCoefficients {
    pub j_minus: CVec,
    pub k_minus: CVec,
    pub j_plus: CVec,
    pub k_plus: CVec,
}

/// All `lambda`-dependent operators, assembled once.
#[derive(Debug, Clone)]
pub struct ResolventWorkspace<A: CrossAlgebra> {
    pub alg: A,
    pub cfg: HabitatConfig,
    pub lambda: Complex64,
    pub lambda_minus: Complex64,
    pub lambda_plus: Complex64,
    pub rho_minus: f64,
    pub rho_plus: f64,
    pub q_minus: f64,
    pub q_plus: f64,
    pub b_minus: A::Op,
    pub b_plus: A::Op,
    /// `e^{ell B_-}`
    pub prop_ell: A::Op,
    /// `e^{L B_+}`
    pub prop_big_l: A::Op,
    /// `e^{2 ell B_-}`
    pub prop_2ell: A::Op,
    /// `e^{2 L B_+}`
    pub prop_2big_l: A::Op,
    pub inv_b_minus: A::Op,
    pub inv_b_plus: A::Op,
    /// `(I + e^{2 ell B_-})^{-1}`
    pub inv_one_plus_minus: A::Op,
    /// `(I - e^{2 ell B_-})^{-1}`
    pub inv_one_minus_minus: A::Op,
    /// `(I + e^{2 L B_+})^{-1}`
    pub inv_one_plus_plus: A::Op,
    /// `(I - e^{2 L B_+})^{-1}`
    pub inv_one_minus_plus: A::Op,
    pub d_star: A::Op,
    pub d_star_inverse: A::Op,
    /// `D^{-1} = D_*^{-1} (I + e^{2 L B_+})^{-1} (I + e^{2 ell B_-})^{-1}`
    pub d_inverse: A::Op,
    /// Largest relative gap between `D_*^{-1}` and `(1/f)(-A)`, when available.
    pub symbol_mismatch: Option<f64>,
    k_from_pi1: A::Op,
    k_from_pi2: A::Op,
    j_from_pi1: A::Op,
    j_from_pi2: A::Op,
    step_minus: A::Op,
    step_plus: A::Op,
    w0_minus: A::Op,
    w1_minus: A::Op,
    w0_plus: A::Op,
    w1_plus: A::Op,
}

/// Condition number past which `D_*` counts as singular.
pub const DETERMINANT_CONDITION_LIMIT: f64 = 1e12;

impl<A: CrossAlgebra> ResolventWorkspace<A> {
    /// Assembles every cached operator for `lambda` in the resolvent sector
    /// of half-angle `pi - epsilon0` (or `lambda = 0`).
    pub fn assemble(alg: A, cfg: &HabitatConfig, lambda: Complex64, epsilon0: f64) -> Result<Self> {
        cfg.validate()?;
        if alg.dim() != cfg.n_transversal {
            return Err(domain(
                "operator path and configuration disagree on the transversal size",
            ));
        }
        if !in_resolvent_region(lambda, epsilon0) {
            return Err(domain(format!(
                "lambda = {lambda} lies outside the sector of half-angle pi - {epsilon0}"
            )));
        }
        let p = cfg.symbol_params(lambda);
        let (qm, qp) = (p.q_minus(), p.q_plus());
        let id = alg.identity();

        let b_minus = alg.generator(cfg.d_minus, cfg.r_minus, lambda)?;
        let b_plus = alg.generator(cfg.d_plus, cfg.r_plus, lambda)?;
        let prop_ell = alg.exp(&b_minus, cfg.ell);
        let prop_big_l = alg.exp(&b_plus, cfg.big_l);
        let prop_2ell = alg.exp(&b_minus, 2.0 * cfg.ell);
        let prop_2big_l = alg.exp(&b_plus, 2.0 * cfg.big_l);
        let inv_b_minus = alg.inverse(&b_minus)?;
        let inv_b_plus = alg.inverse(&b_plus)?;

        let one_plus_m = alg.add(&id, &prop_2ell);
        let one_minus_m = alg.sub(&id, &prop_2ell);
        let one_plus_p = alg.add(&id, &prop_2big_l);
        let one_minus_p = alg.sub(&id, &prop_2big_l);
        let inv_one_plus_minus = alg.inverse(&one_plus_m)?;
        let inv_one_minus_minus = alg.inverse(&one_minus_m)?;
        let inv_one_plus_plus = alg.inverse(&one_plus_p)?;
        let inv_one_minus_plus = alg.inverse(&one_minus_p)?;

        // D_* = I - q+ B+^{-1} (I - e^{2L B+})(I + e^{2L B+})^{-1}
        //         - q- B-^{-1} (I - e^{2ell B-})(I + e^{2ell B-})^{-1}
        let plus_term = alg.scale(
            &alg.mul(&alg.mul(&inv_b_plus, &one_minus_p), &inv_one_plus_plus),
            qp,
        );
        let minus_term = alg.scale(
            &alg.mul(&alg.mul(&inv_b_minus, &one_minus_m), &inv_one_plus_minus),
            qm,
        );
        let d_star = alg.sub(&alg.sub(&id, &plus_term), &minus_term);
        let cond = alg.condition(&d_star);
        if !(cond < DETERMINANT_CONDITION_LIMIT) {
            return Err(Error::Internal(format!(
                "determinant factor has condition {cond:.3e} at lambda = {lambda}"
            )));
        }
        let d_star_inverse = alg.inverse(&d_star)?;
        let symbol_mismatch = alg.symbol_inverse(&p).map(|s| {
            let gap = alg.norm2(&alg.sub(&s, &d_star_inverse));
            gap / alg.norm2(&s)
        });
        if let Some(m) = symbol_mismatch {
            if m > 1e-8 {
                return Err(Error::Internal(format!(
                    "inverse determinant factor differs from the symbol by {m:.3e}"
                )));
            }
        }
        let d_inverse = alg.mul(&alg.mul(&d_star_inverse, &inv_one_plus_plus), &inv_one_plus_minus);

        // k- = D^{-1} [ B-^{-1} [(I + e^{2L B+}) - q+ B+^{-1} (I - e^{2L B+})] Pi'
        //               - q- B+^{-1} B-^{-1} (I - e^{2L B+}) Pi'' ]
        let bracket_p = alg.sub(&one_plus_p, &alg.scale(&alg.mul(&inv_b_plus, &one_minus_p), qp));
        let k_from_pi1 = alg.mul(&d_inverse, &alg.mul(&inv_b_minus, &bracket_p));
        let k_from_pi2 = alg.scale(
            &alg.mul(
                &d_inverse,
                &alg.mul(&alg.mul(&inv_b_plus, &inv_b_minus), &one_minus_p),
            ),
            -qm,
        );
        // j+ = D^{-1} [ [(I + e^{2ell B-}) - q- B-^{-1} (I - e^{2ell B-})] B+^{-1} Pi''
        //               - q+ B+^{-1} (I - e^{2ell B-}) B-^{-1} Pi' ]
        let bracket_m = alg.sub(&one_plus_m, &alg.scale(&alg.mul(&inv_b_minus, &one_minus_m), qm));
        let j_from_pi2 = alg.mul(&d_inverse, &alg.mul(&bracket_m, &inv_b_plus));
        let j_from_pi1 = alg.scale(
            &alg.mul(
                &d_inverse,
                &alg.mul(&alg.mul(&inv_b_plus, &one_minus_m), &inv_b_minus),
            ),
            -qp,
        );

        let (hm, hp) = (cfg.minus_step(), cfg.plus_step());
        let step_minus = alg.exp(&b_minus, hm);
        let step_plus = alg.exp(&b_plus, hp);
        let (w0_minus, w1_minus) = alg.phi_weights(&b_minus, hm);
        let (w0_plus, w1_plus) = alg.phi_weights(&b_plus, hp);

        Ok(Self {
            alg,
            cfg: *cfg,
            lambda,
            lambda_minus: p.lambda_minus(),
            lambda_plus: p.lambda_plus(),
            rho_minus: p.rho_minus(),
            rho_plus: p.rho_plus(),
            q_minus: qm,
            q_plus: qp,
            b_minus,
            b_plus,
            prop_ell,
            prop_big_l,
            prop_2ell,
            prop_2big_l,
            inv_b_minus,
            inv_b_plus,
            inv_one_plus_minus,
            inv_one_minus_minus,
            inv_one_plus_plus,
            inv_one_minus_plus,
            d_star,
            d_star_inverse,
            d_inverse,
            symbol_mismatch,
            k_from_pi1,
            k_from_pi2,
            j_from_pi1,
            j_from_pi2,
            step_minus,
            step_plus,
            w0_minus,
            w1_minus,
            w0_plus,
            w1_plus,
        })
    }

    /// The full determinant `D = (I + e^{2 ell B_-})(I + e^{2 L B_+}) D_*`.
    pub fn determinant(&self) -> A::Op {
        let a = &self.alg;
        let id = a.identity();
        a.mul(
            &a.mul(&a.add(&id, &self.prop_2ell), &a.add(&id, &self.prop_2big_l)),
            &self.d_star,
        )
    }

    fn side_ops(&self, side: Side) -> (&A::Op, &A::Op, &A::Op, &A::Op) {
        match side {
            Side::Minus => (
                &self.step_minus,
                &self.w0_minus,
                &self.w1_minus,
                &self.inv_b_minus,
            ),
            Side::Plus => (&self.step_plus, &self.w0_plus, &self.w1_plus, &self.inv_b_plus),
        }
    }

    /// Convolution in working coordinates; `g` is already divided by `d`.
    pub fn convolve_work(&self, g: &[CVec], side: Side) -> SideConvolution {
        let a = &self.alg;
        let (step, w0, w1, inv_b) = self.side_ops(side);
        let n = g.len();
        let dim = a.dim();
        let mut forward = vec![CVec::zeros(dim); n];
        for j in 1..n {
            forward[j] = a.apply(step, &forward[j - 1]) + a.apply(w0, &g[j]) + a.apply(w1, &g[j - 1]);
        }
        let mut backward = vec![CVec::zeros(dim); n];
        for j in (0..n - 1).rev() {
            backward[j] = a.apply(step, &backward[j + 1]) + a.apply(w0, &g[j]) + a.apply(w1, &g[j + 1]);
        }
        let half = Complex64::new(0.5, 0.0);
        let v = forward
            .iter()
            .zip(&backward)
            .map(|(i, j)| a.apply(inv_b, &(i + j)) * half)
            .collect();
        let deriv_zero = match side {
            Side::Minus => &forward[n - 1] * half,
            Side::Plus => &backward[0] * (-half),
        };
        SideConvolution {
            v,
            deriv_zero,
            forward,
            backward,
        }
    }

    /// Particular solution `v(g)` of `v'' - B^2 v = g` on one habitat, in
    /// node coordinates.
    pub fn convolve_v(&self, g: &[CVec], side: Side) -> SideConvolution {
        let a = &self.alg;
        let gw: Vec<CVec> = g.iter().map(|v| a.to_work(v)).collect();
        let c = self.convolve_work(&gw, side);
        let back = |xs: Vec<CVec>| xs.iter().map(|v| a.from_work(v)).collect::<Vec<_>>();
        SideConvolution {
            deriv_zero: a.from_work(&c.deriv_zero),
            v: back(c.v),
            forward: back(c.forward),
            backward: back(c.backward),
        }
    }

    /// End values and interface derivatives of two one-sided convolutions.
    pub fn traces(minus: &SideConvolution, plus: &SideConvolution) -> Traces {
        Traces {
            minus_left: minus.v[0].clone(),
            minus_zero: minus.v[minus.v.len() - 1].clone(),
            plus_zero: plus.v[0].clone(),
            plus_right: plus.v[plus.v.len() - 1].clone(),
            minus_deriv_zero: minus.deriv_zero.clone(),
            plus_deriv_zero: plus.deriv_zero.clone(),
        }
    }

    /// Right-hand sides `(Pi', Pi'')` of the coefficient system; inputs and
    /// outputs in working coordinates.
    pub fn boundary_data_work(&self, t: &Traces) -> (CVec, CVec) {
        let a = &self.alg;
        let (qm, qp) = (
            Complex64::new(self.q_minus, 0.0),
            Complex64::new(self.q_plus, 0.0),
        );
        let em_vl = a.apply(&self.prop_ell, &t.minus_left);
        let ep_vr = a.apply(&self.prop_big_l, &t.plus_right);
        let b_em_vl = a.apply(&self.b_minus, &em_vl);
        let b_ep_vr = a.apply(&self.b_plus, &ep_vr);
        let pi1 = &t.minus_deriv_zero - &b_em_vl + &ep_vr * qm - &t.plus_zero * qm - &em_vl * qm
            + &t.minus_zero * qm;
        let pi2 = -&t.plus_deriv_zero - &b_ep_vr - &ep_vr * qp + &t.plus_zero * qp + &em_vl * qp
            - &t.minus_zero * qp;
        (pi1, pi2)
    }

    /// `(Pi', Pi'')` in node coordinates.
    pub fn boundary_data(&self, t: &Traces) -> (CVec, CVec) {
        let a = &self.alg;
        let tw = self.traces_to_work(t);
        let (p1, p2) = self.boundary_data_work(&tw);
        (a.from_work(&p1), a.from_work(&p2))
    }

    fn traces_to_work(&self, t: &Traces) -> Traces {
        let a = &self.alg;
        Traces {
            minus_left: a.to_work(&t.minus_left),
            minus_zero: a.to_work(&t.minus_zero),
            plus_zero: a.to_work(&t.plus_zero),
            plus_right: a.to_work(&t.plus_right),
            minus_deriv_zero: a.to_work(&t.minus_deriv_zero),
            plus_deriv_zero: a.to_work(&t.plus_deriv_zero),
        }
    }

    /// Coefficients in working coordinates. `minus_left = v_-(-ell)` and
    /// `plus_right = v_+(L)` feed the back-substitution for `j_-` and `k_+`.
    pub fn solve_boundary_coefficients_work(
        &self,
        pi1: &CVec,
        pi2: &CVec,
        minus_left: &CVec,
        plus_right: &CVec,
    ) -> BoundaryCoefficients {
        let a = &self.alg;
        let k_minus = a.apply(&self.k_from_pi1, pi1) + a.apply(&self.k_from_pi2, pi2);
        let j_plus = a.apply(&self.j_from_pi2, pi2) + a.apply(&self.j_from_pi1, pi1);
        let j_minus = -a.apply(&self.prop_ell, &k_minus) - minus_left;
        let k_plus = -a.apply(&self.prop_big_l, &j_plus) - plus_right;
        BoundaryCoefficients {
            j_minus,
            k_minus,
            j_plus,
            k_plus,
        }
    }

    /// Coefficients in node coordinates.
    pub fn solve_boundary_coefficients(
        &self,
        pi1: &CVec,
        pi2: &CVec,
        minus_left: &CVec,
        plus_right: &CVec,
    ) -> BoundaryCoefficients {
        let a = &self.alg;
        let c = self.solve_boundary_coefficients_work(
            &a.to_work(pi1),
            &a.to_work(pi2),
            &a.to_work(minus_left),
            &a.to_work(plus_right),
        );
        BoundaryCoefficients {
            j_minus: a.from_work(&c.j_minus),
            k_minus: a.from_work(&c.k_minus),
            j_plus: a.from_work(&c.j_plus),
            k_plus: a.from_work(&c.k_plus),
        }
    }

    /// Residuals of the two Dirichlet and two interface conditions for the
    /// coefficients `c` and traces `t` (both in node coordinates).
    pub fn coefficient_residuals(&self, c: &BoundaryCoefficients, t: &Traces) -> [f64; 4] {
        let a = &self.alg;
        let w = |v: &CVec| a.to_work(v);
        let (jm, km, jp, kp) = (w(&c.j_minus), w(&c.k_minus), w(&c.j_plus), w(&c.k_plus));
        let t = self.traces_to_work(t);
        let em = &self.prop_ell;
        let ep = &self.prop_big_l;
        let c1 = &jm + a.apply(em, &km) + &t.minus_left;
        let c2 = a.apply(ep, &jp) + &kp + &t.plus_right;
        let wm0 = a.apply(em, &jm) + &km + &t.minus_zero;
        let dwm0 = a.apply(&self.b_minus, &(a.apply(em, &jm) - &km)) + &t.minus_deriv_zero;
        let wp0 = &jp + a.apply(ep, &kp) + &t.plus_zero;
        let dwp0 = a.apply(&self.b_plus, &(&jp - a.apply(ep, &kp))) + &t.plus_deriv_zero;
        let jump = &wp0 - &wm0;
        let c3 = &dwm0 - &jump * Complex64::new(self.q_minus, 0.0);
        let c4 = &dwp0 - &jump * Complex64::new(self.q_plus, 0.0);
        [c1.norm(), c2.norm(), c3.norm(), c4.norm()]
    }

    /// `w = (S - lambda I)^{-1} f`.
    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        if !f.matches(&self.cfg) {
            return Err(domain("grid function shape does not match the configuration"));
        }
        let a = &self.alg;
        let gm: Vec<CVec> = f
            .minus
            .iter()
            .map(|v| a.to_work(v) * Complex64::new(1.0 / self.cfg.d_minus, 0.0))
            .collect();
        let gp: Vec<CVec> = f
            .plus
            .iter()
            .map(|v| a.to_work(v) * Complex64::new(1.0 / self.cfg.d_plus, 0.0))
            .collect();
        let (wm, wp) = self.apply_work(&gm, &gp);
        let mut out = f.clone();
        out.minus = wm.iter().map(|v| a.from_work(v)).collect();
        out.plus = wp.iter().map(|v| a.from_work(v)).collect();
        Ok(out)
    }

    /// Resolvent on working-coordinate data already divided by `d`.
    pub fn apply_work(&self, gm: &[CVec], gp: &[CVec]) -> (Vec<CVec>, Vec<CVec>) {
        let a = &self.alg;
        let cm = self.convolve_work(gm, Side::Minus);
        let cp = self.convolve_work(gp, Side::Plus);
        let t = Self::traces(&cm, &cp);
        let (pi1, pi2) = self.boundary_data_work(&t);
        let c = self.solve_boundary_coefficients_work(&pi1, &pi2, &t.minus_left, &t.plus_right);

        // Minus side, x_i = -ell + i h, N = nodes - 1:
        //   e^{-x_i B} = S^{N-i},  e^{(x_i + 2 ell) B} = S^{N+i},  e^{(x_i + ell) B} = S^i
        let n = gm.len() - 1;
        let powers_k = power_sequence(a, &self.step_minus, &c.k_minus, 2 * n);
        let powers_v = power_sequence(a, &self.step_minus, &t.minus_left, n);
        let wm = (0..=n)
            .map(|i| &powers_k[n - i] - &powers_k[n + i] - &powers_v[i] + &cm.v[i])
            .collect();

        // Plus side, x_i = i h, M = nodes - 1:
        //   e^{x_i B} = S^i,  e^{(2L - x_i) B} = S^{2M-i},  e^{(L - x_i) B} = S^{M-i}
        let m = gp.len() - 1;
        let powers_j = power_sequence(a, &self.step_plus, &c.j_plus, 2 * m);
        let powers_r = power_sequence(a, &self.step_plus, &t.plus_right, m);
        let wp = (0..=m)
            .map(|i| &powers_j[i] - &powers_j[2 * m - i] - &powers_r[m - i] + &cp.v[i])
            .collect();
        (wm, wp)
    }
}

/// `[v, S v, S^2 v, ..., S^count v]`.
fn power_sequence<A: CrossAlgebra>(a: &A, s: &A::Op, v: &CVec, count: usize) -> Vec<CVec> {
    let mut out = Vec::with_capacity(count + 1);
    out.push(v.clone());
    for k in 0..count {
        let next = a.apply(s, &out[k]);
        out.push(next);
    }
    out
}

/// `lambda` must avoid the closed negative real axis (the origin is allowed).
fn check_lambda(lambda: Complex64) -> Result<()> {
    if !lambda.re.is_finite() || !lambda.im.is_finite() {
        return Err(domain("lambda must be finite"));
    }
    if !in_resolvent_region(lambda, 0.0) {
        return Err(domain(format!(
            "lambda = {lambda} lies on the negative real axis"
        )));
    }
    Ok(())
}

/// Resolvent applied through the eigenbasis of the transversal operator.
pub fn apply_resolvent(cfg: &HabitatConfig, lambda: Complex64, f: &GridFunction) -> Result<GridFunction> {
    check_lambda(lambda)?;
    let op = cfg.transversal()?;
    ResolventWorkspace::assemble(SpectralPath::new(&op), cfg, lambda, 0.0)?.apply(f)
}

/// Resolvent applied with dense matrix functions.
pub fn apply_resolvent_dense(
    cfg: &HabitatConfig,
    lambda: Complex64,
    f: &GridFunction,
) -> Result<GridFunction> {
    check_lambda(lambda)?;
    let op = cfg.transversal()?;
    ResolventWorkspace::assemble(DensePath::new(&op), cfg, lambda, 0.0)?.apply(f)
}

/// Residual diagnostics of a candidate resolvent output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolventResiduals {
    /// Max over interior nodes of `|w'' + (A - rho - lambda/d) w - f/d|`.
    pub interior: f64,
    /// `|w_-(-ell)|` and `|w_+(L)|`, max of the two.
    pub dirichlet: f64,
    /// Max of `|d_- w_-'(0) - q (w_+(0) - w_-(0))|` with a 3-point one-sided derivative.
    pub interface_minus: f64,
    /// Same for the plus side.
    pub interface_plus: f64,
}

/// Measures the ODE, Dirichlet and interface residuals of `w` for data `f`.
pub fn resolvent_residuals(
    cfg: &HabitatConfig,
    lambda: Complex64,
    w: &GridFunction,
    f: &GridFunction,
) -> Result<ResolventResiduals> {
    let op = cfg.transversal()?;
    let a = op.complex_matrix();
    let mut interior = 0.0f64;
    let sides = [
        (&w.minus, &f.minus, cfg.minus_step(), cfg.d_minus, cfg.r_minus),
        (&w.plus, &f.plus, cfg.plus_step(), cfg.d_plus, cfg.r_plus),
    ];
    for (ws, fs, h, d, r) in sides {
        for i in 1..ws.len() - 1 {
            let second = (&ws[i - 1] - &ws[i] * Complex64::new(2.0, 0.0) + &ws[i + 1])
                * Complex64::new(1.0 / (h * h), 0.0);
            let res = second + &a * &ws[i]
                - &ws[i] * ((Complex64::new(r, 0.0) + lambda) / d)
                - &fs[i] * Complex64::new(1.0 / d, 0.0);
            interior = interior.max(res.camax());
        }
    }
    let nm = w.minus.len() - 1;
    let dirichlet = w.minus[0].camax().max(w.plus[w.plus.len() - 1].camax());
    let hm = cfg.minus_step();
    let hp = cfg.plus_step();
    let c = |x: f64| Complex64::new(x, 0.0);
    let dm = (&w.minus[nm] * c(3.0) - &w.minus[nm - 1] * c(4.0) + &w.minus[nm - 2]) * c(0.5 / hm);
    let dp = (-&w.plus[0] * c(3.0) + &w.plus[1] * c(4.0) - &w.plus[2]) * c(0.5 / hp);
    let jump = &w.plus[0] - &w.minus[nm];
    let interface_minus = (dm * c(cfg.d_minus) - &jump * c(cfg.q)).camax();
    let interface_plus = (dp * c(cfg.d_plus) - &jump * c(cfg.q)).camax();
    Ok(ResolventResiduals {
        interior,
        dirichlet,
        interface_minus,
        interface_plus,
    })
}
