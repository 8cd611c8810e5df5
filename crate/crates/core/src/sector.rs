//! Scalar complex-plane geometry: principal arguments, the argument and
//! modulus inequalities used to bound the determinant symbol, and the symbol
//! itself with its sampled lower bound over the sector.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};

/// Absolute slack granted to every strict inequality.
pub const INEQUALITY_SLACK: f64 = 1e-12;

/// Shrink factor used to place samples just inside an open sector boundary.
const OPEN_EDGE: f64 = 1.0 - 1e-9;

/// Principal argument in `(-pi, pi]`.
///
/// `atan2` returns `-pi` for a negative real with a negative-zero imaginary
/// part; that value is folded onto `pi`.
pub fn principal_arg(z: Complex64) -> Result<f64> {
    if z.re == 0.0 && z.im == 0.0 {
        return Err(domain("argument of zero is undefined"));
    }
    let a = z.im.atan2(z.re);
    Ok(if a <= -PI { PI } else { a })
}

fn arg_unchecked(z: Complex64) -> f64 {
    let a = z.im.atan2(z.re);
    if a <= -PI {
        PI
    } else {
        a
    }
}

/// Half-angle form `2 atan(Im z / (Re z + |z|))`, valid off the negative real axis.
pub fn half_angle_arg(z: Complex64) -> f64 {
    2.0 * (z.im / (z.re + z.norm())).atan()
}

/// `true` when `z` is nonzero and `|arg z| < angle`.
pub fn in_open_sector(z: Complex64, angle: f64) -> bool {
    (z.re != 0.0 || z.im != 0.0) && arg_unchecked(z).abs() < angle
}

/// Membership in the resolvent region: the open sector of half-angle
/// `pi - epsilon0` together with the origin.
pub fn in_resolvent_region(lambda: Complex64, epsilon0: f64) -> bool {
    (lambda.re == 0.0 && lambda.im == 0.0) || in_open_sector(lambda, PI - epsilon0)
}

/// Smallest gap in the chain `0 < |arg(z+c)| < |arg z| < pi` (or the
/// mirrored chain when `c < 0`). Positive means the chain holds strictly.
pub fn shift_monotonicity_margin(z: Complex64, c: f64) -> Result<f64> {
    if z.im == 0.0 {
        return Err(domain("z must not be real"));
    }
    if c == 0.0 {
        return Err(domain("shift c must be nonzero"));
    }
    let w = z + c;
    if w.norm() == 0.0 {
        return Err(domain("z + c must be nonzero"));
    }
    let a = arg_unchecked(z).abs();
    let b = arg_unchecked(w).abs();
    let (small, large) = if c > 0.0 { (b, a) } else { (a, b) };
    Ok(small.min(large - small).min(PI - large))
}

/// Shift monotonicity of the argument under a real translation.
pub fn check_shift_monotonicity(z: Complex64, c: f64) -> Result<bool> {
    Ok(shift_monotonicity_margin(z, c)? > -INEQUALITY_SLACK)
}

/// Outcome of the argument sandwich check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SandwichOutcome {
    /// Hypotheses hold and so does the sandwich; carries the smallest gap.
    Holds(f64),
    /// Hypotheses hold but the sandwich fails; carries the (negative) gap.
    Violated(f64),
    /// The ordering hypothesis on `arg z1`, `arg z2` is not satisfied.
    HypothesisNotMet,
}

/// `true` when `(z1, z2)` satisfy the ordering hypothesis of the sandwich.
pub fn sandwich_hypothesis(z1: Complex64, z2: Complex64) -> bool {
    let a1 = arg_unchecked(z1);
    let a2 = arg_unchecked(z2);
    let upper_half = (0.0..=PI).contains(&a2) && arg_unchecked(-z2) <= a1 && a1 <= a2;
    let lower_half = a2 <= 0.0 && a1 <= a2;
    upper_half || lower_half
}

/// Checks `arg z1 <= arg(z1+z2) <= arg z2` under its ordering hypothesis.
pub fn check_sum_arg_sandwich(z1: Complex64, z2: Complex64) -> Result<SandwichOutcome> {
    if z1.norm() == 0.0 || z2.norm() == 0.0 {
        return Err(domain("z1 and z2 must be nonzero"));
    }
    let s = z1 + z2;
    if s.norm() == 0.0 {
        return Err(domain("z1 + z2 must be nonzero"));
    }
    if !sandwich_hypothesis(z1, z2) {
        return Ok(SandwichOutcome::HypothesisNotMet);
    }
    let a1 = arg_unchecked(z1);
    let a2 = arg_unchecked(z2);
    let a = arg_unchecked(s);
    let gap = (a - a1).min(a2 - a);
    Ok(if gap > -INEQUALITY_SLACK {
        SandwichOutcome::Holds(gap)
    } else {
        SandwichOutcome::Violated(gap)
    })
}

/// Returns `(|z1+z2|, (|z1|+|z2|) |cos((arg z1 - arg z2)/2)|)`.
pub fn sum_modulus_lower_bound(z1: Complex64, z2: Complex64) -> Result<(f64, f64)> {
    let a1 = principal_arg(z1)?;
    let a2 = principal_arg(z2)?;
    let lhs = (z1 + z2).norm();
    let rhs = (z1.norm() + z2.norm()) * ((a1 - a2) / 2.0).cos().abs();
    Ok((lhs, rhs))
}

/// `1 - e^{-z}` without cancellation for small `|z|`.
pub fn one_minus_exp_neg(z: Complex64) -> Complex64 {
    let (s, c) = z.im.sin_cos();
    let half = (z.im / 2.0).sin();
    let em1 = (-z.re).exp_m1();
    Complex64::new(-em1 * c + 2.0 * half * half, (-z.re).exp() * s)
}

/// `1 + e^{-z}`.
pub fn one_plus_exp_neg(z: Complex64) -> Complex64 {
    Complex64::new(1.0, 0.0) + (-z).exp()
}

/// `arg(1 - e^{-z}) - arg(1 + e^{-z})` as a difference of principal arguments.
pub fn bracket_arg_gap(z: Complex64) -> f64 {
    arg_unchecked(one_minus_exp_neg(z)) - arg_unchecked(one_plus_exp_neg(z))
}

/// The bracket quantities for `z` in the open sector of half-angle `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpBracket {
    pub arg_gap: f64,
    pub one_plus_abs: f64,
    pub one_plus_floor: f64,
    pub one_minus_abs: f64,
    pub one_minus_lo: f64,
    pub one_minus_hi: f64,
    pub alpha: f64,
}

impl ExpBracket {
    /// Smallest gap across the four inequalities; positive means all hold.
    pub fn margin(&self) -> f64 {
        (self.alpha - self.arg_gap.abs())
            .min(self.one_plus_abs - self.one_plus_floor)
            .min(self.one_minus_abs - self.one_minus_lo)
            .min(self.one_minus_hi - self.one_minus_abs)
    }

    pub fn holds(&self) -> bool {
        self.margin() > -INEQUALITY_SLACK
    }
}

/// Bounds on `1 +- e^{-z}` for `z` in the open sector of half-angle `alpha`.
pub fn exp_bracket_bounds(z: Complex64, alpha: f64) -> Result<ExpBracket> {
    if !(alpha > 0.0 && alpha < FRAC_PI_2) {
        return Err(domain(format!("alpha = {alpha} must lie in (0, pi/2)")));
    }
    if !in_open_sector(z, alpha) {
        return Err(domain(format!(
            "z = {z} lies outside the sector of half-angle {alpha}"
        )));
    }
    let r = z.norm();
    let ca = alpha.cos();
    Ok(ExpBracket {
        arg_gap: bracket_arg_gap(z),
        one_plus_abs: one_plus_exp_neg(z).norm(),
        one_plus_floor: 1.0 - (-PI / (2.0 * alpha.tan())).exp(),
        one_minus_abs: one_minus_exp_neg(z).norm(),
        one_minus_lo: r * ca / (1.0 + r * ca),
        one_minus_hi: 2.0 * r / (1.0 + r * ca),
        alpha,
    })
}

/// Which angular window a refined-gap sample falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapCase {
    /// `-beta <= arg z < alpha - beta`.
    Upper,
    /// `-alpha + beta < arg z <= beta`.
    Lower,
}

fn refined_gap_cases(a: f64, alpha: f64, beta: f64) -> (bool, bool) {
    (-beta <= a && a < alpha - beta, -alpha + beta < a && a <= beta)
}

/// Returns `arg(1 - e^{-z}) - arg(1 + e^{-z})` after validating the
/// hypotheses of the refined gap bound.
pub fn refined_arg_gap(z: Complex64, alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= FRAC_PI_2) {
        return Err(domain(format!("alpha = {alpha} must lie in (0, pi/2]")));
    }
    if !(0.0..=alpha / 2.0).contains(&beta) {
        return Err(domain(format!("beta = {beta} must lie in [0, alpha/2]")));
    }
    let a = principal_arg(z)?;
    if z.im.abs() > PI {
        return Err(domain(format!("|Im z| = {} exceeds pi", z.im.abs())));
    }
    let (upper, lower) = refined_gap_cases(a, alpha, beta);
    if !upper && !lower {
        return Err(domain(format!("arg z = {a} outside both angular windows")));
    }
    Ok(bracket_arg_gap(z))
}

/// Smallest gap to the refined bounds of every window containing `arg z`.
pub fn refined_gap_margin(z: Complex64, alpha: f64, beta: f64) -> Result<f64> {
    let gap = refined_arg_gap(z, alpha, beta)?;
    let a = arg_unchecked(z);
    let (upper, lower) = refined_gap_cases(a, alpha, beta);
    let mut m = f64::INFINITY;
    if upper {
        m = m.min(gap + beta).min(alpha - beta - gap);
    }
    if lower {
        m = m.min(gap - (-alpha + beta)).min(beta - gap);
    }
    Ok(m)
}

/// Physical constants and the spectral parameter entering the symbol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolParams {
    pub ell: f64,
    pub big_l: f64,
    pub d_minus: f64,
    pub d_plus: f64,
    pub r_minus: f64,
    pub r_plus: f64,
    pub q: f64,
    pub lambda: Complex64,
}

impl SymbolParams {
    pub fn lambda_minus(&self) -> Complex64 {
        self.lambda / self.d_minus
    }
    pub fn lambda_plus(&self) -> Complex64 {
        self.lambda / self.d_plus
    }
    pub fn rho_minus(&self) -> f64 {
        self.r_minus / self.d_minus
    }
    pub fn rho_plus(&self) -> f64 {
        self.r_plus / self.d_plus
    }
    pub fn q_minus(&self) -> f64 {
        self.q / self.d_minus
    }
    pub fn q_plus(&self) -> f64 {
        self.q / self.d_plus
    }

    pub fn with_lambda(&self, lambda: Complex64) -> Self {
        Self { lambda, ..*self }
    }

    /// The two fractional terms of the symbol, plus side first.
    pub fn symbol_terms(&self, z: Complex64) -> (Complex64, Complex64) {
        let tp = tanh_over_root(z + self.lambda_plus() + self.rho_plus(), self.big_l);
        let tm = tanh_over_root(z + self.lambda_minus() + self.rho_minus(), self.ell);
        (tp * self.q_plus(), tm * self.q_minus())
    }
}

/// `(1 - e^{-2 len s}) / (s (1 + e^{-2 len s}))` with `s` the principal root of `w`.
pub(crate) fn tanh_over_root(w: Complex64, len: f64) -> Complex64 {
    let s = w.sqrt();
    let x = s * (2.0 * len);
    one_minus_exp_neg(x) / (s * one_plus_exp_neg(x))
}

/// Symbol without domain checks; `z` is expected in the right sector.
pub fn f_symbol(z: Complex64, p: &SymbolParams) -> Complex64 {
    let (a, b) = p.symbol_terms(z);
    Complex64::new(1.0, 0.0) + a + b
}

/// Determinant symbol for `z` in the open sector of half-angle `epsilon0`.
pub fn eval_f(z: Complex64, p: &SymbolParams, epsilon0: f64) -> Result<Complex64> {
    if !in_open_sector(z, epsilon0) {
        return Err(domain(format!(
            "z = {z} lies outside the sector of half-angle {epsilon0}"
        )));
    }
    if !in_resolvent_region(p.lambda, epsilon0) {
        return Err(domain(format!(
            "lambda = {} lies outside the resolvent sector",
            p.lambda
        )));
    }
    Ok(f_symbol(z, p))
}

/// Sampling description of the sector and the declared constant `big_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectorSpec {
    pub epsilon0: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub n_radial: usize,
    pub n_angular: usize,
    #[serde(alias = "big_R")]
    pub big_r: f64,
}

impl SectorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon0 > 0.0 && self.epsilon0 < FRAC_PI_2) {
            return Err(config("sector.epsilon0", "must lie in (0, pi/2)"));
        }
        if !(self.radius_min > 0.0) {
            return Err(config("sector.radius_min", "must be positive"));
        }
        if !(self.radius_max > self.radius_min) {
            return Err(config("sector.radius_max", "must exceed radius_min"));
        }
        if self.n_radial < 2 {
            return Err(config("sector.n_radial", "must be at least 2"));
        }
        if self.n_angular < 2 {
            return Err(config("sector.n_angular", "must be at least 2"));
        }
        if !(self.big_r > 0.0) {
            return Err(config("sector.big_r", "must be positive"));
        }
        Ok(())
    }

    /// Largest admissible `epsilon0` for the declared `big_r` and the two lengths.
    pub fn admissible_epsilon0(&self, ell: f64, big_l: f64) -> f64 {
        admissible_epsilon0(self.big_r, ell, big_l)
    }

    /// Validates the sampling and checks `epsilon0` against the admissibility bound.
    pub fn validate_against(&self, ell: f64, big_l: f64) -> Result<()> {
        self.validate()?;
        let bound = self.admissible_epsilon0(ell, big_l);
        if self.epsilon0 > bound {
            return Err(config(
                "sector.epsilon0",
                format!(
                    "epsilon0 = {} exceeds arctan(pi^2/(2 big_r) min(1/L^2, 1/ell^2)) = {bound}",
                    self.epsilon0
                ),
            ));
        }
        Ok(())
    }

    /// Log-radial times uniform-angular samples of the open z-sector; the
    /// extreme angles sit just inside the boundary rays.
    pub fn z_samples(&self) -> Vec<Complex64> {
        let radii = log_space(self.radius_min, self.radius_max, self.n_radial);
        let edge = self.epsilon0 * OPEN_EDGE;
        let angles = lin_space(-edge, edge, self.n_angular);
        let mut out = Vec::with_capacity(radii.len() * angles.len());
        for &r in &radii {
            for &a in &angles {
                out.push(Complex64::from_polar(r, a));
            }
        }
        out
    }

    /// The origin plus log-radial times uniform-angular samples of the
    /// resolvent sector, boundary rays included.
    pub fn lambda_samples(&self, n_radial: usize, n_angular: usize) -> Vec<Complex64> {
        let radii = log_space(self.radius_min, self.radius_max, n_radial);
        let edge = (PI - self.epsilon0) * OPEN_EDGE;
        let angles = lin_space(-edge, edge, n_angular);
        let mut out = vec![Complex64::new(0.0, 0.0)];
        for &r in &radii {
            for &a in &angles {
                out.push(Complex64::from_polar(r, a));
            }
        }
        out
    }
}

/// `arctan(pi^2 / (2 big_r) * min(1/L^2, 1/ell^2))`.
pub fn admissible_epsilon0(big_r: f64, ell: f64, big_l: f64) -> f64 {
    let m = (1.0 / (big_l * big_l)).min(1.0 / (ell * ell));
    (PI * PI / (2.0 * big_r) * m).atan()
}

pub(crate) fn log_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

pub(crate) fn lin_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Result of the sampled symbol floor certification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FloorCertificate {
    pub min_abs_f: f64,
    pub floor: f64,
    pub pass: bool,
    pub argmin_z: Complex64,
    pub argmin_lambda: Complex64,
    /// `true` when the minimizing `z` sits on an extreme sampled angle.
    pub argmin_on_boundary_ray: bool,
    pub samples: usize,
}

/// Minimum of `|f|` over every `(z, lambda)` pair, compared with `sin(epsilon0/2)`.
pub fn certify_f_floor(spec: &SectorSpec, p_grid: &[SymbolParams]) -> Result<FloorCertificate> {
    spec.validate()?;
    let zs = spec.z_samples();
    if zs.is_empty() || p_grid.is_empty() {
        return Err(domain("empty sample set"));
    }
    for p in p_grid {
        if !in_resolvent_region(p.lambda, spec.epsilon0) {
            return Err(domain(format!(
                "lambda = {} outside the resolvent sector",
                p.lambda
            )));
        }
    }
    let best = p_grid
        .par_iter()
        .map(|p| {
            let mut best = (f64::INFINITY, Complex64::new(0.0, 0.0));
            for &z in &zs {
                let v = f_symbol(z, p).norm();
                if v < best.0 {
                    best = (v, z);
                }
            }
            (best.0, best.1, p.lambda)
        })
        .reduce(
            || (f64::INFINITY, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)),
            |a, b| if b.0 < a.0 { b } else { a },
        );
    let floor = (spec.epsilon0 / 2.0).sin();
    let edge = spec.epsilon0 * OPEN_EDGE;
    Ok(FloorCertificate {
        min_abs_f: best.0,
        floor,
        pass: best.0 > floor,
        argmin_z: best.1,
        argmin_lambda: best.2,
        argmin_on_boundary_ray: (arg_unchecked(best.1).abs() - edge).abs() < 1e-9,
        samples: zs.len() * p_grid.len(),
    })
}

/// Empirical radius beyond which both fractional terms of the symbol stay
/// below `(1 - sin(epsilon0/2)) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalRadius {
    /// Radius obtained with `lambda = 0`.
    pub at_origin: f64,
    /// Largest radius over the sampled spectral parameters.
    pub over_samples: f64,
    /// Admissible `epsilon0` implied by `over_samples`.
    pub admissible_epsilon0: f64,
    /// Set when the implied admissible `epsilon0` falls below `1e-3`.
    pub flagged: bool,
}

/// Scans `|z|` on a log grid (`1e-3` to `1e12`, 64 points per decade) along
/// `n_angular` rays and returns the last radius where a term is still large.
pub fn empirical_big_r(spec: &SectorSpec, p_grid: &[SymbolParams], n_angular: usize) -> EmpiricalRadius {
    let threshold = (1.0 - (spec.epsilon0 / 2.0).sin()) / 2.0;
    let radii = log_space(1e-3, 1e12, 15 * 64 + 1);
    let edge = spec.epsilon0 * OPEN_EDGE;
    let angles = lin_space(-edge, edge, n_angular.max(2));
    let scan = |p: &SymbolParams| -> f64 {
        let mut last = 0.0f64;
        for &a in &angles {
            for (i, &r) in radii.iter().enumerate() {
                let (t1, t2) = p.symbol_terms(Complex64::from_polar(r, a));
                if t1.norm() >= threshold || t2.norm() >= threshold {
                    last = last.max(radii[(i + 1).min(radii.len() - 1)]);
                }
            }
        }
        last
    };
    let at_origin = p_grid
        .first()
        .map(|p| scan(&p.with_lambda(Complex64::new(0.0, 0.0))))
        .unwrap_or(0.0);
    let over = p_grid.par_iter().map(scan).reduce(|| at_origin, f64::max);
    let (ell, big_l) = p_grid.first().map(|p| (p.ell, p.big_l)).unwrap_or((1.0, 1.0));
    let eps = admissible_epsilon0(over.max(f64::MIN_POSITIVE), ell, big_l);
    EmpiricalRadius {
        at_origin,
        over_samples: over,
        admissible_epsilon0: eps,
        flagged: eps < 1e-3,
    }
}

/// Aggregate of one randomized inequality sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropositionTally {
    pub name: String,
    pub samples: usize,
    pub violations: usize,
    pub min_slack: f64,
}

impl PropositionTally {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            samples: 0,
            violations: 0,
            min_slack: f64::INFINITY,
        }
    }

    fn record(&mut self, margin: f64) {
        self.samples += 1;
        if margin <= -INEQUALITY_SLACK {
            self.violations += 1;
        }
        self.min_slack = self.min_slack.min(margin);
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn random_nonzero(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::from_polar(log_uniform(rng, 1e-3, 1e3), rng.gen_range(-PI..PI))
}

/// Runs the five randomized inequality sweeps with `samples` valid draws each.
pub fn run_property_suite(samples: usize, seed: u64) -> Vec<PropositionTally> {
    let tasks: Vec<(usize, &str)> = vec![
        (0, "shift_monotonicity"),
        (1, "sum_arg_sandwich"),
        (2, "sum_modulus_lower_bound"),
        (3, "exp_bracket_bounds"),
        (4, "refined_arg_gap"),
    ];
    tasks
        .into_par_iter()
        .map(|(k, name)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64 * 0x9E37_79B9));
            let mut t = PropositionTally::new(name);
            while t.samples < samples {
                let margin = match k {
                    0 => sample_shift(&mut rng),
                    1 => sample_sandwich(&mut rng),
                    2 => sample_modulus(&mut rng),
                    3 => sample_bracket(&mut rng),
                    _ => sample_refined(&mut rng),
                };
                if let Some(m) = margin {
                    t.record(m);
                }
            }
            t
        })
        .collect()
}

fn sample_shift(rng: &mut ChaCha8Rng) -> Option<f64> {
    let z = random_nonzero(rng);
    let c = log_uniform(rng, 1e-3, 1e3) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    shift_monotonicity_margin(z, c).ok()
}

fn sample_sandwich(rng: &mut ChaCha8Rng) -> Option<f64> {
    // The negative real axis is a corner case of the hypothesis; hit it on purpose.
    let a2 = if rng.gen_bool(0.01) {
        PI
    } else {
        rng.gen_range(-PI..PI)
    };
    let lo = if a2 >= 0.0 { a2 - PI } else { -PI };
    let a1 = if a2 > lo { rng.gen_range(lo..=a2) } else { a2 };
    let z1 = Complex64::from_polar(log_uniform(rng, 1e-3, 1e3), a1);
    let z2 = Complex64::from_polar(log_uniform(rng, 1e-3, 1e3), a2);
    match check_sum_arg_sandwich(z1, z2) {
        Ok(SandwichOutcome::Holds(g)) | Ok(SandwichOutcome::Violated(g)) => Some(g),
        _ => None,
    }
}

fn sample_modulus(rng: &mut ChaCha8Rng) -> Option<f64> {
    let z1 = random_nonzero(rng);
    let z2 = random_nonzero(rng);
    let (lhs, rhs) = sum_modulus_lower_bound(z1, z2).ok()?;
    Some(lhs - rhs)
}

fn sample_bracket(rng: &mut ChaCha8Rng) -> Option<f64> {
    let alpha = rng.gen_range(1e-3..FRAC_PI_2 - 1e-3);
    let z = Complex64::from_polar(log_uniform(rng, 1e-4, 1e4), rng.gen_range(-alpha..alpha));
    exp_bracket_bounds(z, alpha).ok().map(|b| b.margin())
}

fn sample_refined(rng: &mut ChaCha8Rng) -> Option<f64> {
    let alpha = rng.gen_range(1e-3..=FRAC_PI_2);
    let beta = rng.gen_range(0.0..=alpha / 2.0);
    let a = if rng.gen_bool(0.5) {
        rng.gen_range(-beta..alpha - beta)
    } else {
        -rng.gen_range(-beta..alpha - beta)
    };
    let s = a.sin().abs();
    let hi = if s > 0.0 { (PI / s).min(1e4) } else { 1e4 };
    if hi <= 1e-4 {
        return None;
    }
    let z = Complex64::from_polar(log_uniform(rng, 1e-4, hi), a);
    refined_gap_margin(z, alpha, beta).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn unit_params(lambda: Complex64) -> SymbolParams {
        SymbolParams {
            ell: 1.0,
            big_l: 1.0,
            d_minus: 1.0,
            d_plus: 1.0,
            r_minus: 1.0,
            r_plus: 1.0,
            q: 1.0,
            lambda,
        }
    }

    #[test]
    fn principal_arg_examples() {
        assert_eq!(principal_arg(c(1.0, 0.0)).unwrap(), 0.0);
        assert_eq!(principal_arg(c(-1.0, 0.0)).unwrap(), PI);
        assert_eq!(principal_arg(c(-1.0, -0.0)).unwrap(), PI);
        let a = principal_arg(c(1.0, 1.0)).unwrap();
        assert!((a - PI / 4.0).abs() < 1e-15);
        assert!((2.0 * (1.0 / (1.0 + 2f64.sqrt())).atan() - PI / 4.0).abs() < 1e-15);
        assert!(principal_arg(c(0.0, 0.0)).is_err());
    }

    #[test]
    fn half_angle_form_matches_off_axis() {
        for k in 1..50 {
            let z = Complex64::from_polar(0.3 * k as f64, -3.0 + 0.121 * k as f64);
            assert!((half_angle_arg(z) - principal_arg(z).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn shift_examples() {
        assert!(check_shift_monotonicity(c(0.0, 1.0), 1.0).unwrap());
        assert!(check_shift_monotonicity(c(-1.0, 1.0), 0.5).unwrap());
        assert!(check_shift_monotonicity(c(-1.0, 1.0), -0.5).unwrap());
        assert!(check_shift_monotonicity(c(1.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn sandwich_examples() {
        assert!(matches!(
            check_sum_arg_sandwich(c(1.0, 0.0), c(0.0, 1.0)).unwrap(),
            SandwichOutcome::Holds(_)
        ));
        match check_sum_arg_sandwich(c(-1.0, 0.0), c(-1.0, 0.0)).unwrap() {
            SandwichOutcome::Holds(g) => assert_eq!(g, 0.0),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            check_sum_arg_sandwich(c(0.0, 1.0), c(1.0, 0.0)).unwrap(),
            SandwichOutcome::HypothesisNotMet
        );
        assert!(check_sum_arg_sandwich(c(1.0, 1.0), c(-1.0, -1.0)).is_err());
    }

    #[test]
    fn modulus_examples() {
        let (l, r) = sum_modulus_lower_bound(c(1.0, 0.0), c(1.0, 0.0)).unwrap();
        assert!((l - 2.0).abs() < 1e-15 && (r - 2.0).abs() < 1e-15);
        let (l, r) = sum_modulus_lower_bound(c(1.0, 0.0), c(0.0, 1.0)).unwrap();
        assert!((l - 2f64.sqrt()).abs() < 1e-15 && (r - 2f64.sqrt()).abs() < 1e-15);
        let (l, r) = sum_modulus_lower_bound(c(2.0, 0.0), c(0.0, 1.0)).unwrap();
        assert!((l - 5f64.sqrt()).abs() < 1e-15);
        assert!((r - 3.0 * (PI / 4.0).cos()).abs() < 1e-15);
        assert!((r - 2.1213).abs() < 1e-4);
    }

    #[test]
    fn bracket_examples() {
        let b = exp_bracket_bounds(c(1.0, 0.0), PI / 4.0).unwrap();
        assert!((b.one_minus_abs - 0.6321).abs() < 1e-4);
        assert!((b.one_minus_lo - 0.4142).abs() < 1e-4);
        assert!((b.one_minus_hi - 1.1716).abs() < 1e-4);
        assert_eq!(b.arg_gap, 0.0);
        assert!(b.holds());
        assert!(exp_bracket_bounds(c(0.0, 1.0), PI / 4.0).is_err());
    }

    #[test]
    fn one_minus_exp_is_accurate_near_zero() {
        let z = c(1e-9, 2e-9);
        let direct = z - z * z / 2.0;
        assert!((one_minus_exp_neg(z) - direct).norm() < 1e-24);
    }

    #[test]
    fn refined_gap_examples() {
        assert_eq!(refined_arg_gap(c(1.0, 0.0), 0.5, 0.1).unwrap(), 0.0);
        let beta = PI / 8.0;
        let z = Complex64::from_polar(0.5, -beta);
        let g = refined_arg_gap(z, FRAC_PI_2, beta).unwrap();
        assert!(g >= -beta);
        assert!(refined_arg_gap(c(1.0, 4.0), FRAC_PI_2, 0.1).is_err());
    }

    #[test]
    fn refined_gap_closed_form() {
        // atan2(2 r sin y, 1 - r^2) with r = e^{-Re z}
        for k in 0..40 {
            let z = c(0.05 + 0.1 * k as f64, -3.0 + 0.15 * k as f64);
            let r = (-z.re).exp();
            let closed = (2.0 * r * z.im.sin()).atan2(1.0 - r * r);
            assert!((bracket_arg_gap(z) - closed).abs() < 1e-13);
        }
    }

    #[test]
    fn symbol_examples() {
        let p = unit_params(c(0.0, 0.0));
        let f = eval_f(c(1.0, 0.0), &p, 0.3).unwrap();
        let e = (-2.0 * 2f64.sqrt()).exp();
        let expected = 1.0 + 2.0 * (1.0 - e) / (2f64.sqrt() * (1.0 + e));
        assert!((f.re - expected).abs() < 1e-14 && f.im.abs() < 1e-15);
        assert!((f.re - 2.2565).abs() < 2e-4);
        let far = eval_f(c(1e6, 0.0), &p, 0.3).unwrap();
        assert!((far - 1.0).norm() <= 3e-3);
        assert!(eval_f(c(0.0, 1.0), &p, 0.3).is_err());
    }

    #[test]
    fn symbol_real_positive_axis() {
        let p = unit_params(c(0.0, 0.0));
        for z in log_space(1e-3, 1e6, 200) {
            let f = eval_f(c(z, 0.0), &p, 0.3).unwrap();
            assert!(f.im == 0.0 && f.re > 1.0);
        }
    }

    #[test]
    fn symbol_tail_decays_like_inverse_root() {
        let spec_eps: f64 = 0.3;
        for lam in [c(0.0, 0.0), c(5.0, 3.0), Complex64::from_polar(40.0, PI - 0.31)] {
            let p = unit_params(lam);
            for a in [-0.29, 0.0, 0.29] {
                let v: Vec<f64> = [1e2, 1e4, 1e6]
                    .iter()
                    .map(|&r| {
                        let z = Complex64::from_polar(r, a * spec_eps / 0.3);
                        (f_symbol(z, &p) - 1.0).norm() * r.sqrt()
                    })
                    .collect();
                for w in v.windows(2) {
                    assert!(w[1] < 2.0 * w[0], "{v:?}");
                }
            }
        }
    }

    #[test]
    fn floor_on_positive_axis() {
        let spec = SectorSpec {
            epsilon0: 0.3,
            radius_min: 1e-3,
            radius_max: 1e6,
            n_radial: 200,
            n_angular: 2,
            big_r: 5.0,
        };
        let p = unit_params(c(0.0, 0.0));
        let cert = certify_f_floor(&spec, &[p]).unwrap();
        assert!(cert.pass && cert.min_abs_f > 1.0);
        assert!(certify_f_floor(&spec, &[]).is_err());
    }

    #[test]
    fn admissibility_bound() {
        let mut spec = SectorSpec {
            epsilon0: 0.3,
            radius_min: 1e-3,
            radius_max: 1e6,
            n_radial: 10,
            n_angular: 10,
            big_r: 5.0,
        };
        assert!(spec.validate_against(1.0, 1.5).is_ok());
        spec.big_r = 50.0;
        assert!(spec.validate_against(1.0, 1.5).is_err());
    }
}
