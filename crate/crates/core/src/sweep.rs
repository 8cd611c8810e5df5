//! Resolvent-norm sweeps over the sector, per-map norm scans of the
//! convolution and boundary operators, and semigroup evolution by
//! quadrature on a hyperbolic contour.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{CrossAlgebra, SpectralPath};
use crate::error::{config, domain, Error, Result};
use crate::operator::CVec;
use crate::resolvent::{GridFunction, HabitatConfig, ResolventWorkspace, Side};
use crate::sector::{in_resolvent_region, log_space};

pub type SpectralWorkspace = ResolventWorkspace<SpectralPath>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    P1,
    P2,
    Pinf,
}

impl NormKind {
    pub fn name(&self) -> &'static str {
        match self {
            NormKind::P1 => "p1",
            NormKind::P2 => "p2",
            NormKind::Pinf => "pinf",
        }
    }

    pub fn of(&self, g: &GridFunction) -> f64 {
        match self {
            NormKind::P1 => g.p1_norm(),
            NormKind::P2 => g.p2_norm(),
            NormKind::Pinf => g.pinf_norm(),
        }
    }
}

/// One estimate of `||(S_h - lambda I)^{-1}||`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRecord {
    pub lambda: Complex64,
    pub norm_estimate: f64,
    /// `|lambda| * norm_estimate`
    pub scaled: f64,
    pub norm_kind: NormKind,
    /// Set for the random-sign estimates, which only bound the norm from below.
    pub lower_bound: bool,
    pub iterations: usize,
    pub wall_time_ms: f64,
}

/// Power-iteration budget and tolerance for the `p2` estimate.
pub const POWER_MAX_ITER: usize = 500;
pub const POWER_TOL: f64 = 1e-4;
/// Random sign vectors used for the `p1` and `pinf` lower bounds.
pub const SIGN_SAMPLES: usize = 64;

fn random_grid(cfg: &HabitatConfig, rng: &mut ChaCha8Rng) -> GridFunction {
    GridFunction::from_fn(cfg, |_, _, _| {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

/// Norm estimate at one `lambda` using cached workspaces for `lambda` and
/// `conj(lambda)`.
pub fn resolvent_norm_with(
    ws: &SpectralWorkspace,
    ws_adj: &SpectralWorkspace,
    kind: NormKind,
    seed: u64,
) -> Result<SweepRecord> {
    let start = Instant::now();
    let cfg = ws.cfg;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (estimate, iterations, lower_bound) = match kind {
        NormKind::P2 => {
            // R(conj lambda) is the adjoint of R(lambda) in the weighted product
            let mut x = random_grid(&cfg, &mut rng);
            x = x.scale(Complex64::new(1.0 / x.p2_norm(), 0.0));
            let mut last = 0.0;
            let mut change = f64::INFINITY;
            let mut done = None;
            for it in 1..=POWER_MAX_ITER {
                let y = ws.apply(&x)?;
                let ratio = y.p2_norm();
                change = (ratio - last).abs() / ratio.max(f64::MIN_POSITIVE);
                if change < POWER_TOL && it > 1 {
                    done = Some((ratio, it));
                    break;
                }
                last = ratio;
                let z = ws_adj.apply(&y)?;
                let zn = z.p2_norm();
                if zn == 0.0 {
                    done = Some((0.0, it));
                    break;
                }
                x = z.scale(Complex64::new(1.0 / zn, 0.0));
            }
            match done {
                Some((r, it)) => (r, it, false),
                None => {
                    return Err(Error::NoConvergence {
                        iterations: POWER_MAX_ITER,
                        last_change: change,
                    })
                }
            }
        }
        NormKind::P1 | NormKind::Pinf => {
            let mut best = 0.0f64;
            for _ in 0..SIGN_SAMPLES {
                let x = GridFunction::from_fn(&cfg, |_, _, _| {
                    Complex64::new(if rng.gen::<bool>() { 1.0 } else { -1.0 }, 0.0)
                });
                let y = ws.apply(&x)?;
                best = best.max(kind.of(&y) / kind.of(&x));
            }
            (best, SIGN_SAMPLES, true)
        }
    };
    Ok(SweepRecord {
        lambda: ws.lambda,
        norm_estimate: estimate,
        scaled: ws.lambda.norm() * estimate,
        norm_kind: kind,
        lower_bound,
        iterations,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

pub fn spectral_workspace(
    cfg: &HabitatConfig,
    lambda: Complex64,
    epsilon0: f64,
) -> Result<SpectralWorkspace> {
    let op = cfg.transversal()?;
    ResolventWorkspace::assemble(SpectralPath::new(&op), cfg, lambda, epsilon0)
}

pub fn resolvent_norm(
    cfg: &HabitatConfig,
    lambda: Complex64,
    kind: NormKind,
    epsilon0: f64,
    seed: u64,
) -> Result<SweepRecord> {
    let ws = spectral_workspace(cfg, lambda, epsilon0)?;
    let ws_adj = spectral_workspace(cfg, lambda.conj(), epsilon0)?;
    resolvent_norm_with(&ws, &ws_adj, kind, seed)
}

/// Margin kept between the outer sweep rays and the sector boundary.
pub const RAY_MARGIN: f64 = 0.01;

/// `lambda = 0` followed by rays `{0, +(pi - eps0 - 0.01), -(pi - eps0 - 0.01)}`,
/// each with 13 radii `10^{k/2}`, `k = 0..12`.
pub fn sweep_lambdas(epsilon0: f64) -> Vec<Complex64> {
    let theta = PI - epsilon0 - RAY_MARGIN;
    let mut out = vec![Complex64::new(0.0, 0.0)];
    for angle in [0.0, theta, -theta] {
        for k in 0..13 {
            out.push(Complex64::from_polar(10f64.powf(k as f64 / 2.0), angle));
        }
    }
    out
}

/// Parallel sweep; the output order follows `lambdas` for any thread count.
pub fn run_sweep(
    cfg: &HabitatConfig,
    lambdas: &[Complex64],
    kind: NormKind,
    epsilon0: f64,
    seed: u64,
) -> Result<Vec<SweepRecord>> {
    lambdas
        .par_iter()
        .enumerate()
        .map(|(i, &lam)| resolvent_norm(cfg, lam, kind, epsilon0, seed.wrapping_add(i as u64)))
        .collect()
}

/// Per-ray log-log slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RaySlope {
    pub angle: f64,
    pub slope: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectorFit {
    /// Largest `|lambda| * norm` over the records.
    pub c_hat: f64,
    /// Least-squares slope of `log(norm)` against `log|lambda|` on each ray.
    pub slopes: Vec<RaySlope>,
    /// max / median of `|lambda| * norm` over the nonzero `lambda`.
    pub max_over_median: f64,
    /// `|lambda|` at which the largest scaled value occurs.
    pub argmax_modulus: f64,
}

pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Fits the sector constant. Requires at least three rays, two of them
/// within `0.05` of the boundary rays `+-(pi - epsilon0)`, each spanning at
/// least three decades of `|lambda|` with three or more samples.
pub fn fit_sector_constant(records: &[SweepRecord], epsilon0: f64) -> Result<SectorFit> {
    let mut rays: Vec<(f64, Vec<&SweepRecord>)> = Vec::new();
    for r in records.iter().filter(|r| r.lambda.norm() > 0.0) {
        let a = r.lambda.arg();
        match rays.iter_mut().find(|(b, _)| (a - b).abs() < 1e-9) {
            Some((_, v)) => v.push(r),
            None => rays.push((a, vec![r])),
        }
    }
    if rays.len() < 3 {
        return Err(domain(format!("need at least 3 rays, got {}", rays.len())));
    }
    let edge = PI - epsilon0;
    let near = |s: f64| rays.iter().any(|(a, _)| (a - s * edge).abs() <= 0.05);
    if !(near(1.0) && near(-1.0)) {
        return Err(domain("both boundary rays must be sampled"));
    }
    let mut slopes = Vec::new();
    for (angle, rs) in &rays {
        let mods: Vec<f64> = rs.iter().map(|r| r.lambda.norm()).collect();
        let lo = mods.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = mods.iter().cloned().fold(0.0, f64::max);
        if rs.len() < 3 || hi / lo < 1e3 * (1.0 - 1e-12) {
            return Err(domain(format!(
                "ray at angle {angle:.4} spans fewer than 3 decades"
            )));
        }
        let xs: Vec<f64> = mods.iter().map(|m| m.ln()).collect();
        let ys: Vec<f64> = rs.iter().map(|r| r.norm_estimate.ln()).collect();
        slopes.push(RaySlope {
            angle: *angle,
            slope: least_squares_slope(&xs, &ys),
            samples: rs.len(),
        });
    }
    let (c_hat, argmax_modulus) = records
        .iter()
        .map(|r| (r.scaled, r.lambda.norm()))
        .fold((0.0, 0.0), |acc, x| if x.0 > acc.0 { x } else { acc });
    let mut scaled: Vec<f64> = records
        .iter()
        .filter(|r| r.lambda.norm() > 0.0)
        .map(|r| r.scaled)
        .collect();
    scaled.sort_by(|a, b| a.total_cmp(b));
    let m = scaled.len();
    let median = if m % 2 == 1 {
        scaled[m / 2]
    } else {
        0.5 * (scaled[m / 2 - 1] + scaled[m / 2])
    };
    Ok(SectorFit {
        c_hat,
        slopes,
        max_over_median: scaled[m - 1] / median,
        argmax_modulus,
    })
}

// ---------------------------------------------------------------------------
// Per-mode map scans

/// Trapezoid weights along one habitat.
fn side_weights(cfg: &HabitatConfig, side: Side) -> Vec<f64> {
    let (n, dx) = match side {
        Side::Minus => (cfg.n_long_minus, cfg.minus_step()),
        Side::Plus => (cfg.n_long_plus, cfg.plus_step()),
    };
    (0..n)
        .map(|i| if i == 0 || i + 1 == n { dx / 2.0 } else { dx })
        .collect()
}

/// Forward and backward convolution matrices of every transversal mode:
/// `forward[k][(i, j)]` is the weight of `g_j` in `I(x_i)` for mode `k`.
fn mode_convolution_matrices(
    ws: &SpectralWorkspace,
    side: Side,
) -> (Vec<DMatrix<Complex64>>, Vec<DMatrix<Complex64>>) {
    let cfg = &ws.cfg;
    let n = match side {
        Side::Minus => cfg.n_long_minus,
        Side::Plus => cfg.n_long_plus,
    };
    let nt = cfg.n_transversal;
    let mut fwd = vec![DMatrix::zeros(n, n); nt];
    let mut bwd = vec![DMatrix::zeros(n, n); nt];
    let ones = CVec::from_element(nt, Complex64::new(1.0, 0.0));
    let zero = CVec::zeros(nt);
    for j in 0..n {
        let mut g = vec![zero.clone(); n];
        g[j] = ones.clone();
        let c = ws.convolve_work(&g, side);
        for i in 0..n {
            for k in 0..nt {
                fwd[k][(i, j)] = c.forward[i][k];
                bwd[k][(i, j)] = c.backward[i][k];
            }
        }
    }
    (fwd, bwd)
}

/// `||W^{1/2} M W^{-1/2}||_2`, the operator norm of `M` in the trapezoid norm.
pub fn weighted_operator_norm(m: &DMatrix<Complex64>, w: &[f64]) -> f64 {
    let s: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let a = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * (s[i] / s[j]));
    a.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// `sqrt(d) / sqrt(|lambda + r| + d)` for one side.
pub fn scan_bound(cfg: &HabitatConfig, lambda: Complex64, side: Side) -> f64 {
    let (d, r) = match side {
        Side::Minus => (cfg.d_minus, cfg.r_minus),
        Side::Plus => (cfg.d_plus, cfg.r_plus),
    };
    d.sqrt() / ((lambda + r).norm() + d).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvolutionScan {
    pub lambda: Complex64,
    pub side: Side,
    /// Exact discrete map norm (max over transversal modes).
    pub ratio: f64,
    /// Best `||U g|| / ||g||` over random `g`; never above `ratio`.
    pub random_ratio: f64,
    pub bound: f64,
    /// `ratio / bound`
    pub normalized: f64,
}

/// Random inputs used by the scans.
pub const SCAN_SAMPLES: usize = 32;

/// Norm of `g -> int e^{|x - t| B} g(t) dt` on one habitat.
pub fn convolution_norm_scan(
    cfg: &HabitatConfig,
    lambda: Complex64,
    side: Side,
    epsilon0: f64,
    seed: u64,
) -> Result<ConvolutionScan> {
    let ws = spectral_workspace(cfg, lambda, epsilon0)?;
    let w = side_weights(cfg, side);
    let (fwd, bwd) = mode_convolution_matrices(&ws, side);
    let ratio = fwd
        .iter()
        .zip(&bwd)
        .map(|(f, b)| weighted_operator_norm(&(f + b), &w))
        .fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random_ratio = 0.0f64;
    for _ in 0..SCAN_SAMPLES {
        let g = random_grid(cfg, &mut rng);
        let gs = match side {
            Side::Minus => &g.minus,
            Side::Plus => &g.plus,
        };
        let c = ws.convolve_v(gs, side);
        let u: Vec<CVec> = c.forward.iter().zip(&c.backward).map(|(a, b)| a + b).collect();
        random_ratio = random_ratio.max(side_norm(&u, &w) / side_norm(gs, &w));
    }
    let bound = scan_bound(cfg, lambda, side);
    Ok(ConvolutionScan {
        lambda,
        side,
        ratio,
        random_ratio,
        bound,
        normalized: ratio / bound,
    })
}

fn side_norm(v: &[CVec], w: &[f64]) -> f64 {
    v.iter()
        .zip(w)
        .map(|(x, wi)| wi * x.norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// The eight rank-one boundary maps `g -> P(x) F(g)`, numbered as
/// `(side, synthesis kernel, analysis functional)`:
///
/// | # | side | `P(x)` | `F(g)` |
/// |---|------|--------|--------|
/// | 1 | - | `e^{(x+ell)B}` | `int e^{(t+ell)B} g` |
/// | 2 | - | `e^{(x+ell)B}` | `int e^{-tB} g` |
/// | 3 | - | `e^{-xB}` | `int e^{-tB} g` |
/// | 4 | - | `e^{-xB}` | `int e^{(t+ell)B} g` |
/// | 5 | + | `e^{xB}` | `int e^{tB} g` |
/// | 6 | + | `e^{xB}` | `int e^{(L-t)B} g` |
/// | 7 | + | `e^{(L-x)B}` | `int e^{(L-t)B} g` |
/// | 8 | + | `e^{(L-x)B}` | `int e^{tB} g` |
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryMap {
    pub index: usize,
    pub side: Side,
    /// Synthesis grows toward the left end (`true`) or the right end.
    pub synth_from_left: bool,
    /// Analysis functional is the backward sum at the left end (`true`) or
    /// the forward sum at the right end.
    pub analysis_backward: bool,
}

pub const BOUNDARY_MAPS: [BoundaryMap; 8] = [
    BoundaryMap {
        index: 1,
        side: Side::Minus,
        synth_from_left: true,
        analysis_backward: true,
    },
    BoundaryMap {
        index: 2,
        side: Side::Minus,
        synth_from_left: true,
        analysis_backward: false,
    },
    BoundaryMap {
        index: 3,
        side: Side::Minus,
        synth_from_left: false,
        analysis_backward: false,
    },
    BoundaryMap {
        index: 4,
        side: Side::Minus,
        synth_from_left: false,
        analysis_backward: true,
    },
    BoundaryMap {
        index: 5,
        side: Side::Plus,
        synth_from_left: true,
        analysis_backward: true,
    },
    BoundaryMap {
        index: 6,
        side: Side::Plus,
        synth_from_left: true,
        analysis_backward: false,
    },
    BoundaryMap {
        index: 7,
        side: Side::Plus,
        synth_from_left: false,
        analysis_backward: false,
    },
    BoundaryMap {
        index: 8,
        side: Side::Plus,
        synth_from_left: false,
        analysis_backward: true,
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapScan {
    pub index: usize,
    pub ratio: f64,
    pub random_ratio: f64,
    pub bound: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryScan {
    pub lambda: Complex64,
    pub maps: Vec<MapScan>,
}

struct ModeData {
    /// `synth[k][i]` for both directions.
    from_left: Vec<Vec<Complex64>>,
    from_right: Vec<Vec<Complex64>>,
    /// Analysis weights per mode.
    backward_left: Vec<Vec<Complex64>>,
    forward_right: Vec<Vec<Complex64>>,
}

fn mode_data(ws: &SpectralWorkspace, side: Side) -> ModeData {
    let cfg = &ws.cfg;
    let (nodes, b) = match side {
        Side::Minus => (cfg.minus_nodes(), &ws.b_minus),
        Side::Plus => (cfg.plus_nodes(), &ws.b_plus),
    };
    let (a, z) = (nodes[0], nodes[nodes.len() - 1]);
    let (fwd, bwd) = mode_convolution_matrices(ws, side);
    let n = nodes.len();
    let expo = |bk: Complex64, s: f64| {
        if s * bk.re < -700.0 {
            Complex64::new(0.0, 0.0)
        } else {
            (bk * s).exp()
        }
    };
    ModeData {
        from_left: b
            .iter()
            .map(|&bk| nodes.iter().map(|&x| expo(bk, x - a)).collect())
            .collect(),
        from_right: b
            .iter()
            .map(|&bk| nodes.iter().map(|&x| expo(bk, z - x)).collect())
            .collect(),
        backward_left: bwd.iter().map(|m| (0..n).map(|j| m[(0, j)]).collect()).collect(),
        forward_right: fwd
            .iter()
            .map(|m| (0..n).map(|j| m[(n - 1, j)]).collect())
            .collect(),
    }
}

/// Norm of the rank-one map `g -> s (c . g)` in the trapezoid norm:
/// `||s||_w * sqrt(sum |c_j|^2 / w_j)`.
pub fn rank_one_norm(s: &[Complex64], c: &[Complex64], w: &[f64]) -> f64 {
    let sn: f64 = s
        .iter()
        .zip(w)
        .map(|(x, wi)| wi * x.norm_sqr())
        .sum::<f64>()
        .sqrt();
    let cn: f64 = c
        .iter()
        .zip(w)
        .map(|(x, wi)| x.norm_sqr() / wi)
        .sum::<f64>()
        .sqrt();
    sn * cn
}

pub fn boundary_term_scan(
    cfg: &HabitatConfig,
    lambda: Complex64,
    epsilon0: f64,
    seed: u64,
) -> Result<BoundaryScan> {
    let ws = spectral_workspace(cfg, lambda, epsilon0)?;
    let data = [mode_data(&ws, Side::Minus), mode_data(&ws, Side::Plus)];
    let weights = [side_weights(cfg, Side::Minus), side_weights(cfg, Side::Plus)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<GridFunction> = (0..SCAN_SAMPLES).map(|_| random_grid(cfg, &mut rng)).collect();
    let mut maps = Vec::new();
    for m in BOUNDARY_MAPS {
        let si = if m.side == Side::Minus { 0 } else { 1 };
        let d = &data[si];
        let w = &weights[si];
        let synth = if m.synth_from_left {
            &d.from_left
        } else {
            &d.from_right
        };
        let anal = if m.analysis_backward {
            &d.backward_left
        } else {
            &d.forward_right
        };
        let ratio = (0..cfg.n_transversal)
            .map(|k| rank_one_norm(&synth[k], &anal[k], w))
            .fold(0.0, f64::max);
        let mut random_ratio = 0.0f64;
        for g in &samples {
            let gs = match m.side {
                Side::Minus => &g.minus,
                Side::Plus => &g.plus,
            };
            let gw: Vec<CVec> = gs.iter().map(|v| ws.alg.to_work(v)).collect();
            let coef = CVec::from_fn(cfg.n_transversal, |k, _| {
                anal[k].iter().zip(&gw).map(|(c, v)| c * v[k]).sum::<Complex64>()
            });
            let out: Vec<CVec> = (0..gs.len())
                .map(|i| CVec::from_fn(cfg.n_transversal, |k, _| synth[k][i] * coef[k]))
                .collect();
            random_ratio = random_ratio.max(side_norm(&out, w) / side_norm(&gw, w));
        }
        let bound = scan_bound(cfg, lambda, m.side);
        maps.push(MapScan {
            index: m.index,
            ratio,
            random_ratio,
            bound,
            normalized: ratio / bound,
        });
    }
    Ok(BoundaryScan { lambda, maps })
}

/// Norm of `g -> B int_{a}^{x} e^{(x - t) B} g(t) dt` on one habitat (max over modes).
pub fn maximal_regularity_norm(cfg: &HabitatConfig, lambda: Complex64, side: Side) -> Result<f64> {
    let ws = spectral_workspace(cfg, lambda, 0.0)?;
    let w = side_weights(cfg, side);
    let b = match side {
        Side::Minus => &ws.b_minus,
        Side::Plus => &ws.b_plus,
    };
    let (fwd, _) = mode_convolution_matrices(&ws, side);
    Ok(fwd
        .iter()
        .zip(b.iter())
        .map(|(f, bk)| weighted_operator_norm(&(f * *bk), &w))
        .fold(0.0, f64::max))
}

/// `||B int_0^L e^{s B} h(s) ds||` for plus-side data `h` (node coordinates).
pub fn trace_norm(cfg: &HabitatConfig, lambda: Complex64, h: &[CVec]) -> Result<f64> {
    let ws = spectral_workspace(cfg, lambda, 0.0)?;
    let hw: Vec<CVec> = h.iter().map(|v| ws.alg.to_work(v)).collect();
    let c = ws.convolve_work(&hw, Side::Plus);
    let v = ws.alg.apply(&ws.b_plus, &c.backward[0]);
    Ok((v.norm_squared() * cfg.transversal_step()).sqrt())
}

// ---------------------------------------------------------------------------
// Contour quadrature

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContourShape {
    Hyperbola,
}

/// Hyperbola `lambda(theta) = mu (1 - sin(beta + i theta))` sampled at
/// `theta_k = (k + 1/2) step`, `k = -n/2 .. n/2 - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourSpec {
    pub shape: ContourShape,
    /// Scale; tuned when absent.
    #[serde(default)]
    pub mu: Option<f64>,
    /// Asymptotic angle; tuned when absent. Must stay below `pi/2 - epsilon0`.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Node spacing in `theta`; tuned when absent.
    #[serde(default)]
    pub step: Option<f64>,
    pub n_nodes: usize,
    pub t_min: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedContour {
    pub mu: f64,
    pub beta: f64,
    pub step: f64,
    pub n_nodes: usize,
    pub t_min: f64,
    pub t_max: f64,
    /// Error predicted by the model the parameters were tuned against.
    pub predicted_error: f64,
}

/// Model of the relative quadrature error on `[t0, t1]`.
pub fn contour_error_model(mu: f64, beta: f64, step: f64, n_nodes: usize, t0: f64, t1: f64) -> f64 {
    let theta_max = (n_nodes / 2) as f64 * step;
    // the strip above the contour ends where it meets the negative axis
    let upper = (-2.0 * PI * (PI / 2.0 - beta) / step).exp();
    // below, the contour widens and e^{lambda t} grows
    let lower = (1..=20)
        .map(|i| {
            let d = beta * i as f64 / 20.0;
            (mu * t1 * (1.0 - (beta - d).sin()) - 2.0 * PI * d / step).exp()
        })
        .fold(f64::INFINITY, f64::min);
    let truncation = (mu * t0 * (1.0 - beta.sin() * theta_max.cosh())).exp();
    let rounding = f64::EPSILON * (mu * t1 * (1.0 - beta.sin())).exp();
    upper + lower + truncation + rounding
}

impl ContourSpec {
    pub fn validate(&self, epsilon0: f64) -> Result<()> {
        if self.n_nodes < 2 || !self.n_nodes.is_multiple_of(2) {
            return Err(config("contour.n_nodes", "must be an even integer >= 2"));
        }
        if !(self.t_min > 0.0 && self.t_min.is_finite()) {
            return Err(config("contour.t_min", "must be positive"));
        }
        if !(self.t_max >= self.t_min && self.t_max.is_finite()) {
            return Err(config("contour.t_max", "must be at least t_min"));
        }
        if let Some(mu) = self.mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(config("contour.mu", "must be positive"));
            }
        }
        if let Some(b) = self.beta {
            if !(b > 0.0 && b < PI / 2.0 - epsilon0) {
                return Err(config(
                    "contour.beta",
                    format!(
                        "must lie in (0, pi/2 - epsilon0) = (0, {:.6})",
                        PI / 2.0 - epsilon0
                    ),
                ));
            }
        }
        if let Some(s) = self.step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(config("contour.step", "must be positive"));
            }
        }
        Ok(())
    }

    /// Fills in missing parameters by a grid search over the error model.
    pub fn resolve(&self, epsilon0: f64) -> Result<ResolvedContour> {
        self.validate(epsilon0)?;
        let beta_max = PI / 2.0 - epsilon0 - 1e-3;
        let betas = match self.beta {
            Some(b) => vec![b],
            None => (1..=60).map(|i| beta_max * i as f64 / 60.0).collect(),
        };
        let mus = match self.mu {
            Some(m) => vec![m],
            None => log_space(0.1 / self.t_min, 1e3 / self.t_min, 120),
        };
        let steps = match self.step {
            Some(s) => vec![s],
            None => log_space(1e-3, 2.0, 120),
        };
        let (t0, t1, n) = (self.t_min, self.t_max, self.n_nodes);
        let best = betas
            .par_iter()
            .map(|&b| {
                let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
                for &m in &mus {
                    for &s in &steps {
                        let e = contour_error_model(m, b, s, n, t0, t1);
                        if e < best.0 {
                            best = (e, m, b, s);
                        }
                    }
                }
                best
            })
            .reduce(
                || (f64::INFINITY, 0.0, 0.0, 0.0),
                |a, b| {
                    if b.0 < a.0 || (b.0 == a.0 && b.2 < a.2) {
                        b
                    } else {
                        a
                    }
                },
            );
        let (err, mu, beta, step) = best;
        if !err.is_finite() {
            return Err(config("contour", "no admissible parameters"));
        }
        let rc = ResolvedContour {
            mu,
            beta,
            step,
            n_nodes: n,
            t_min: t0,
            t_max: t1,
            predicted_error: err,
        };
        for (lam, _) in rc.nodes() {
            if !in_resolvent_region(lam, epsilon0) {
                return Err(config(
                    "contour",
                    format!("node {lam} lies outside the sector of half-angle pi - {epsilon0}"),
                ));
            }
        }
        Ok(rc)
    }
}

impl ResolvedContour {
    /// `(lambda_k, w_k)` with `e^{tS} u ~ sum_k w_k e^{lambda_k t} R(lambda_k) u`,
    /// positive `theta` first.
    pub fn nodes(&self) -> Vec<(Complex64, Complex64)> {
        let half = self.n_nodes / 2;
        let i = Complex64::new(0.0, 1.0);
        let pos = (0..half).map(|k| (k as f64 + 0.5) * self.step);
        let neg = (0..half).map(|k| -(k as f64 + 0.5) * self.step);
        pos.chain(neg)
            .map(|th| {
                let arg = Complex64::new(self.beta, th);
                let lam = self.mu * (1.0 - arg.sin());
                let dlam = -i * self.mu * arg.cos();
                (lam, dlam * self.step / (2.0 * PI * i))
            })
            .collect()
    }
}

/// Cached resolvent workspaces at the contour nodes.
pub struct ContourEvolver {
    pub cfg: HabitatConfig,
    pub contour: ResolvedContour,
    nodes: Vec<(Complex64, Complex64)>,
    workspaces: Vec<SpectralWorkspace>,
}

impl ContourEvolver {
    pub fn new(cfg: &HabitatConfig, spec: &ContourSpec, epsilon0: f64) -> Result<Self> {
        let contour = spec.resolve(epsilon0)?;
        let nodes = contour.nodes();
        let workspaces = nodes
            .par_iter()
            .map(|(lam, _)| spectral_workspace(cfg, *lam, epsilon0))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: *cfg,
            contour,
            nodes,
            workspaces,
        })
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let tol = 1e-12 * self.contour.t_max;
        if !(t >= self.contour.t_min - tol && t <= self.contour.t_max + tol) {
            return Err(domain(format!(
                "t = {t} outside the contour window [{}, {}]",
                self.contour.t_min, self.contour.t_max
            )));
        }
        Ok(())
    }

    fn weighted_sum(&self, t: f64, u0: &GridFunction, idx: &[usize]) -> Result<GridFunction> {
        let parts = idx
            .par_iter()
            .map(|&k| {
                let (lam, w) = self.nodes[k];
                Ok(self.workspaces[k].apply(u0)?.scale(w * (lam * t).exp()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut acc = GridFunction::zeros(&self.cfg);
        for p in &parts {
            acc = acc.add(p);
        }
        Ok(acc)
    }

    /// `e^{tS} u0`. Real data use the conjugate symmetry of the nodes and
    /// return an exactly real result.
    pub fn apply(&self, t: f64, u0: &GridFunction) -> Result<GridFunction> {
        self.check_time(t)?;
        if u0.max_imag() == 0.0 {
            let half: Vec<usize> = (0..self.nodes.len() / 2).collect();
            Ok(self
                .weighted_sum(t, u0, &half)?
                .real_part()
                .scale(Complex64::new(2.0, 0.0)))
        } else {
            self.apply_unfolded(t, u0)
        }
    }

    /// Sum over every node, without using the conjugate symmetry.
    pub fn apply_unfolded(&self, t: f64, u0: &GridFunction) -> Result<GridFunction> {
        self.check_time(t)?;
        let all: Vec<usize> = (0..self.nodes.len()).collect();
        self.weighted_sum(t, u0, &all)
    }
}

pub fn semigroup_apply(
    cfg: &HabitatConfig,
    contour: &ContourSpec,
    epsilon0: f64,
    t: f64,
    u0: &GridFunction,
) -> Result<GridFunction> {
    ContourEvolver::new(cfg, contour, epsilon0)?.apply(t, u0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> HabitatConfig {
        HabitatConfig {
            ell: 1.0,
            big_l: 1.5,
            d_minus: 0.3,
            d_plus: 0.15,
            r_minus: 0.05,
            r_plus: 0.1,
            q: 0.5,
            n_transversal: 4,
            n_long_minus: 33,
            n_long_plus: 49,
        }
    }

    #[test]
    fn sweep_grid_has_forty_points() {
        let l = sweep_lambdas(0.3);
        assert_eq!(l.len(), 40);
        assert!(l.iter().all(|z| in_resolvent_region(*z, 0.3)));
    }

    #[test]
    fn rank_one_norm_matches_svd() {
        let c = cfg();
        let ws = spectral_workspace(&c, Complex64::new(3.0, 4.0), 0.3).unwrap();
        let w = side_weights(&c, Side::Plus);
        let d = mode_data(&ws, Side::Plus);
        for k in 0..4 {
            let s = &d.from_left[k];
            let a = &d.backward_left[k];
            let m = DMatrix::from_fn(s.len(), s.len(), |i, j| s[i] * a[j]);
            let dense = weighted_operator_norm(&m, &w);
            let closed = rank_one_norm(s, a, &w);
            assert!((dense - closed).abs() <= 1e-10 * dense);
        }
    }

    #[test]
    fn random_ratios_never_exceed_exact_norms() {
        let c = cfg();
        let lam = Complex64::new(10.0, 0.0);
        let s = convolution_norm_scan(&c, lam, Side::Plus, 0.3, 1).unwrap();
        assert!(s.random_ratio <= s.ratio * (1.0 + 1e-10) && s.random_ratio > 0.1 * s.ratio);
        let b = boundary_term_scan(&c, lam, 0.3, 2).unwrap();
        for m in b.maps {
            assert!(m.random_ratio <= m.ratio * (1.0 + 1e-10), "{m:?}");
        }
    }

    #[test]
    fn conjugate_nodes_pair_up() {
        let spec = ContourSpec {
            shape: ContourShape::Hyperbola,
            mu: None,
            beta: None,
            step: None,
            n_nodes: 40,
            t_min: 0.05,
            t_max: 0.5,
        };
        let rc = spec.resolve(0.3).unwrap();
        let nodes = rc.nodes();
        for k in 0..20 {
            let (a, wa) = nodes[k];
            let (b, wb) = nodes[k + 20];
            assert!((a.conj() - b).norm() < 1e-12 * a.norm());
            assert!((wa.conj() - wb).norm() < 1e-12 * wa.norm());
        }
        assert!(rc.beta < PI / 2.0 - 0.3);
    }

    #[test]
    fn fit_rejects_short_sweeps() {
        let rec = |lam: Complex64| SweepRecord {
            lambda: lam,
            norm_estimate: 1.0 / (1.0 + lam.norm()),
            scaled: lam.norm() / (1.0 + lam.norm()),
            norm_kind: NormKind::P2,
            lower_bound: false,
            iterations: 1,
            wall_time_ms: 0.0,
        };
        let only_positive: Vec<_> = (0..13)
            .map(|k| rec(Complex64::new(10f64.powf(k as f64 / 2.0), 0.0)))
            .collect();
        assert!(fit_sector_constant(&only_positive, 0.3).is_err());
        let full: Vec<_> = sweep_lambdas(0.3).into_iter().map(rec).collect();
        let fit = fit_sector_constant(&full, 0.3).unwrap();
        assert_eq!(fit.slopes.len(), 3);
    }
}
