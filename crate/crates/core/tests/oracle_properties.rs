use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twohab_core::operator::build_dirichlet_laplacian;
use twohab_core::oracle::*;
use twohab_core::resolvent::{resolvent_residuals, GridFunction, HabitatConfig, Side};
use twohab_core::Error;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn base() -> HabitatConfig {
    HabitatConfig {
        ell: 1.0,
        big_l: 1.5,
        d_minus: 0.3,
        d_plus: 0.15,
        r_minus: 0.05,
        r_plus: 0.1,
        q: 0.5,
        n_transversal: 4,
        n_long_minus: 17,
        n_long_plus: 25,
    }
}

fn grid(h: &HabitatConfig, n_t: usize, per: usize) -> HabitatConfig {
    h.with_grid(
        n_t,
        (per as f64 * h.ell).round() as usize + 1,
        (per as f64 * h.big_l).round() as usize + 1,
    )
}

/// Smooth in each habitat, discontinuous at the interface, zero at both
/// Dirichlet ends.
fn smooth(cfg: &HabitatConfig) -> GridFunction {
    let (ell, big_l) = (cfg.ell, cfg.big_l);
    GridFunction::from_fn(cfg, move |s, x, y| {
        let a = match s {
            Side::Minus => (1.0 + 0.5 * x) * (x + ell),
            Side::Plus => (big_l - x) / (1.0 + x),
        };
        c(a * ((PI * y).sin() + 0.2 * y * (1.0 - y)), 0.0)
    })
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// `-4/dx^2 sin^2(omega dx / 2)`: the three-point symbol of `cos(omega x)`.
fn three_point(omega: f64, dx: f64) -> f64 {
    -4.0 / (dx * dx) * (omega * dx / 2.0).sin().powi(2)
}

#[test]
fn strong_coupling_approaches_single_domain_spectrum() {
    let h = HabitatConfig {
        d_plus: 0.3,
        r_plus: 0.05,
        q: 1e8,
        ..grid(&base(), 3, 16)
    };
    let dx = h.minus_step();
    assert!((dx - h.plus_step()).abs() < 1e-15);
    let width = h.ell + h.big_l;
    let n_long = ((width / dx).round() as usize) - 1;
    let mu = &build_dirichlet_laplacian(3).unwrap().eigen().values.clone();
    let mut expect = Vec::new();
    for m in mu.iter() {
        for k in 1..=n_long {
            expect.push(h.d_minus * (three_point(k as f64 * PI / width, dx) + m) - h.r_minus);
        }
    }
    let expect = sorted(expect);
    let got = build_2d_operator(&h).unwrap().symmetric_spectrum();
    // the doubled interface node adds one very stiff eigenvalue per mode
    assert_eq!(got.len(), expect.len() + 3);
    for i in 1..=10 {
        let (a, b) = (got[got.len() - i], expect[expect.len() - i]);
        assert!((a - b).abs() <= 1e-5 * b.abs(), "eigenvalue {i}: {a} vs {b}");
    }
}

#[test]
fn weak_coupling_approaches_decoupled_spectra() {
    let h = HabitatConfig {
        q: 1e-8,
        ..grid(&base(), 3, 16)
    };
    let mu = build_dirichlet_laplacian(3).unwrap().eigen().values.clone();
    let mut expect = Vec::new();
    for (len, d, r, dx, n) in [
        (h.ell, h.d_minus, h.r_minus, h.minus_step(), h.n_long_minus - 1),
        (h.big_l, h.d_plus, h.r_plus, h.plus_step(), h.n_long_plus - 1),
    ] {
        for m in &mu {
            for k in 0..n {
                let omega = (k as f64 + 0.5) * PI / len;
                expect.push(d * (three_point(omega, dx) + m) - r);
            }
        }
    }
    let expect = sorted(expect);
    let got = build_2d_operator(&h).unwrap().symmetric_spectrum();
    assert_eq!(got.len(), expect.len());
    for (a, b) in got.iter().zip(&expect) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn stationary_solve_is_positive_for_positive_source() {
    let h = grid(&base(), 6, 24);
    let op = build_2d_operator(&h).unwrap();
    let bump = GridFunction::from_fn(&h, |_, x, y| {
        let r2 = (x + 0.3).powi(2) + (y - 0.5).powi(2);
        c((-r2 / 0.02).exp(), 0.0)
    });
    let w = direct_resolvent_solve(&op, c(0.0, 0.0), &bump.scale(c(-1.0, 0.0))).unwrap();
    let x = op.pack(&w).unwrap();
    assert!(x.iter().all(|v| v.re > 0.0 && v.im == 0.0));
}

#[test]
fn direct_solve_residual_is_tiny() {
    let h = grid(&base(), 8, 32);
    let op = build_2d_operator(&h).unwrap();
    let f = smooth(&h);
    for lam in [c(0.0, 0.0), c(1.0, 1.0), c(-50.0, 3.0), c(1e5, -1e3)] {
        let w = direct_resolvent_solve(&op, lam, &f).unwrap();
        let r = op.apply(&w).unwrap().sub(&w.scale(lam)).sub(&f);
        assert!(r.p2_norm() <= 1e-10 * f.p2_norm(), "{lam}: {:e}", r.p2_norm());
    }
    let z = direct_resolvent_solve(&op, c(2.0, 0.0), &GridFunction::zeros(&h)).unwrap();
    assert_eq!(z.p2_norm(), 0.0);
}

#[test]
fn solving_at_an_eigenvalue_breaks_down() {
    let h = grid(&base(), 3, 8);
    let op = build_2d_operator(&h).unwrap();
    let (nu, _) = op.inverse_iteration(0.0, 500).unwrap();
    let err = direct_resolvent_solve(&op, c(nu, 0.0), &smooth(&h));
    assert!(matches!(err, Err(Error::Breakdown(_))), "{err:?}");
}

#[test]
fn self_convergence_is_second_order() {
    let lam = c(1.0, 1.0);
    let sols: Vec<GridFunction> = [16, 32, 64]
        .iter()
        .map(|&per| {
            let h = grid(&base(), 4, per);
            direct_resolvent_solve(&build_2d_operator(&h).unwrap(), lam, &smooth(&h)).unwrap()
        })
        .collect();
    let diff = |coarse: &GridFunction, fine: &GridFunction| {
        let restricted = GridFunction {
            minus: fine.minus.iter().step_by(2).cloned().collect(),
            plus: fine.plus.iter().step_by(2).cloned().collect(),
            minus_nodes: coarse.minus_nodes.clone(),
            plus_nodes: coarse.plus_nodes.clone(),
            transversal_nodes: coarse.transversal_nodes.clone(),
        };
        restricted.sub(coarse).p2_norm()
    };
    let e1 = diff(&sols[0], &sols[1]);
    let e2 = diff(&sols[1], &sols[2]);
    let order = (e1 / e2).log2();
    assert!((1.7..=2.3).contains(&order), "{e1:e} {e2:e} order {order}");
}

#[test]
fn interface_flux_balance_is_second_order() {
    let lam = c(0.0, 0.0);
    let res: Vec<(f64, f64)> = [16, 32, 64]
        .iter()
        .map(|&per| {
            let h = grid(&base(), 4, per);
            let f = smooth(&h);
            let w = direct_resolvent_solve(&build_2d_operator(&h).unwrap(), lam, &f).unwrap();
            let r = resolvent_residuals(&h, lam, &w, &f).unwrap();
            (r.interface_minus, r.interface_plus)
        })
        .collect();
    for w in res.windows(2) {
        assert!((w[0].0 / w[1].0).log2() >= 1.7, "{res:?}");
        assert!((w[0].1 / w[1].1).log2() >= 1.7, "{res:?}");
    }
}

#[test]
fn weak_residual_shrinks_and_detects_noise() {
    let mut prev: Option<f64> = None;
    // both steps refined together: a fixed transversal grid leaves its own
    // truncation error in every test function
    for (n_t, per) in [(3, 8), (7, 16), (15, 32)] {
        let h = grid(&base(), n_t, per);
        let op = build_2d_operator(&h).unwrap();
        let g = smooth(&h);
        let u = direct_resolvent_solve(&op, c(0.0, 0.0), &g.scale(c(-1.0, 0.0))).unwrap();
        let r = weak_residual(&op, &u, &g).unwrap();
        if let Some(p) = prev {
            assert!((p / r).log2() >= 1.7, "{p:e} -> {r:e}");
        }
        prev = Some(r);

        let mut rng = ChaCha8Rng::seed_from_u64(per as u64);
        let scale = u.pinf_norm();
        let mut noisy = u.clone();
        for side in [&mut noisy.minus, &mut noisy.plus] {
            for v in side.iter_mut() {
                for z in v.iter_mut() {
                    *z += 0.01 * scale * rng.gen_range(-1.0f64..1.0);
                }
            }
        }
        // Dirichlet ends stay exact
        let last = noisy.plus.len() - 1;
        noisy.minus[0].fill(c(0.0, 0.0));
        noisy.plus[last].fill(c(0.0, 0.0));
        let rn = weak_residual(&op, &noisy, &g).unwrap();
        // on the coarsest grid the truncation residual is itself near the
        // noise level
        if n_t > 3 {
            assert!(rn >= 10.0 * r, "{r:e} vs noisy {rn:e}");
        }
    }
    let h = base();
    let op = build_2d_operator(&h).unwrap();
    let z = GridFunction::zeros(&h);
    assert_eq!(weak_residual(&op, &z, &z).unwrap(), 0.0);
}

#[test]
fn crank_nicolson_is_second_order_on_an_eigenvector() {
    let h = grid(&base(), 4, 16);
    let op = build_2d_operator(&h).unwrap();
    let (nu, phi) = op.inverse_iteration(0.0, 500).unwrap();
    let t = 0.2;
    let errs: Vec<f64> = [0.01, 0.005, 0.0025]
        .iter()
        .map(|&dt| {
            let u = time_step_cn(&op, &phi, dt, (t / dt).round() as usize).unwrap();
            let exact = phi.scale(c((nu * t).exp(), 0.0));
            u.sub(&exact).p2_norm() / exact.p2_norm()
        })
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((1.9..=2.1).contains(&order), "{errs:?}");
    }
    let z = time_step_cn(&op, &GridFunction::zeros(&h), 0.01, 5).unwrap();
    assert_eq!(z.p2_norm(), 0.0);
    assert!(time_step_cn(&op, &phi, 0.05, 2).is_err());
}

#[test]
fn incompatible_grids_are_rejected() {
    let h = base();
    let op = build_2d_operator(&h).unwrap();
    let other = GridFunction::zeros(&h.with_grid(4, 9, 25));
    assert!(op.pack(&other).is_err());
    assert!(build_2d_operator(&HabitatConfig { n_long_minus: 1, ..h }).is_err());
}

fn habitat() -> impl Strategy<Value = HabitatConfig> {
    (
        0.5f64..2.0,
        0.5f64..2.0,
        0.05f64..1.0,
        0.05f64..1.0,
        0.01f64..1.0,
        0.01f64..1.0,
        0.01f64..10.0,
    )
        .prop_map(|(ell, big_l, d_minus, d_plus, r_minus, r_plus, q)| {
            grid(
                &HabitatConfig {
                    ell,
                    big_l,
                    d_minus,
                    d_plus,
                    r_minus,
                    r_plus,
                    q,
                    ..base()
                },
                3,
                8,
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn energy_is_coercive(h in habitat(), seed in 0u64..10_000) {
        let op = build_2d_operator(&h).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = GridFunction::from_fn(&h, |_, _, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let last = u.plus.len() - 1;
        u.minus[0].fill(c(0.0, 0.0));
        u.plus[last].fill(c(0.0, 0.0));
        let e = discrete_energy(&op, &u).unwrap();
        prop_assert!(e > 0.0, "{e}");
    }

    #[test]
    fn spectrum_is_negative_and_real(h in habitat()) {
        let op = build_2d_operator(&h).unwrap();
        let sym = op.symmetric_spectrum();
        prop_assert!(*sym.last().unwrap() < 0.0);
        let general = sorted(op.general_spectrum().iter().map(|z| {
            assert!(z.im.abs() <= 1e-8 * z.norm().max(1.0));
            z.re
        }).collect());
        for (a, b) in general.iter().zip(&sym) {
            prop_assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
        }
    }

    #[test]
    fn weighted_symmetry(h in habitat()) {
        let op = build_2d_operator(&h).unwrap();
        let s = op.weighted_symmetric();
        let gap = (&s - s.transpose()).abs().max();
        prop_assert!(gap <= 1e-10 * s.abs().max());
    }
}
