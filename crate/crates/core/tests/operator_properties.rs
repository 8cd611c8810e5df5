use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use twohab_core::operator::*;

fn rel_fro(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Random matrix `Q diag(e) Q^{-1}` with eigenvalues in the sector `|arg| < 2.5`.
fn sectorial(seed: Vec<f64>, n: usize) -> CMat {
    let mut it = seed.into_iter().cycle();
    let mut next = || it.next().unwrap();
    let q = CMat::from_fn(n, n, |i, j| {
        Complex64::new(if i == j { 2.0 } else { 0.0 } + next() * 0.5, next() * 0.5)
    });
    let e = CMat::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::from_polar(10f64.powf(2.0 * next()), 2.5 * next())
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let qi = q.clone().try_inverse().unwrap();
    &q * e * qi
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn square_root_squares_back(seed in prop::collection::vec(-1.0f64..1.0, 40), n in 1usize..7) {
        let m = sectorial(seed, n);
        let r = principal_sqrt(&m).unwrap();
        prop_assert!(rel_fro(&(&r * &r), &m) <= 1e-10);
        let eig = r.clone().schur().eigenvalues().unwrap();
        prop_assert!(eig.iter().all(|z| z.re > 0.0));
    }

    #[test]
    fn generator_squares_to_shifted_operator(
        n in 1usize..12, d in 0.05f64..2.0, r in 0.01f64..2.0, lr in -2.0f64..5.0, th in -2.8f64..2.8
    ) {
        let op = build_dirichlet_laplacian(n).unwrap();
        let lam = Complex64::from_polar(10f64.powf(lr), th);
        let b = build_generator(&op, d, r, lam).unwrap();
        let a = op.complex_matrix();
        let target = -&a + CMat::identity(n, n) * ((lam + r) / d);
        prop_assert!((&b.matrix * &b.matrix - &target).norm() / a.norm() <= 1e-10);
        prop_assert!(b.abscissa() < 0.0);
    }

    #[test]
    fn propagator_semigroup_law(n in 1usize..8, x in 0.0f64..2.0, y in 0.0f64..2.0, th in -2.5f64..2.5) {
        let op = build_dirichlet_laplacian(n).unwrap();
        let b = build_generator(&op, 0.3, 0.1, Complex64::from_polar(3.0, th)).unwrap();
        let lhs = propagator(&b, x + y).unwrap();
        let rhs = propagator(&b, x).unwrap() * propagator(&b, y).unwrap();
        prop_assert!((&lhs - &rhs).norm() <= 1e-9 * (1.0 + lhs.norm()));
    }

    #[test]
    fn laplacian_sectoriality_meets_normal_bound(n in 1usize..16, eps in 0.05f64..1.2) {
        let op = build_dirichlet_laplacian(n).unwrap();
        let minus_a = -op.complex_matrix();
        let samples: Vec<Complex64> = (0..24)
            .map(|k| Complex64::from_polar(10f64.powf(-2.0 + 6.0 * k as f64 / 23.0), if k % 2 == 0 { PI - eps } else { -(PI - eps) }))
            .collect();
        let rep = measure_sectoriality(&minus_a, &samples, "boundary rays").unwrap();
        prop_assert!(rep.m_constant <= 1.0 / eps.sin() + 1e-6);
    }
}

#[test]
fn laplacian_eigenvalues_match_closed_form() {
    for n in [1, 3, 10, 40] {
        let op = build_dirichlet_laplacian(n).unwrap();
        let h = 1.0 / (n as f64 + 1.0);
        let dense = DMatrix::from_fn(n, n, |i, j| op.complex_matrix()[(i, j)].re);
        let mut numeric: Vec<f64> = dense.symmetric_eigen().eigenvalues.iter().cloned().collect();
        numeric.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (k, v) in numeric.iter().enumerate() {
            let exact = -4.0 / (h * h) * ((k as f64 + 1.0) * PI * h / 2.0).sin().powi(2);
            assert!((v - exact).abs() <= 1e-10 * exact.abs(), "n={n} k={k}");
        }
    }
    assert!(build_dirichlet_laplacian(0).is_err());
}

#[test]
fn negative_laplacian_on_negative_axis_has_unit_constant() {
    let minus_a = -build_dirichlet_laplacian(12).unwrap().complex_matrix();
    let samples: Vec<Complex64> = (0..40)
        .map(|k| Complex64::new(-10f64.powf(-3.0 + 0.2 * k as f64), 0.0))
        .collect();
    let rep = measure_sectoriality(&minus_a, &samples, "negative axis").unwrap();
    assert!(rep.m_constant <= 1.0 + 1e-12);
    assert!(rep.m_constant > 0.99);
}
