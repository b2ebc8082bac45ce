mod common;

use std::f64::consts::PI;

use lamopt_core::voigt::{
    base_tensor, eigen_2x2_symmetric, hashin_shtrikman_moduli, hashin_shtrikman_tensor, homogenised_from_stress,
    homogenised_tensor, laminate_phase_tensor, laminate_proportions, optimal_theta, penalise_theta,
    LameCoefficients, VoigtTensor, THETA_MIN,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{laminate_quadratic_form, lu_inverse, max_abs, max_abs_diff, strain_tensor};

fn reference() -> LameCoefficients {
    LameCoefficients::reference()
}

#[test]
fn laminate_quadratic_form_matches_direct_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let materials = [reference(), LameCoefficients::from_engineering(2.5, 0.1).unwrap()];
    for lame in materials {
        for _ in 0..1000 {
            let angle: f64 = rng.random_range(0.0..2.0 * PI);
            let v = [angle.cos(), angle.sin()];
            let e: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let ac = laminate_phase_tensor(&lame, v).unwrap();
            let direct = laminate_quadratic_form(&lame, v, &strain_tensor(e));
            let voigt = ac.quad_form(e);
            assert!((direct - voigt).abs() <= 1e-12 * direct.abs().max(1.0), "{direct} vs {voigt}");
        }
    }
}

#[test]
fn laminate_phase_is_rank_one_in_tangential_strain() {
    // The layer normal to v only resists strain along its tangent t, with
    // the plane-strain modulus 4 mu (mu + lambda) / (2 mu + lambda).
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lame = reference();
    let (l, m) = (lame.lambda, lame.mu);
    let k = 4.0 * m * (m + l) / (2.0 * m + l);
    for _ in 0..200 {
        let a: f64 = rng.random_range(0.0..2.0 * PI);
        let (v, t) = ([a.cos(), a.sin()], [-a.sin(), a.cos()]);
        let ac = laminate_phase_tensor(&lame, v).unwrap();
        let e: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let tangential = e[0] * t[0] * t[0] + e[1] * t[1] * t[1] + e[2] * t[0] * t[1];
        assert!((ac.quad_form(e) - k * tangential * tangential).abs() < 1e-13);
    }
}

fn random_spd(rng: &mut ChaCha8Rng) -> VoigtTensor {
    let mut b = [[0.0; 3]; 3];
    b.iter_mut().flatten().for_each(|x| *x = rng.random_range(-1.0..1.0));
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| b[i][k] * b[j][k]).sum::<f64>() + if i == j { 0.5 } else { 0.0 };
        }
    }
    VoigtTensor::new(m)
}

/// Adjugate and LU inverses agree to 1e-12 relative on well-conditioned
/// matrices. On homogenised tensors, whose regularised shear mode makes them
/// ill-conditioned, both routes are only accurate to a multiple of
/// `cond · eps`.
#[test]
fn adjugate_inverse_matches_lu() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lame = reference();
    let mut general = 0;
    for _ in 0..1000 {
        let g = random_spd(&mut rng);
        let lu = lu_inverse(&g);
        assert!(max_abs_diff(&g.inverse().unwrap().0, &lu) <= 1e-12 * max_abs(&lu));

        let mut m = [[0.0; 3]; 3];
        m.iter_mut().flatten().for_each(|x| *x = rng.random_range(-1.0..1.0));
        let g = VoigtTensor::new(m);
        if g.determinant().abs() > 0.1 {
            general += 1;
            let lu = lu_inverse(&g);
            assert!(max_abs_diff(&g.inverse().unwrap().0, &lu) <= 1e-12 * max_abs(&lu));
        }

        let s: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let theta: f64 = rng.random_range(0.05..1.0);
        let a = homogenised_from_stress(&lame, theta, &eigen_2x2_symmetric(s[0], s[1], s[2])).unwrap();
        let lu = lu_inverse(&a);
        let cond = max_abs(&lu) * max_abs(&a.0);
        assert!(max_abs_diff(&a.inverse().unwrap().0, &lu) <= 100.0 * f64::EPSILON * cond * max_abs(&lu));
    }
    assert!(general > 300);
}

#[test]
fn full_density_returns_base_tensor() {
    let lame = reference();
    let base = base_tensor(&lame);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let s: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let a = homogenised_from_stress(&lame, 1.0, &eigen_2x2_symmetric(s[0], s[1], s[2])).unwrap();
        assert!(max_abs_diff(&a.0, &base.0) <= 1e-13);
    }
}

/// Hashin–Shtrikman moduli evaluated in double-double arithmetic.
fn hs_extended(lame: &LameCoefficients, theta_bar: f64) -> (f64, f64) {
    #[derive(Clone, Copy)]
    struct Dd(f64, f64);
    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        Dd(s, (a - (s - bb)) + (b - bb))
    }
    fn add(a: Dd, b: Dd) -> Dd {
        let s = two_sum(a.0, b.0);
        let t = s.1 + a.1 + b.1;
        two_sum(s.0, t)
    }
    fn mul(a: Dd, b: Dd) -> Dd {
        let p = a.0 * b.0;
        let e = a.0.mul_add(b.0, -p) + a.0 * b.1 + a.1 * b.0;
        two_sum(p, e)
    }
    fn div(a: Dd, b: Dd) -> Dd {
        let q = a.0 / b.0;
        let r = add(a, mul(Dd(-q, 0.0), b));
        add(Dd(q, 0.0), Dd(r.0 / b.0, 0.0))
    }
    let d = |x: f64| Dd(x, 0.0);
    let (l, m, t) = (d(lame.lambda), d(lame.mu), d(theta_bar));
    let void = add(d(1.0), Dd(-theta_bar, 0.0));
    let ml = add(m, l);
    let shear_den = add(ml, mul(void, add(mul(d(3.0), m), l)));
    let num = mul(t, mul(m, ml));
    let mu_eff = div(num, shear_den);
    let lam_eff = div(mul(num, add(l, mul(d(2.0), mul(void, m)))), mul(shear_den, add(m, mul(void, ml))));
    (lam_eff.0 + lam_eff.1, mu_eff.0 + mu_eff.1)
}

#[test]
fn hashin_shtrikman_matches_extended_precision() {
    let lame = reference();
    for k in 1..=100 {
        let t = k as f64 / 100.0;
        let (l, m) = hashin_shtrikman_moduli(&lame, t).unwrap();
        let (le, me) = hs_extended(&lame, t);
        assert!((l - le).abs() <= 1e-14 * le.abs().max(1e-3), "lambda at {t}");
        assert!((m - me).abs() <= 1e-14 * me.abs(), "mu at {t}");
    }
}

#[test]
fn hashin_shtrikman_initial_tensor_is_spd() {
    let a = hashin_shtrikman_tensor(&reference(), 0.4).unwrap();
    assert!(a.min_eigenvalue() > 0.0);
    assert!(a[(0, 0)] < base_tensor(&reference())[(0, 0)]);
}

fn rotated_stress(l1: f64, l2: f64, angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    [l1 * c * c + l2 * s * s, l1 * s * s + l2 * c * c, (l1 - l2) * s * c]
}

proptest! {
    #[test]
    fn homogenised_tensor_spd_and_symmetric(
        l1 in -2.0f64..2.0, l2 in -2.0f64..2.0, angle in 0.0f64..PI, theta in THETA_MIN..1.0f64,
    ) {
        prop_assume!(l1.abs() + l2.abs() > 1e-6);
        let s = rotated_stress(l1, l2, angle);
        let a = homogenised_from_stress(&reference(), theta, &eigen_2x2_symmetric(s[0], s[1], s[2])).unwrap();
        prop_assert!(a.is_symmetric(1e-13));
        prop_assert!(a.min_eigenvalue() > 0.0);
    }

    #[test]
    fn homogenised_tensor_softer_than_base(
        l1 in -2.0f64..2.0, l2 in -2.0f64..2.0, angle in 0.0f64..PI, theta in 0.01f64..1.0,
        e in proptest::array::uniform3(-1.0f64..1.0),
    ) {
        prop_assume!(l1.abs() + l2.abs() > 1e-6);
        let lame = reference();
        let s = rotated_stress(l1, l2, angle);
        let a = homogenised_from_stress(&lame, theta, &eigen_2x2_symmetric(s[0], s[1], s[2])).unwrap();
        prop_assert!(a.quad_form(e) <= base_tensor(&lame).quad_form(e) * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn eigen_decomposition_reconstructs(s11 in -3.0f64..3.0, s22 in -3.0f64..3.0, s12 in -3.0f64..3.0) {
        let e = eigen_2x2_symmetric(s11, s22, s12);
        let mut r = [0.0; 3];
        for k in 0..2 {
            let (l, v) = (e.values[k], e.vectors[k]);
            r[0] += l * v[0] * v[0];
            r[1] += l * v[1] * v[1];
            r[2] += l * v[0] * v[1];
        }
        let scale = s11.abs().max(s22.abs()).max(s12.abs()).max(1.0);
        prop_assert!((r[0] - s11).abs() < 1e-13 * scale);
        prop_assert!((r[1] - s22).abs() < 1e-13 * scale);
        prop_assert!((r[2] - s12).abs() < 1e-13 * scale);
        prop_assert!(e.values[0].abs() >= e.values[1].abs());
        let dot = e.vectors[0][0] * e.vectors[1][0] + e.vectors[0][1] * e.vectors[1][1];
        prop_assert!(dot.abs() < 1e-14);
    }

    #[test]
    fn proportions_sum_to_one(a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let p = laminate_proportions(&eigen_2x2_symmetric(a, b, 0.0));
        prop_assert!((p.m1 + p.m2 - 1.0).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&p.m1));
    }

    #[test]
    fn optimal_theta_in_bounds_and_monotone(
        s in proptest::array::uniform3(-2.0f64..2.0), gamma in 1e-3f64..1e3, k in 1.0f64..4.0,
    ) {
        let lame = reference();
        let e = eigen_2x2_symmetric(s[0], s[1], s[2]);
        let t = optimal_theta(&e, gamma, &lame).unwrap();
        prop_assert!((THETA_MIN..=1.0).contains(&t));
        // A larger penalty never raises the density.
        prop_assert!(optimal_theta(&e, gamma * k, &lame).unwrap() <= t);
    }

    #[test]
    fn penalisation_pushes_towards_extremes(theta in 0.0f64..=1.0) {
        let p = penalise_theta(theta).unwrap();
        prop_assert!((THETA_MIN..=1.0).contains(&p));
        if theta < 0.5 {
            prop_assert!(p <= theta.max(THETA_MIN));
        } else {
            prop_assert!(p >= theta - 1e-15);
        }
    }

    #[test]
    fn homogenised_tensor_rejects_out_of_range_density(theta in prop_oneof![-1.0f64..=0.0, 1.0001f64..2.0]) {
        let lame = reference();
        let e = eigen_2x2_symmetric(1.0, 0.5, 0.0);
        let ac1 = laminate_phase_tensor(&lame, e.vectors[0]).unwrap();
        let ac2 = laminate_phase_tensor(&lame, e.vectors[1]).unwrap();
        prop_assert!(homogenised_tensor(theta, &laminate_proportions(&e), &ac1, &ac2, &base_tensor(&lame)).is_err());
    }
}
