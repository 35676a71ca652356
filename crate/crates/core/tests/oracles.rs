mod common;

use anisofilt::anisotropy::{anisotropic_norm, curve_point, curve_point_of};
use anisofilt::riccati::{solve_q_dare, theta_bound, theta_of};
use anisofilt::statespace::{h2_norm, hinf_norm};
use anisofilt::synthesis::{
    build_error_operator, build_estimator, kalman_baseline, synthesize, verify_saddle,
};
use anisofilt::{Error, EstimatorGains, Mat, PlantModel, Realization, SynthesisOptions};
use approx::assert_relative_eq;

use common::*;

fn one(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

fn scalar(a: f64, b: f64, c: f64, d: f64) -> Realization {
    Realization::new(one(a), one(b), one(c), one(d)).unwrap()
}

/// Brute-force saddle point at fixed `q`: damped alternation of the plain
/// Q and P recursions, warm-started from `start`.
fn brute_saddle(plant: &PlantModel, q: f64, start: &EstimatorGains) -> (EstimatorGains, Mat, Mat, Mat) {
    let mut gains = start.clone();
    for _ in 0..5000 {
        let delta = Realization::new(
            &plant.a - &gains.k * &plant.c,
            &plant.b - &gains.k * &plant.d,
            &plant.phi - &gains.m * &plant.c,
            &plant.psi - &gains.m * &plant.d,
        )
        .unwrap();
        let (_, s, l) = q_fixed_point(&delta, q, 1e-15, 200_000);
        let (p, next) = p_recursion(plant, &s, &l, 400);
        let step = (&next.k - &gains.k).norm() + (&next.m - &gains.m).norm();
        gains = EstimatorGains {
            k: &gains.k + (&next.k - &gains.k) * 0.25,
            m: &gains.m + (&next.m - &gains.m) * 0.25,
        };
        if step < 1e-12 {
            return (gains, s, l, p);
        }
    }
    panic!("brute-force alternation did not settle at q = {q}");
}

/// Mean anisotropy of `w = L x̃ + √S v` assembled by hand and integrated numerically.
fn brute_anisotropy(plant: &PlantModel, gains: &EstimatorGains, s: &Mat, l: &Mat) -> f64 {
    let root = s.clone().cholesky().unwrap().l();
    let a_err = &plant.a - &gains.k * &plant.c;
    let b_err = &plant.b - &gains.k * &plant.d;
    let filter = Realization::new(&a_err + &b_err * l, &b_err * &root, l.clone(), root).unwrap();
    quadrature_anisotropy(&filter, 4096)
}

#[test]
fn synthesis_matches_brute_force_saddle_search() {
    let plant = scalar_test_plant();
    let target = 0.1;
    let sol = synthesize(&plant, target, &SynthesisOptions::default()).unwrap();

    let kalman = kalman_recursion(&plant, 500);
    let (mut lo, mut hi) = (0.0, 3.9);
    let mut warm = kalman.clone();
    let mut found = None;
    for _ in 0..60 {
        let q = 0.5 * (lo + hi);
        let (gains, s, l, _) = brute_saddle(&plant, q, &warm);
        let a = brute_anisotropy(&plant, &gains, &s, &l);
        if a < target {
            lo = q;
            warm = gains.clone();
        } else {
            hi = q;
        }
        found = Some((q, gains));
        if hi - lo < 1e-12 {
            break;
        }
    }
    let (q, gains) = found.unwrap();
    assert_relative_eq!(sol.q, q, max_relative = 1e-7);
    assert_relative_eq!(sol.gains.k[(0, 0)], gains.k[(0, 0)], epsilon = 1e-7);
    assert_relative_eq!(sol.gains.m[(0, 0)], gains.m[(0, 0)], epsilon = 1e-7);
    assert!(sol.residuals.max() < 1e-8, "{:?}", sol.residuals);
}

#[test]
fn optimal_norm_lies_between_kalman_floor_and_hinf_ceiling() {
    for plant in [scalar_test_plant(), mimo_test_plant()] {
        let m = plant.disturbances() as f64;
        let kalman = kalman_baseline(&plant).unwrap();
        let floor = h2_norm(&build_error_operator(&plant, &kalman).unwrap()).unwrap() / m.sqrt();
        let sol = synthesize(&plant, 0.1, &SynthesisOptions::default()).unwrap();
        let ceiling = hinf_norm(&build_error_operator(&plant, &sol.gains).unwrap(), 1e-10).unwrap();
        assert!(floor < sol.anisotropic_norm && sol.anisotropic_norm < ceiling);
    }
}

#[test]
fn kalman_baseline_matches_recursion_on_scalar_plants() {
    for plant in [reference_plant(), scalar_test_plant(), mimo_test_plant()] {
        let lib = kalman_baseline(&plant).unwrap();
        let oracle = kalman_recursion(&plant, 500);
        assert_relative_eq!(lib.k, oracle.k, epsilon = 1e-9);
        assert_relative_eq!(lib.m, oracle.m, epsilon = 1e-9);
    }
    // closed form on the reference plant
    let g = kalman_baseline(&reference_plant()).unwrap();
    assert_relative_eq!(g.k[(0, 0)], 1.0, epsilon = 1e-12);
    assert_relative_eq!(g.m[(0, 0)], 0.0, epsilon = 1e-12);
}

fn sorted_radii(x: &Mat) -> Vec<f64> {
    let mut r: Vec<f64> = x.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    r.sort_by(f64::total_cmp);
    r
}

/// With square invertible `D` the noise is recoverable from `y`, and the
/// steady-state filter poles are the zeros of `C(zI - A)⁻¹B + D` reflected
/// into the unit disc.
#[test]
fn kalman_poles_mirror_unstable_zeros_for_square_d() {
    let mut rng = rng(4242);
    for _ in 0..40 {
        let n = 1 + (rng_index(&mut rng) % 4);
        let m = 1 + (rng_index(&mut rng) % 3);
        let a = random_stable(&mut rng, n, 0.9);
        let b = random_matrix(&mut rng, n, m);
        let c = random_matrix(&mut rng, m, n);
        let d = Mat::identity(m, m) + random_matrix(&mut rng, m, m) * 0.3;
        let zeros = sorted_radii(&(&a - &b * d.clone().try_inverse().unwrap() * &c));
        if zeros.iter().any(|z| (z - 1.0).abs() < 0.02) {
            continue;
        }
        let plant = PlantModel::new(a, b, c, d, Mat::identity(n, n), Mat::zeros(n, m)).unwrap();
        let kalman = kalman_baseline(&plant).unwrap();
        let mut expected: Vec<f64> = zeros.iter().map(|&z| if z > 1.0 { 1.0 / z } else { z }).collect();
        expected.sort_by(f64::total_cmp);
        let poles = sorted_radii(&(&plant.a - &kalman.k * &plant.c));
        for (p, e) in poles.iter().zip(&expected) {
            assert!((p - e).abs() <= 1e-6, "poles {poles:?} expected {expected:?}");
        }
    }
}

fn rng_index(rng: &mut rand_chacha::ChaCha8Rng) -> usize {
    use rand::Rng;
    rng.random_range(0..1000)
}

#[test]
fn kalman_gains_vanish_without_process_noise() {
    let plant = PlantModel::new(
        Mat::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]),
        Mat::zeros(2, 1),
        Mat::from_row_slice(1, 2, &[1.0, 1.0]),
        one(1.0),
        Mat::from_row_slice(1, 2, &[1.0, 0.0]),
        Mat::zeros(1, 1),
    )
    .unwrap();
    let g = kalman_baseline(&plant).unwrap();
    assert!(g.k.norm() < 1e-12 && g.m.norm() < 1e-12);
}

#[test]
fn worst_case_map_matches_fixed_point_on_random_instances() {
    let mut rng = rng(5);
    for _ in 0..10 {
        let plant = random_plant(&mut rng);
        let gains = random_admissible_gains(&mut rng, &plant);
        let theta = theta_bound(&plant, &gains).unwrap();
        let q = 0.3 * theta;
        let lib = solve_q_dare(&plant, &gains, q).unwrap();
        let delta = build_error_operator(&plant, &gains).unwrap();
        let (x, s, l) = q_fixed_point(&delta, q, 1e-15, 200_000);
        assert!(max_abs_diff(&lib.q_matrix, &x) <= 1e-9 * (1.0 + x.norm()));
        assert!(max_abs_diff(&lib.s, &s) <= 1e-9 * (1.0 + s.norm()));
        assert!(max_abs_diff(&lib.l, &l) <= 1e-9 * (1.0 + l.norm()));
    }
}

#[test]
fn q_map_blows_up_towards_theta() {
    let plant = scalar_test_plant();
    let gains = EstimatorGains {
        k: one(0.2),
        m: one(0.1),
    };
    let theta = theta_bound(&plant, &gains).unwrap();
    let mut last = 1.0;
    for frac in [0.5, 0.9, 0.99, 0.999] {
        let s = solve_q_dare(&plant, &gains, frac * theta).unwrap().s[(0, 0)];
        assert!(s > last);
        last = s;
    }
    assert!(matches!(
        solve_q_dare(&plant, &gains, 1.01 * theta),
        Err(Error::QOutOfRange { .. })
    ));
}

#[test]
fn theta_of_unestimated_target() {
    let plant = PlantModel::scalar(0.5, 1.0, 1.0, 1.0, 1.0, 0.0);
    let zero = EstimatorGains::zeros(&plant);
    // Δ at zero gains is (0.5, 1, 1, 0) with peak gain 2
    assert_relative_eq!(theta_bound(&plant, &zero).unwrap(), 0.25, epsilon = 1e-9);
    assert_relative_eq!(
        theta_of(&plant.estimated()).unwrap(),
        grid_hinf(&plant.estimated(), 8192).powi(-2),
        epsilon = 1e-9
    );
}

#[test]
fn curve_point_on_reference_plant_is_trivial() {
    let plant = reference_plant();
    let gains = EstimatorGains {
        k: one(1.0),
        m: one(0.0),
    };
    let pt = curve_point(&plant, &gains, 0.05).unwrap();
    assert_eq!(pt.a, 0.0);
    assert_eq!(pt.norm, 0.0);
}

#[test]
fn curve_point_matches_scalar_oracle() {
    let plant = scalar_test_plant();
    let gains = EstimatorGains {
        k: one(0.8),
        m: one(0.4),
    };
    let delta = build_error_operator(&plant, &gains).unwrap();
    let q = 0.5 * theta_of(&delta).unwrap();
    let pt = curve_point(&plant, &gains, q).unwrap();
    let (_, s, l) = q_fixed_point(&delta, q, 1e-15, 200_000);
    let (s, l) = (s[(0, 0)], l[(0, 0)]);
    // scalar Lyapunov equation for the closed loop a + b l driven by b² s
    let (a, b) = (delta.a[(0, 0)], delta.b[(0, 0)]);
    let p = b * b * s / (1.0 - (a + b * l).powi(2));
    let energy = l * l * p + s;
    assert_relative_eq!(pt.a, -0.5 * (s / energy).ln(), epsilon = 1e-10);
    assert_relative_eq!(pt.norm, ((1.0 - 1.0 / energy) / q).sqrt(), epsilon = 1e-10);
}

#[test]
fn large_level_saturates_towards_hinf() {
    let sys = scalar(0.5, 1.0, 1.0, 0.0);
    // a(q) grows like -¼ ln(θ - q); level 10 lies beyond double precision in q
    match anisotropic_norm(&sys, 10.0, 1e-8) {
        Err(Error::UnreachableAnisotropy { best_a, best_q, .. }) => {
            assert!(best_a > 4.0, "best {best_a}");
            let pt = curve_point_of(&sys, best_q).unwrap();
            assert!((pt.norm - 2.0).abs() <= 0.02 * 2.0, "norm {}", pt.norm);
        }
        other => panic!("expected an unreachable level, got {other:?}"),
    }
    let r = anisotropic_norm(&sys, 3.0, 1e-8).unwrap();
    assert!((r.norm - 2.0).abs() <= 0.02 * 2.0, "norm {}", r.norm);
    // dense q-grid oracle
    let theta = 0.25;
    let peak = (1..=40)
        .map(|k| curve_point_of(&sys, theta * (1.0 - 0.5f64.powi(k))).unwrap().norm)
        .fold(0.0, f64::max);
    assert!(peak <= 2.0 && peak >= 0.98 * 2.0);
}

#[test]
fn level_beyond_the_saddle_family_is_unreachable() {
    // with m = p the family ends at the estimator whose error operator is the
    // constant -0.5; its norm 0.5 is flat in a
    let plant = scalar_test_plant();
    match synthesize(&plant, 0.5, &SynthesisOptions::default()) {
        Err(Error::UnreachableAnisotropy { best_a, best_q, .. }) => {
            assert!(best_a > 0.28 && best_a < 0.3, "best {best_a}");
            assert!(best_q > 3.99 && best_q < 4.0, "q {best_q}");
        }
        other => panic!("expected an unreachable level, got {other:?}"),
    }
    let limit = EstimatorGains {
        k: one(0.5),
        m: one(1.0),
    };
    let delta = build_error_operator(&plant, &limit).unwrap();
    assert_relative_eq!(h2_norm(&delta).unwrap(), 0.5, epsilon = 1e-12);
    assert_relative_eq!(hinf_norm(&delta, 1e-10).unwrap(), 0.5, epsilon = 1e-9);
}

#[test]
fn estimator_realization_by_substitution() {
    let plant = reference_plant();
    let e = build_estimator(
        &plant,
        &EstimatorGains {
            k: one(1.0),
            m: one(0.5),
        },
    )
    .unwrap();
    assert_eq!((e.a[(0, 0)], e.b[(0, 0)], e.c[(0, 0)], e.d[(0, 0)]), (-0.5, 1.0, 0.5, 0.5));
}

#[test]
fn saddle_report_at_zero_radius_is_clean() {
    let plant = mimo_test_plant();
    let sol = synthesize(&plant, 0.2, &SynthesisOptions::default()).unwrap();
    let report = verify_saddle(&plant, &sol, 10, 0.0, 3).unwrap();
    assert!(report.passed());
    assert_eq!(report.seed, 3);
    let report = verify_saddle(&plant, &sol, 50, 0.05, 3).unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn corrupted_shaping_is_flagged_on_the_noise_side() {
    let plant = mimo_test_plant();
    let mut sol = synthesize(&plant, 0.2, &SynthesisOptions::default()).unwrap();
    sol.shaping.l *= 1.1;
    let report = verify_saddle(&plant, &sol, 5, 0.01, 3).unwrap();
    assert!(!report.noise_violations.is_empty());
}
