//! Independent oracles and fixtures shared by the integration tests.
//!
//! Nothing here calls the library solvers: the recursions are the plain
//! textbook iterations, and frequency-domain quantities are sampled directly.

#![allow(dead_code)]

use anisofilt::{EstimatorGains, Mat, PlantModel, Realization};
use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type CMat = DMatrix<Complex<f64>>;

pub fn reference_plant() -> PlantModel {
    PlantModel::scalar(0.5, 1.0, 1.0, 1.0, 1.0, 0.0)
}

/// Scalar plant whose Kalman estimator leaves a nonzero error operator.
pub fn scalar_test_plant() -> PlantModel {
    PlantModel::scalar(0.5, 1.0, 1.0, 0.5, 1.0, 0.0)
}

/// Two states, two disturbances, one measurement, one target.
pub fn mimo_test_plant() -> PlantModel {
    PlantModel::new(
        Mat::from_row_slice(2, 2, &[0.6, 0.2, -0.1, 0.4]),
        Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 0.5]),
        Mat::from_row_slice(1, 2, &[1.0, 0.5]),
        Mat::from_row_slice(1, 2, &[0.4, 0.3]),
        Mat::from_row_slice(1, 2, &[0.0, 1.0]),
        Mat::from_row_slice(1, 2, &[0.2, 0.0]),
    )
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| normal(rng))
}

fn radius(a: &Mat) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Random stable matrix with spectral radius drawn from `[0.1, max_radius]`.
pub fn random_stable(rng: &mut ChaCha8Rng, n: usize, max_radius: f64) -> Mat {
    let a = random_matrix(rng, n, n);
    let rho = radius(&a);
    let target = rng.random_range(0.1..=max_radius);
    if rho == 0.0 {
        a
    } else {
        a * (target / rho)
    }
}

/// Random valid plant with all dimensions at most 4 and `ρ(A) ≤ 0.9`.
pub fn random_plant(rng: &mut ChaCha8Rng) -> PlantModel {
    let n = rng.random_range(1..=4);
    let m = rng.random_range(1..=4);
    let p = rng.random_range(1..=m);
    let r = rng.random_range(1..=4);
    let a = random_stable(rng, n, 0.9);
    let d = loop {
        let d = random_matrix(rng, p, m);
        let smin = d.singular_values().iter().copied().fold(f64::INFINITY, f64::min);
        if smin > 0.2 {
            break d;
        }
    };
    PlantModel::new(
        a,
        random_matrix(rng, n, m),
        random_matrix(rng, p, n),
        d,
        random_matrix(rng, r, n),
        random_matrix(rng, r, m) * 0.5,
    )
    .unwrap()
}

/// Random gains with `ρ(A - KC) ≤ 0.95`.
pub fn random_admissible_gains(rng: &mut ChaCha8Rng, plant: &PlantModel) -> EstimatorGains {
    let (n, p, r) = (plant.states(), plant.measurements(), plant.targets());
    let mut scale = 0.5;
    loop {
        let k = random_matrix(rng, n, p) * scale;
        if radius(&(&plant.a - &k * &plant.c)) <= 0.95 {
            return EstimatorGains {
                k,
                m: random_matrix(rng, r, p),
            };
        }
        scale *= 0.7;
    }
}

fn solve(a: &Mat, b: &Mat) -> Mat {
    a.clone().lu().solve(b).expect("nonsingular")
}

fn inv(a: &Mat) -> Mat {
    a.clone().try_inverse().expect("nonsingular")
}

/// `Σ_k Aᵏ W Aᵏᵀ` summed until the terms vanish.
pub fn stationary_covariance(a: &Mat, w: &Mat) -> Mat {
    let mut x = w.clone();
    let mut term = w.clone();
    for _ in 0..100_000 {
        term = a * &term * a.transpose();
        x += &term;
        if term.norm() <= 1e-17 * (1.0 + x.norm()) {
            break;
        }
    }
    x
}

/// Kalman gains from the Riccati difference equation started at the
/// stationary state covariance (the prior of a filter switched on at a
/// random time).
pub fn kalman_recursion(plant: &PlantModel, steps: usize) -> EstimatorGains {
    let (a, b, c, d) = (&plant.a, &plant.b, &plant.c, &plant.d);
    let w = b * b.transpose();
    let v = d * d.transpose();
    let nc = b * d.transpose();
    let mut p = stationary_covariance(a, &w);
    for _ in 0..steps {
        let t = c * &p * c.transpose() + &v;
        let g = a * &p * c.transpose() + &nc;
        let next = a * &p * a.transpose() + &w - &g * solve(&t, &g.transpose());
        p = (&next + next.transpose()) * 0.5;
    }
    let t_inv = inv(&(c * &p * c.transpose() + &v));
    EstimatorGains {
        k: (a * &p * c.transpose() + &nc) * &t_inv,
        m: (&plant.phi * &p * c.transpose() + &plant.psi * d.transpose()) * &t_inv,
    }
}

/// Plain fixed-point iteration of the worst-case-noise Riccati map from `Q = 0`.
pub fn q_fixed_point(delta: &Realization, q: f64, tol: f64, max_iter: usize) -> (Mat, Mat, Mat) {
    let (a, b, c, d) = (&delta.a, &delta.b, &delta.c, &delta.d);
    let m = b.ncols();
    let mut x = Mat::zeros(a.nrows(), a.nrows());
    for _ in 0..max_iter {
        let s = inv(&(Mat::identity(m, m) - b.transpose() * &x * b - d.transpose() * d * q));
        let u = b.transpose() * &x * a + d.transpose() * c * q;
        let next = a.transpose() * &x * a + c.transpose() * c * q + u.transpose() * &s * &u;
        let next = (&next + next.transpose()) * 0.5;
        let step = (&next - &x).norm();
        x = next;
        if step <= tol * (1.0 + x.norm()) {
            break;
        }
    }
    let s = inv(&(Mat::identity(m, m) - b.transpose() * &x * b - d.transpose() * d * q));
    let l = &s * (b.transpose() * &x * a + d.transpose() * c * q);
    (x, s, l)
}

/// Filter Riccati difference equation for the plant driven by `w = L x̃ + √S v`,
/// started well above the stabilizing solution.
pub fn p_recursion(plant: &PlantModel, s: &Mat, l: &Mat, steps: usize) -> (Mat, EstimatorGains) {
    let a = &plant.a + &plant.b * l;
    let c = &plant.c + &plant.d * l;
    let w = &plant.b * s * plant.b.transpose();
    let v = &plant.d * s * plant.d.transpose();
    let nc = &plant.b * s * plant.d.transpose();
    let n = plant.states();
    let mut p = Mat::identity(n, n) * (100.0 * (1.0 + w.norm()));
    for _ in 0..steps {
        let t = &c * &p * c.transpose() + &v;
        let g = &a * &p * c.transpose() + &nc;
        let next = &a * &p * a.transpose() + &w - &g * solve(&t, &g.transpose());
        p = (&next + next.transpose()) * 0.5;
    }
    let t_inv = inv(&(&c * &p * c.transpose() + &v));
    let gains = EstimatorGains {
        k: (&a * &p * c.transpose() + &nc) * &t_inv,
        m: ((&plant.phi + &plant.psi * l) * &p * c.transpose()
            + &plant.psi * s * plant.d.transpose())
            * &t_inv,
    };
    (p, gains)
}

fn complex(x: &Mat) -> CMat {
    x.map(|v| Complex::new(v, 0.0))
}

/// `D + z C (I - z A)⁻¹ B` at `z = e^{iω}`.
pub fn response(sys: &Realization, omega: f64) -> CMat {
    let n = sys.a.nrows();
    let z = Complex::from_polar(1.0, omega);
    if n == 0 {
        return complex(&sys.d);
    }
    let resolvent = CMat::identity(n, n) - complex(&sys.a) * z;
    let x = resolvent.lu().solve(&complex(&sys.b)).expect("stable system");
    complex(&sys.d) + complex(&sys.c) * x * z
}

fn grid(points: usize) -> impl Iterator<Item = f64> {
    (0..points).map(move |k| -std::f64::consts::PI + std::f64::consts::TAU * k as f64 / points as f64)
}

/// Largest singular value over an equispaced grid.
pub fn grid_hinf(sys: &Realization, points: usize) -> f64 {
    grid(points)
        .map(|w| response(sys, w).singular_values().iter().copied().fold(0.0, f64::max))
        .fold(0.0, f64::max)
}

/// Squared H2 norm by trapezoid quadrature of `tr(Ĝ Ĝ*)`.
pub fn quadrature_h2_squared(sys: &Realization, points: usize) -> f64 {
    grid(points)
        .map(|w| response(sys, w).norm_squared())
        .sum::<f64>()
        / points as f64
}

/// Mean anisotropy `-½ ⟨ln det(m Ĝ Ĝ* / ‖G‖₂²)⟩` by trapezoid quadrature.
pub fn quadrature_anisotropy(sys: &Realization, points: usize) -> f64 {
    let m = sys.b.ncols() as f64;
    let spectra: Vec<CMat> = grid(points)
        .map(|w| {
            let g = response(sys, w);
            &g * g.adjoint()
        })
        .collect();
    let power = spectra.iter().map(|s| s.trace().re).sum::<f64>() / points as f64;
    let mean_log_det = spectra
        .iter()
        .map(|s| (s * Complex::new(m / power, 0.0)).determinant().re.ln())
        .sum::<f64>()
        / points as f64;
    -0.5 * mean_log_det
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).abs().max()
}
