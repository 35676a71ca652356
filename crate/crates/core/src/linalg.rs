//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;

pub fn spectral_radius(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn symmetrize(x: &Mat) -> Mat {
    (x + x.transpose()) * 0.5
}

pub fn frobenius(x: &Mat) -> f64 {
    x.norm()
}

pub fn identity(n: usize) -> Mat {
    Mat::identity(n, n)
}

pub fn inverse(x: &Mat, what: &str) -> Result<Mat> {
    if x.nrows() == 0 {
        return Ok(x.clone());
    }
    let inv = x
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    if inv.iter().all(|v| v.is_finite()) {
        Ok(inv)
    } else {
        Err(Error::Singular(what.to_string()))
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(x: &Mat) -> Vec<f64> {
    if x.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = symmetrize(x).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn is_positive_definite(x: &Mat) -> bool {
    x.nrows() == 0 || symmetrize(x).cholesky().is_some()
}

/// `f(X)` for symmetric `X`, applied through the eigendecomposition.
fn sym_function(x: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    let eig = symmetrize(x).symmetric_eigen();
    let d = Mat::from_diagonal(&eig.eigenvalues.map(f));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Principal square root of a symmetric positive definite matrix.
pub fn sqrtm_spd(x: &Mat) -> Result<Mat> {
    if !is_positive_definite(x) {
        return Err(Error::InadmissibleShaping(
            "matrix is not symmetric positive definite".into(),
        ));
    }
    Ok(sym_function(x, f64::sqrt))
}

pub fn inv_sqrtm_spd(x: &Mat) -> Result<Mat> {
    if !is_positive_definite(x) {
        return Err(Error::InadmissibleShaping(
            "matrix is not symmetric positive definite".into(),
        ));
    }
    Ok(sym_function(x, |v| 1.0 / v.sqrt()))
}

/// `ln det X` for symmetric positive definite `X`.
pub fn log_det_spd(x: &Mat) -> Option<f64> {
    if x.nrows() == 0 {
        return Some(0.0);
    }
    let chol = symmetrize(x).cholesky()?;
    Some(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

pub fn sigma_max(x: &Mat) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn sigma_max_complex(x: &CMat) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn rank(x: &Mat) -> usize {
    if x.is_empty() {
        return 0;
    }
    let sv = x.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let tol = smax * (x.nrows().max(x.ncols()) as f64) * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol && s > 0.0).count()
}

pub fn to_complex(x: &Mat) -> CMat {
    x.map(|v| Complex64::new(v, 0.0))
}

/// Result of a structure-preserving doubling run.
pub struct Doubling {
    pub solution: Mat,
    pub iterations: usize,
    pub increment: f64,
}

/// Solves `X = Aᵀ X (I + G X)⁻¹ A + H` by doubling.
///
/// After `k` doublings the iterate equals the `2^k`-th iterate of the
/// fixed-point map started at `X = 0`, so the limit is the same one the
/// plain recursion reaches, at quadratic instead of linear speed.
pub fn doubling_riccati(
    a: &Mat,
    g: &Mat,
    h: &Mat,
    tol: f64,
    max_doublings: usize,
) -> Result<Doubling> {
    let n = a.nrows();
    let eye = identity(n);
    let mut ak = a.clone();
    let mut gk = symmetrize(g);
    let mut hk = symmetrize(h);
    let mut increment = f64::INFINITY;
    for k in 1..=max_doublings {
        let w = &eye + &gk * &hk;
        let lu = w.lu();
        let w_inv_a = lu
            .solve(&ak)
            .ok_or_else(|| Error::Singular("I + G H in doubling step".into()))?;
        let w_inv_g = lu
            .solve(&gk)
            .ok_or_else(|| Error::Singular("I + G H in doubling step".into()))?;
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &w_inv_a));
        let g_next = symmetrize(&(&gk + &ak * w_inv_g * ak.transpose()));
        let a_next = &ak * &w_inv_a;
        if !h_next.iter().all(|v| v.is_finite()) {
            return Err(Error::NoConvergence {
                solver: "doubling Riccati iteration",
                iterations: k,
                residual: f64::INFINITY,
            });
        }
        increment = frobenius(&(&h_next - &hk));
        let scale = 1.0 + frobenius(&h_next);
        hk = h_next;
        gk = g_next;
        ak = a_next;
        if increment <= tol * scale {
            return Ok(Doubling {
                solution: hk,
                iterations: k,
                increment,
            });
        }
    }
    Err(Error::NoConvergence {
        solver: "doubling Riccati iteration",
        iterations: max_doublings,
        residual: increment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sqrt_of_spd_squares_back() {
        let x = Mat::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = sqrtm_spd(&x).unwrap();
        assert_relative_eq!(&r * &r, x, epsilon = 1e-12);
        let ri = inv_sqrtm_spd(&x).unwrap();
        assert_relative_eq!(&r * &ri, identity(2), epsilon = 1e-12);
    }

    #[test]
    fn log_det_matches_product_of_eigenvalues() {
        let x = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_relative_eq!(log_det_spd(&x).unwrap(), (1.75f64).ln(), epsilon = 1e-14);
        assert!(log_det_spd(&Mat::from_row_slice(1, 1, &[-1.0])).is_none());
    }

    #[test]
    fn rank_detects_deficiency() {
        let d = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(rank(&d), 1);
        assert_eq!(rank(&identity(3)), 3);
    }

    #[test]
    fn doubling_matches_scalar_fixed_point() {
        // x = a^2 x / (1 + g x) + h with a = 0.9, g = 1, h = 1
        let a = Mat::from_element(1, 1, 0.9);
        let g = Mat::from_element(1, 1, 1.0);
        let h = Mat::from_element(1, 1, 1.0);
        let x = doubling_riccati(&a, &g, &h, 1e-14, 60).unwrap().solution[(0, 0)];
        // g x^2 + (1 - a^2 - g h) x - h = 0
        let (b, c): (f64, f64) = (1.0 - 0.81 - 1.0, -1.0);
        let root = (-b + (b * b - 4.0 * c).sqrt()) / 2.0;
        assert_relative_eq!(x, root, epsilon = 1e-12);
    }
}
