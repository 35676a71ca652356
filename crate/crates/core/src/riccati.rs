//! The two Riccati maps behind the estimator synthesis.
//!
//! * The **Q-map** `(K, M, q) ↦ (Q, S, L)` gives the worst-case noise shaping
//!   filter against the estimator with gains `(K, M)`:
//!
//!   ```text
//!   Q = (A-KC)ᵀ Q (A-KC) + q (Φ-MC)ᵀ(Φ-MC) + Lᵀ S⁻¹ L
//!   S = (I - (B-KD)ᵀ Q (B-KD) - q (Ψ-MD)ᵀ(Ψ-MD))⁻¹
//!   L = S ((B-KD)ᵀ Q (A-KC) + q (Ψ-MD)ᵀ(Φ-MC))
//!   ```
//!
//!   It is well posed for `0 ≤ q < θ = ‖Δ_{K,M}‖∞⁻²`.
//!
//! * The **P-map** `(S, L) ↦ (P, T, K, M)` gives the mean-square optimal
//!   estimator against the shaping filter `w = L x̃ + √S v`:
//!
//!   ```text
//!   P = (A+BL) P (A+BL)ᵀ + B S Bᵀ - K T Kᵀ
//!   T = (C+DL) P (C+DL)ᵀ + D S Dᵀ
//!   K = ((A+BL) P (C+DL)ᵀ + B S Dᵀ) T⁻¹
//!   M = ((Φ+ΨL) P (C+DL)ᵀ + Ψ S Dᵀ) T⁻¹
//!   ```
//!
//! Both equations are solved by iterating their defining map from zero,
//! evaluated with the doubling recursion, then checked for admissibility.
//! The P-equation result is finished with Newton steps, since the iteration
//! from zero can stall below the stabilizing solution when `B S Bᵀ` is
//! singular after the cross term is removed (for example `m = p`).

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::statespace::{self, is_stable_radius, PlantModel, Realization};
use crate::synthesis::{build_error_operator, EstimatorGains, ShapingParams};

const DOUBLING_TOL: f64 = 1e-15;
const MAX_DOUBLINGS: usize = 80;
const FIXED_POINT_TOL: f64 = 1e-11;
const FIXED_POINT_CAP: usize = 100_000;
const NEWTON_STEPS: usize = 50;
/// Relative accuracy used for `θ` evaluations.
pub const THETA_TOL: f64 = 1e-10;

/// Admissible solution of the Q-equation together with `S` and `L`.
#[derive(Debug, Clone)]
pub struct QSolution {
    pub q: f64,
    pub q_matrix: Mat,
    pub s: Mat,
    pub l: Mat,
    /// Relative residual of the Q-equation.
    pub residual: f64,
    /// Spectral radius of `A - KC + (B - KD) L`.
    pub closed_loop_radius: f64,
}

/// Admissible solution of the P-equation together with `T`, `K`, `M`.
#[derive(Debug, Clone)]
pub struct PSolution {
    pub p: Mat,
    pub t: Mat,
    pub k: Mat,
    pub m: Mat,
    pub residual: f64,
    /// Spectral radius of `A - KC`; the estimator is admissible only if it is below one.
    pub gain_radius: f64,
}

impl PSolution {
    pub fn gains(&self) -> EstimatorGains {
        EstimatorGains {
            k: self.k.clone(),
            m: self.m.clone(),
        }
    }

    pub fn gain_admissible(&self) -> bool {
        is_stable_radius(self.gain_radius)
    }
}

/// `θ = ‖Δ‖∞⁻²` of an error operator, `+∞` when the operator vanishes.
pub fn theta_of(delta: &Realization) -> Result<f64> {
    let peak = statespace::hinf_norm(delta, THETA_TOL)?;
    if peak == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(1.0 / (peak * peak))
    }
}

/// `θ_{K,M}` for the estimator with gains `(K, M)`.
pub fn theta_bound(plant: &PlantModel, gains: &EstimatorGains) -> Result<f64> {
    theta_of(&build_error_operator(plant, gains)?)
}

/// Solves the Q-equation for the estimator `(K, M)` at parameter `q`.
pub fn solve_q_dare(plant: &PlantModel, gains: &EstimatorGains, q: f64) -> Result<QSolution> {
    let delta = build_error_operator(plant, gains)?;
    let theta = theta_of(&delta)?;
    if !(q >= 0.0) || q >= theta {
        return Err(Error::QOutOfRange { q, theta });
    }
    worst_case_dare(&delta, q)
}

/// The Q-equation written directly on a stable realization `(Ā, B̄, C̄, D̄)`
/// standing in for the error operator.
///
/// The caller is responsible for `q < ‖sys‖∞⁻²`; beyond that the iteration
/// diverges or lands on a non-admissible solution, both reported as
/// [`Error::QOutOfRange`].
pub fn worst_case_dare(sys: &Realization, q: f64) -> Result<QSolution> {
    sys.require_stable("error operator")?;
    let n = sys.states();
    let m = sys.inputs();
    if q == 0.0 {
        return Ok(QSolution {
            q,
            q_matrix: Mat::zeros(n, n),
            s: Mat::identity(m, m),
            l: Mat::zeros(m, n),
            residual: 0.0,
            closed_loop_radius: sys.spectral_radius(),
        });
    }
    let out_of_range = || Error::QOutOfRange {
        q,
        theta: f64::NAN,
    };
    if !(q > 0.0) {
        return Err(out_of_range());
    }
    let (a, b, c, d) = (&sys.a, &sys.b, &sys.c, &sys.d);

    // eliminate the cross term through R = I - q D̄ᵀD̄
    let r = Mat::identity(m, m) - d.transpose() * d * q;
    if !linalg::is_positive_definite(&r) {
        return Err(out_of_range());
    }
    let r_inv = linalg::inverse(&r, "I - q DᵀD")?;
    let cross = &r_inv * d.transpose() * c * q;
    let a_hat = a + b * &cross;
    let h = c.transpose() * c * q + c.transpose() * d * &cross * q;
    let g = -(b * &r_inv * b.transpose());

    let q_matrix = match linalg::doubling_riccati(&a_hat, &g, &h, DOUBLING_TOL, MAX_DOUBLINGS) {
        Ok(run) => run.solution,
        Err(_) => return Err(out_of_range()),
    };

    let s_inv = Mat::identity(m, m) - b.transpose() * &q_matrix * b - d.transpose() * d * q;
    if !linalg::is_positive_definite(&s_inv) {
        return Err(out_of_range());
    }
    let s = linalg::symmetrize(&linalg::inverse(&s_inv, "S⁻¹")?);
    let l = &s * (b.transpose() * &q_matrix * a + d.transpose() * c * q);
    let closed_loop_radius = linalg::spectral_radius(&(a + b * &l));
    if !is_stable_radius(closed_loop_radius) {
        return Err(out_of_range());
    }
    let min_eig = linalg::sym_eigenvalues(&q_matrix)
        .first()
        .copied()
        .unwrap_or(0.0);
    if min_eig < -1e-9 * (1.0 + q_matrix.norm()) {
        return Err(out_of_range());
    }
    let residual = q_equation_residual(sys, q, &q_matrix, &s, &l);
    Ok(QSolution {
        q,
        q_matrix,
        s,
        l,
        residual,
        closed_loop_radius,
    })
}

/// Relative residual `‖Q - RHS(Q)‖ / (1 + ‖Q‖)` of the Q-equation.
pub fn q_equation_residual(sys: &Realization, q: f64, q_matrix: &Mat, s: &Mat, l: &Mat) -> f64 {
    let s_inv = match linalg::inverse(s, "S") {
        Ok(v) => v,
        Err(_) => return f64::INFINITY,
    };
    let rhs = sys.a.transpose() * q_matrix * &sys.a
        + sys.c.transpose() * &sys.c * q
        + l.transpose() * s_inv * l;
    (q_matrix - rhs).norm() / (1.0 + q_matrix.norm())
}

/// Stabilizing solution of a filtering Riccati equation.
#[derive(Debug, Clone)]
pub struct FilterDare {
    pub p: Mat,
    /// Innovation covariance `C P Cᵀ + R`.
    pub t: Mat,
    /// Predictor gain `(A P Cᵀ + N) T⁻¹`.
    pub gain: Mat,
    pub residual: f64,
}

/// Solves `P = A P Aᵀ + W - (A P Cᵀ + N)(C P Cᵀ + V)⁻¹(A P Cᵀ + N)ᵀ` for its
/// stabilizing solution (`A - gain·C` stable).
///
/// `W`, `V`, `N` are the state, measurement and cross covariances of the
/// driving noise.
pub fn filter_dare(a: &Mat, c: &Mat, w: &Mat, v: &Mat, cross: &Mat) -> Result<FilterDare> {
    let n = a.nrows();
    let first_try = if linalg::is_positive_definite(v) {
        filter_dare_doubling(a, c, w, v, cross).ok()
    } else {
        None
    };
    let p = match first_try {
        Some(p) => p,
        None => {
            // recursion from above: stationary covariance when A is stable,
            // a generous multiple of I otherwise
            let start = statespace::dlyap(a, w, false).unwrap_or_else(|_| {
                Mat::identity(n, n) * (1.0 + w.norm()) * 1e3
            });
            filter_dare_recursion(a, c, w, v, cross, start)?
        }
    };
    let p = filter_dare_newton(a, c, w, v, cross, p)?;
    let t = linalg::symmetrize(&(c * &p * c.transpose() + v));
    let t_inv = linalg::inverse(&t, "innovation covariance")?;
    let gain = (a * &p * c.transpose() + cross) * &t_inv;
    let radius = linalg::spectral_radius(&(a - &gain * c));
    if !is_stable_radius(radius) {
        return Err(Error::InadmissibleShaping(format!(
            "filtering Riccati equation has no stabilizing solution (closed-loop radius {radius:.6})"
        )));
    }
    let rhs = a * &p * a.transpose() + w - &gain * &t * gain.transpose();
    let residual = (&p - rhs).norm() / (1.0 + p.norm());
    Ok(FilterDare { p, t, gain, residual })
}

fn filter_dare_doubling(a: &Mat, c: &Mat, w: &Mat, v: &Mat, cross: &Mat) -> Result<Mat> {
    let v_inv = linalg::inverse(v, "measurement covariance")?;
    let a_tilde = a - cross * &v_inv * c;
    let w_tilde = linalg::symmetrize(&(w - cross * &v_inv * cross.transpose()));
    let g = c.transpose() * &v_inv * c;
    let run = linalg::doubling_riccati(&a_tilde.transpose(), &g, &w_tilde, DOUBLING_TOL, MAX_DOUBLINGS)?;
    let p = run.solution;
    let t = c * &p * c.transpose() + v;
    let gain = (a * &p * c.transpose() + cross) * linalg::inverse(&t, "innovation covariance")?;
    if is_stable_radius(linalg::spectral_radius(&(a - gain * c))) {
        Ok(p)
    } else {
        Err(Error::InadmissibleShaping(
            "doubling reached a non-stabilizing solution".into(),
        ))
    }
}

fn predictor_gain(a: &Mat, c: &Mat, v: &Mat, cross: &Mat, p: &Mat) -> Result<Mat> {
    let t = linalg::symmetrize(&(c * p * c.transpose() + v));
    Ok((a * p * c.transpose() + cross) * linalg::inverse(&t, "innovation covariance")?)
}

/// Hewer's iteration from the gain of `p`: each step solves the Lyapunov
/// equation of the current gain. From any stabilizing gain the iterates
/// decrease monotonically to the stabilizing solution.
fn filter_dare_newton(a: &Mat, c: &Mat, w: &Mat, v: &Mat, cross: &Mat, mut p: Mat) -> Result<Mat> {
    let mut gain = predictor_gain(a, c, v, cross, &p)?;
    if !is_stable_radius(linalg::spectral_radius(&(a - &gain * c))) {
        return Ok(p);
    }
    for _ in 0..NEWTON_STEPS {
        let closed = a - &gain * c;
        let rhs = linalg::symmetrize(
            &(w - &gain * cross.transpose() - cross * gain.transpose() + &gain * v * gain.transpose()),
        );
        let next = linalg::symmetrize(&statespace::dlyap(&closed, &rhs, false)?);
        let step = (&next - &p).norm() / (1.0 + next.norm());
        p = next;
        gain = predictor_gain(a, c, v, cross, &p)?;
        if step <= DOUBLING_TOL {
            break;
        }
    }
    Ok(p)
}

fn filter_dare_recursion(
    a: &Mat,
    c: &Mat,
    w: &Mat,
    v: &Mat,
    cross: &Mat,
    start: Mat,
) -> Result<Mat> {
    let mut p = start;
    let mut residual = f64::INFINITY;
    for _ in 0..FIXED_POINT_CAP {
        let t = c * &p * c.transpose() + v;
        let t_inv = linalg::inverse(&t, "innovation covariance")?;
        let gain = (a * &p * c.transpose() + cross) * &t_inv;
        let next = linalg::symmetrize(&(a * &p * a.transpose() + w - &gain * &t * gain.transpose()));
        residual = (&next - &p).norm() / (1.0 + next.norm());
        p = next;
        if residual <= FIXED_POINT_TOL * 1e-3 {
            return Ok(p);
        }
    }
    if residual <= FIXED_POINT_TOL {
        Ok(p)
    } else {
        Err(Error::NoConvergence {
            solver: "filtering Riccati recursion",
            iterations: FIXED_POINT_CAP,
            residual,
        })
    }
}

/// Solves the P-equation: the mean-square optimal estimator against the
/// shaping filter with parameters `(S, L)`.
pub fn solve_p_dare(plant: &PlantModel, shaping: &ShapingParams) -> Result<PSolution> {
    let (s, l) = (&shaping.s, &shaping.l);
    let m = plant.disturbances();
    if s.shape() != (m, m) || l.shape() != (m, plant.states()) {
        return Err(Error::Dimension(format!(
            "shaping parameters S {}x{}, L {}x{} do not fit m = {m}, n = {}",
            s.nrows(),
            s.ncols(),
            l.nrows(),
            l.ncols(),
            plant.states()
        )));
    }
    if !linalg::is_positive_definite(s) {
        return Err(Error::InadmissibleShaping("S is not positive definite".into()));
    }
    let a_bar = &plant.a + &plant.b * l;
    let c_bar = &plant.c + &plant.d * l;
    let phi_bar = &plant.phi + &plant.psi * l;
    let w = &plant.b * s * plant.b.transpose();
    let v = &plant.d * s * plant.d.transpose();
    let cross = &plant.b * s * plant.d.transpose();
    if !linalg::is_positive_definite(&v) {
        return Err(Error::Singular("D S Dᵀ (D must have full row rank)".into()));
    }
    let sol = filter_dare(&a_bar, &c_bar, &w, &v, &cross)?;
    let t_inv = linalg::inverse(&sol.t, "T")?;
    let m_gain = (&phi_bar * &sol.p * c_bar.transpose() + &plant.psi * s * plant.d.transpose()) * t_inv;
    let gain_radius = linalg::spectral_radius(&(&plant.a - &sol.gain * &plant.c));
    Ok(PSolution {
        p: sol.p,
        t: sol.t,
        k: sol.gain,
        m: m_gain,
        residual: sol.residual,
        gain_radius,
    })
}
