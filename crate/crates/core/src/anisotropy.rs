//! Mean anisotropy of shaping filters and the a-anisotropic norm.
//!
//! For a stable `m × m` shaping filter `G` driven by unit white noise, the
//! mean anisotropy of `W = GV` splits as
//!
//! ```text
//! Ā(G) = -½ ln det(m cov(w₀) / E|w₀|²)          (nonroundness)
//!      + ½ ln det(cov(w₀) Σ⁻¹)                   (colouredness)
//! ```
//!
//! where `Σ = cov(w₀ | past)` is the one-step prediction error covariance,
//! read off the stabilizing solution of the filtering Riccati equation on
//! the filter's own realization.
//!
//! The a-anisotropic norm of a stable system is evaluated through the
//! worst-case Q-equation at parameter `q`: each `q ∈ [0, ‖F‖∞⁻²)` yields a
//! pair `(a(q), |||F|||_{a(q)})` and the level `a` is matched by root finding.

use log::debug;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::riccati::{self, QSolution};
use crate::statespace::{self, PlantModel, Realization};
use crate::synthesis::{build_error_operator, EstimatorGains};

/// Below this `q` the norm formula is replaced by its `q → 0` limit.
const Q_LIMIT: f64 = 1e-12;
const HINF_TOL: f64 = 1e-10;

/// Mean anisotropy and its two nonnegative parts.
///
/// `total` is `f64::INFINITY` for filters that are not of full rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnisotropyBreakdown {
    pub total: f64,
    pub nonroundness: f64,
    pub colouredness: f64,
}

impl AnisotropyBreakdown {
    pub fn infinite() -> Self {
        Self {
            total: f64::INFINITY,
            nonroundness: f64::INFINITY,
            colouredness: f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

fn nearly_singular(x: &Mat) -> bool {
    let ev = linalg::sym_eigenvalues(x);
    match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) => hi <= 0.0 || lo <= 1e-13 * hi,
        _ => false,
    }
}

/// Mean anisotropy of the noise produced by a square shaping filter.
pub fn mean_anisotropy(filter: &Realization) -> Result<AnisotropyBreakdown> {
    let m = filter.inputs();
    if filter.outputs() != m {
        return Err(Error::Dimension(format!(
            "shaping filter must be square, got {}x{}",
            filter.outputs(),
            m
        )));
    }
    filter.require_stable("shaping filter")?;
    let cov = statespace::output_covariance(filter)?;
    let energy = cov.trace();
    if energy <= 0.0 || nearly_singular(&cov) {
        return Ok(AnisotropyBreakdown::infinite());
    }
    let ln_det_cov = match linalg::log_det_spd(&cov) {
        Some(v) => v,
        None => return Ok(AnisotropyBreakdown::infinite()),
    };
    let mf = m as f64;
    let nonroundness = (-0.5 * (ln_det_cov + mf * (mf / energy).ln())).max(0.0);

    let innovation = if filter.states() == 0 {
        &filter.d * filter.d.transpose()
    } else {
        let w = &filter.b * filter.b.transpose();
        let v = &filter.d * filter.d.transpose();
        let cross = &filter.b * filter.d.transpose();
        match riccati::filter_dare(&filter.a, &filter.c, &w, &v, &cross) {
            Ok(sol) => sol.t,
            Err(e) => {
                debug!("innovation covariance unavailable ({e}); treating filter as rank deficient");
                return Ok(AnisotropyBreakdown::infinite());
            }
        }
    };
    if nearly_singular(&innovation) {
        return Ok(AnisotropyBreakdown::infinite());
    }
    let ln_det_innovation = match linalg::log_det_spd(&innovation) {
        Some(v) => v,
        None => return Ok(AnisotropyBreakdown::infinite()),
    };
    let colouredness = (0.5 * (ln_det_cov - ln_det_innovation)).max(0.0);
    Ok(AnisotropyBreakdown {
        total: nonroundness + colouredness,
        nonroundness,
        colouredness,
    })
}

/// One point `(q, a(q), |||Δ|||_{a(q)})` of the anisotropy/norm curve.
#[derive(Debug, Clone)]
pub struct NormCurvePoint {
    pub q: f64,
    pub a: f64,
    pub norm: f64,
    /// `E|w₀|² = tr(L P Lᵀ + S)` under the worst-case filter.
    pub energy: f64,
    /// Covariance of the error-state under the worst-case filter.
    pub p: Mat,
    pub solution: QSolution,
}

/// Curve point for the error operator of the estimator `(K, M)`.
pub fn curve_point(plant: &PlantModel, gains: &EstimatorGains, q: f64) -> Result<NormCurvePoint> {
    let delta = build_error_operator(plant, gains)?;
    let theta = riccati::theta_of(&delta)?;
    if !(q >= 0.0) || q >= theta {
        return Err(Error::QOutOfRange { q, theta });
    }
    curve_point_of(&delta, q)
}

/// Curve point for an arbitrary stable realization standing in for `Δ`.
pub fn curve_point_of(sys: &Realization, q: f64) -> Result<NormCurvePoint> {
    let solution = riccati::worst_case_dare(sys, q)?;
    let p = worst_case_state_covariance(sys, &solution)?;
    let (a, norm, energy) = anisotropy_and_norm(sys, &solution, &p)?;
    Ok(NormCurvePoint {
        q,
        a,
        norm,
        energy,
        p,
        solution,
    })
}

/// `P = cov(x̃₀)` under `w = L x̃ + √S v`.
pub fn worst_case_state_covariance(sys: &Realization, solution: &QSolution) -> Result<Mat> {
    let closed = &sys.a + &sys.b * &solution.l;
    dlyap_or_zero(&closed, &(&sys.b * &solution.s * sys.b.transpose()))
}

fn dlyap_or_zero(a: &Mat, rhs: &Mat) -> Result<Mat> {
    if a.nrows() == 0 {
        Ok(Mat::zeros(0, 0))
    } else {
        statespace::dlyap(a, rhs, false)
    }
}

/// Evaluates `a = -½ ln det(m S / tr(LPLᵀ+S))` and
/// `|||Δ|||_a = sqrt((1 - m / tr(LPLᵀ+S)) / q)` for a given state covariance.
///
/// Both are formed from `tr(LPLᵀ+S) - m` and `ln det S` computed without
/// cancellation, so small `q` keeps full relative accuracy.
pub fn anisotropy_and_norm(sys: &Realization, solution: &QSolution, p: &Mat) -> Result<(f64, f64, f64)> {
    let m = sys.inputs();
    let mf = m as f64;
    let q = solution.q;
    let (s, l) = (&solution.s, &solution.l);
    // S⁻¹ = I - X
    let x = sys.b.transpose() * &solution.q_matrix * &sys.b + sys.d.transpose() * &sys.d * q;
    let ln_det_s: f64 = -linalg::sym_eigenvalues(&x)
        .iter()
        .map(|&v| (-v).ln_1p())
        .sum::<f64>();
    let excess = (l * p * l.transpose()).trace() + (s * &x).trace();
    let energy = mf + excess;
    let a = if q == 0.0 {
        0.0
    } else {
        (0.5 * (mf * (excess / mf).ln_1p() - ln_det_s)).max(0.0)
    };
    let norm = if q < Q_LIMIT {
        statespace::h2_norm(sys)? / mf.sqrt()
    } else {
        (excess.max(0.0) / (q * energy)).sqrt()
    };
    Ok((a, norm, energy))
}

/// Result of [`anisotropic_norm`].
#[derive(Debug, Clone)]
pub struct AnisotropicNorm {
    pub norm: f64,
    pub q: f64,
    /// Level actually attained at `q`.
    pub achieved: f64,
    /// Set when the monotone bracketing precondition failed and a grid scan
    /// (or the degenerate flat case) was used instead.
    pub warning: Option<String>,
}

/// The a-anisotropic norm `|||sys|||_a`, matching `a(q) = a` to within `tol`.
pub fn anisotropic_norm(sys: &Realization, a: f64, tol: f64) -> Result<AnisotropicNorm> {
    if !(a >= 0.0) || !a.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "anisotropy level must be finite and nonnegative, got {a}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    sys.require_stable("system")?;
    let m = sys.inputs() as f64;
    let h2 = statespace::h2_norm(sys)?;
    if a == 0.0 {
        return Ok(AnisotropicNorm {
            norm: h2 / m.sqrt(),
            q: 0.0,
            achieved: 0.0,
            warning: None,
        });
    }
    let hinf = statespace::hinf_norm(sys, HINF_TOL)?;
    if hinf == 0.0 {
        return Ok(AnisotropicNorm {
            norm: 0.0,
            q: 0.0,
            achieved: a,
            warning: Some("zero operator: the anisotropic norm vanishes identically".into()),
        });
    }
    let theta = 1.0 / (hinf * hinf);
    if h2 * h2 / m >= hinf * hinf * (1.0 - 1e-9) {
        // ‖F‖₂/√m = ‖F‖∞ pins every |||F|||_a to the same value
        return Ok(AnisotropicNorm {
            norm: h2 / m.sqrt(),
            q: 0.0,
            achieved: 0.0,
            warning: Some("scaled H2 and H-infinity norms coincide; norm is flat in a".into()),
        });
    }
    let monotone = theta * h2 * h2 < m;
    let eval = |q: f64| curve_point_of(sys, q);
    let bracket = if monotone {
        bracket_monotone(&eval, a, theta)?
    } else {
        bracket_scan(&eval, a, theta)?
    };
    let point = refine(&eval, a, tol, bracket)?;
    Ok(AnisotropicNorm {
        norm: point.norm,
        q: point.q,
        achieved: point.a,
        warning: (!monotone).then(|| {
            "a(q) is not guaranteed monotone (θ‖F‖₂² ≥ m); first crossing of a grid scan used"
                .to_string()
        }),
    })
}

type Bracket = ((f64, f64), (f64, f64));

fn unreachable(target: f64, best: (f64, f64)) -> Error {
    Error::UnreachableAnisotropy {
        target,
        best_a: best.1,
        best_q: best.0,
    }
}

fn bracket_monotone(
    eval: &impl Fn(f64) -> Result<NormCurvePoint>,
    target: f64,
    theta: f64,
) -> Result<Bracket> {
    let mut lo = (0.0, 0.0);
    for k in 1..=52 {
        let q = theta * (1.0 - 0.5f64.powi(k));
        let a = match eval(q) {
            Ok(p) => p.a,
            Err(e) => {
                debug!("curve evaluation failed at q = {q}: {e}");
                break;
            }
        };
        if a >= target {
            return Ok((lo, (q, a)));
        }
        lo = (q, a);
    }
    Err(unreachable(target, lo))
}

fn bracket_scan(
    eval: &impl Fn(f64) -> Result<NormCurvePoint>,
    target: f64,
    theta: f64,
) -> Result<Bracket> {
    let mut grid: Vec<f64> = (1..200).map(|k| theta * k as f64 / 200.0).collect();
    grid.extend((8..=52).map(|k| theta * (1.0 - 0.5f64.powi(k))));
    let mut prev = (0.0, 0.0);
    let mut best = prev;
    for q in grid {
        let a = match eval(q) {
            Ok(p) => p.a,
            Err(_) => break,
        };
        if a > best.1 {
            best = (q, a);
        }
        if a >= target {
            return Ok((prev, (q, a)));
        }
        prev = (q, a);
    }
    Err(unreachable(target, best))
}

fn refine(
    eval: &impl Fn(f64) -> Result<NormCurvePoint>,
    target: f64,
    tol: f64,
    bracket: Bracket,
) -> Result<NormCurvePoint> {
    let ((mut q_lo, mut a_lo), (mut q_hi, mut a_hi)) = bracket;
    let mut best = eval(q_hi)?;
    for _ in 0..200 {
        if (best.a - target).abs() <= tol {
            break;
        }
        let mid = 0.5 * (q_lo + q_hi);
        if mid <= q_lo || mid >= q_hi {
            break;
        }
        let point = eval(mid)?;
        if point.a < target {
            q_lo = mid;
            a_lo = point.a;
        } else {
            q_hi = mid;
            a_hi = point.a;
        }
        if (point.a - target).abs() < (best.a - target).abs() {
            best = point;
        }
    }
    // secant polish across the final bracket
    if a_hi > a_lo {
        let q = q_lo + (target - a_lo) * (q_hi - q_lo) / (a_hi - a_lo);
        if q > q_lo && q < q_hi {
            if let Ok(point) = eval(q) {
                if (point.a - target).abs() < (best.a - target).abs() {
                    best = point;
                }
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64, b: f64, c: f64, d: f64) -> Realization {
        let s = |v| Mat::from_element(1, 1, v);
        Realization::new(s(a), s(b), s(c), s(d)).unwrap()
    }

    #[test]
    fn isotropic_static_filter_has_zero_anisotropy() {
        let g = Realization::static_gain(Mat::identity(3, 3) * 2.5);
        let ab = mean_anisotropy(&g).unwrap();
        assert!(ab.total.abs() < 1e-14);
        assert!(ab.nonroundness.abs() < 1e-14);
        assert!(ab.colouredness.abs() < 1e-14);
    }

    #[test]
    fn static_diagonal_filter_is_nonround_only() {
        let g = Realization::static_gain(Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0])));
        let ab = mean_anisotropy(&g).unwrap();
        assert_relative_eq!(ab.total, 0.5 * (25.0f64 / 16.0).ln(), epsilon = 1e-14);
        assert_relative_eq!(ab.nonroundness, ab.total, epsilon = 1e-14);
        assert!(ab.colouredness.abs() < 1e-14);
    }

    #[test]
    fn scalar_first_order_filter_is_coloured_only() {
        let ab = mean_anisotropy(&scalar(0.5, 1.0, 1.0, 1.0)).unwrap();
        assert_relative_eq!(ab.total, 0.5 * (7.0f64 / 3.0).ln(), epsilon = 1e-12);
        assert!(ab.nonroundness.abs() < 1e-15);
        assert_relative_eq!(ab.colouredness, ab.total, epsilon = 1e-15);
    }

    #[test]
    fn rank_deficient_filter_is_infinitely_anisotropic() {
        let g = Realization::static_gain(Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0])));
        assert!(!mean_anisotropy(&g).unwrap().is_finite());
    }

    #[test]
    fn unstable_filter_is_an_error() {
        assert!(matches!(
            mean_anisotropy(&scalar(1.2, 1.0, 1.0, 1.0)),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn anisotropic_norm_at_zero_is_scaled_h2() {
        let sys = scalar(0.5, 1.0, 1.0, 0.0);
        let r = anisotropic_norm(&sys, 0.0, 1e-8).unwrap();
        assert_eq!(r.q, 0.0);
        assert_relative_eq!(r.norm, (4.0f64 / 3.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn anisotropic_norm_saturates_towards_hinf() {
        let sys = scalar(0.5, 1.0, 1.0, 0.0);
        let mut last = (4.0f64 / 3.0).sqrt();
        for a in [0.5, 1.0, 2.0, 3.0] {
            let r = anisotropic_norm(&sys, a, 1e-8).unwrap();
            assert!((r.achieved - a).abs() <= 1e-8, "a = {a}: {r:?}");
            assert!(r.norm > last && r.norm < 2.0, "norm {} at a = {a}", r.norm);
            last = r.norm;
        }
        assert!(last > 0.9 * 2.0, "norm {last}");
    }

    #[test]
    fn negative_level_is_rejected() {
        assert!(matches!(
            anisotropic_norm(&scalar(0.5, 1.0, 1.0, 0.0), -1.0, 1e-8),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn flat_norm_for_isotropic_static_gain() {
        let sys = Realization::static_gain(Mat::identity(2, 2) * 3.0);
        let r = anisotropic_norm(&sys, 0.7, 1e-8).unwrap();
        assert_relative_eq!(r.norm, 3.0, epsilon = 1e-12);
        assert!(r.warning.is_some());
    }

    #[test]
    fn whiteness_identity_holds_on_curve() {
        let plant = PlantModel::scalar(0.5, 1.0, 1.0, 0.5, 1.0, 0.0);
        let gains = EstimatorGains {
            k: Mat::from_element(1, 1, 0.3),
            m: Mat::from_element(1, 1, 0.2),
        };
        let theta = riccati::theta_bound(&plant, &gains).unwrap();
        for frac in [0.1, 0.5, 0.9] {
            let pt = curve_point(&plant, &gains, frac * theta).unwrap();
            let lhs = pt.q * pt.norm * pt.norm * pt.energy + 1.0;
            assert_relative_eq!(lhs, pt.energy, max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_error_operator_curve_is_trivial() {
        let plant = PlantModel::scalar(0.5, 1.0, 1.0, 1.0, 1.0, 0.0);
        let gains = EstimatorGains {
            k: Mat::from_element(1, 1, 1.0),
            m: Mat::from_element(1, 1, 0.0),
        };
        let pt = curve_point(&plant, &gains, 0.05).unwrap();
        assert_eq!(pt.a, 0.0);
        assert_eq!(pt.norm, 0.0);
        assert_relative_eq!(pt.solution.q_matrix[(0, 0)], 0.05 / 0.75, epsilon = 1e-14);
    }
}
