//! State-space realizations of discrete-time LTI systems, frequency
//! responses, the discrete Lyapunov solver and the H2 / H∞ norms.
//!
//! Transfer functions follow the power-series convention
//! `G(z) = Σ_{k≥0} z^k g_k`, analytic in the open unit disc, so that
//!
//! ```text
//! Ĝ(ω) = D + e^{iω} C (I - e^{iω} A)⁻¹ B,   ω ∈ [-π, π]
//! ```
//!
//! and a realization is stable when the spectral radius of `A` is below one.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, Mat};

/// Spectral radius at or above `1 - STABILITY_MARGIN` counts as unstable.
pub const STABILITY_MARGIN: f64 = 1e-9;

const DLYAP_TOL: f64 = 1e-12;
const DLYAP_MAX_DOUBLINGS: usize = 200;
const HINF_COARSE_GRID: usize = 256;

pub fn is_stable_radius(radius: f64) -> bool {
    radius <= 1.0 - STABILITY_MARGIN
}

/// A state-space quadruple `(A, B, C, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

impl Realization {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!(
                "state matrix is {}x{}, expected square",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!(
                "input matrix has {} rows, expected {n}",
                b.nrows()
            )));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!(
                "output matrix has {} columns, expected {n}",
                c.ncols()
            )));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::Dimension(format!(
                "feedthrough is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    /// A memoryless system `y = D u`.
    pub fn static_gain(d: Mat) -> Self {
        let (p, m) = d.shape();
        Self {
            a: Mat::zeros(0, 0),
            b: Mat::zeros(0, m),
            c: Mat::zeros(p, 0),
            d,
        }
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.a)
    }

    pub fn is_stable(&self) -> bool {
        is_stable_radius(self.spectral_radius())
    }

    pub(crate) fn require_stable(&self, what: &'static str) -> Result<()> {
        let radius = self.spectral_radius();
        if is_stable_radius(radius) {
            Ok(())
        } else {
            Err(Error::Unstable { what, radius })
        }
    }

    /// Value of the transfer function on the unit circle at angle `omega`.
    pub fn evaluate(&self, omega: f64) -> Result<CMat> {
        let z = Complex64::from_polar(1.0, omega);
        let mut value = linalg::to_complex(&self.d);
        let n = self.states();
        if n == 0 {
            return Ok(value);
        }
        let resolvent = CMat::identity(n, n) - linalg::to_complex(&self.a) * z;
        let rhs = linalg::to_complex(&self.b);
        let solved = resolvent
            .lu()
            .solve(&rhs)
            .ok_or(Error::SingularResolvent { omega })?;
        if !solved.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::SingularResolvent { omega });
        }
        value += linalg::to_complex(&self.c) * solved * z;
        Ok(value)
    }

    /// The system `u ↦ next(self(u))`.
    pub fn series(&self, next: &Realization) -> Result<Realization> {
        if next.inputs() != self.outputs() {
            return Err(Error::Dimension(format!(
                "cannot cascade {} outputs into {} inputs",
                self.outputs(),
                next.inputs()
            )));
        }
        let (n1, n2) = (self.states(), next.states());
        let mut a = Mat::zeros(n1 + n2, n1 + n2);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, 0), (n2, n1)).copy_from(&(&next.b * &self.c));
        a.view_mut((n1, n1), (n2, n2)).copy_from(&next.a);
        let mut b = Mat::zeros(n1 + n2, self.inputs());
        b.view_mut((0, 0), (n1, self.inputs())).copy_from(&self.b);
        b.view_mut((n1, 0), (n2, self.inputs()))
            .copy_from(&(&next.b * &self.d));
        let mut c = Mat::zeros(next.outputs(), n1 + n2);
        c.view_mut((0, 0), (next.outputs(), n1))
            .copy_from(&(&next.d * &self.c));
        c.view_mut((0, n1), (next.outputs(), n2)).copy_from(&next.c);
        let d = &next.d * &self.d;
        Realization::new(a, b, c, d)
    }
}

/// The plant `x' = Ax + Bw`, `y = Cx + Dw`, `z = Φx + Ψw`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub phi: Mat,
    pub psi: Mat,
}

/// Plant assumption that failed validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    UnstableA { radius: f64 },
    RankDeficientD { rank: usize, rows: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::UnstableA { radius } => write!(
                f,
                "stability assumption violated: spectral radius of A is {radius:.6} (must be < 1)"
            ),
            Violation::RankDeficientD { rank, rows } => write!(
                f,
                "rank assumption violated: D has rank {rank} but {rows} rows (full row rank required)"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub spectral_radius: f64,
    pub rank_d: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl PlantModel {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat, phi: Mat, psi: Mat) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        let check = |name: &str, x: &Mat, rows: usize, cols: usize| {
            if x.shape() == (rows, cols) {
                Ok(())
            } else {
                Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {rows}x{cols}",
                    x.nrows(),
                    x.ncols()
                )))
            }
        };
        check("A", &a, n, n)?;
        check("B", &b, n, m)?;
        let p = c.nrows();
        check("C", &c, p, n)?;
        check("D", &d, p, m)?;
        let r = phi.nrows();
        check("Phi", &phi, r, n)?;
        check("Psi", &psi, r, m)?;
        Ok(Self {
            a,
            b,
            c,
            d,
            phi,
            psi,
        })
    }

    /// Convenience constructor for scalar plants (`n = m = p = r = 1`).
    pub fn scalar(a: f64, b: f64, c: f64, d: f64, phi: f64, psi: f64) -> Self {
        let s = |v| Mat::from_element(1, 1, v);
        Self {
            a: s(a),
            b: s(b),
            c: s(c),
            d: s(d),
            phi: s(phi),
            psi: s(psi),
        }
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn disturbances(&self) -> usize {
        self.b.ncols()
    }

    pub fn measurements(&self) -> usize {
        self.c.nrows()
    }

    pub fn targets(&self) -> usize {
        self.phi.nrows()
    }

    /// `W ↦ Y`.
    pub fn observed(&self) -> Realization {
        Realization {
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c.clone(),
            d: self.d.clone(),
        }
    }

    /// `W ↦ Z`.
    pub fn estimated(&self) -> Realization {
        Realization {
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.phi.clone(),
            d: self.psi.clone(),
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let spectral_radius = linalg::spectral_radius(&self.a);
        let rank_d = linalg::rank(&self.d);
        let mut violations = Vec::new();
        if !is_stable_radius(spectral_radius) {
            violations.push(Violation::UnstableA {
                radius: spectral_radius,
            });
        }
        if rank_d < self.measurements() {
            violations.push(Violation::RankDeficientD {
                rank: rank_d,
                rows: self.measurements(),
            });
        }
        ValidationReport {
            spectral_radius,
            rank_d,
            violations,
        }
    }
}

/// Sampled frequency response.
#[derive(Debug, Clone)]
pub struct FrequencyResponse {
    pub grid: Vec<f64>,
    pub values: Vec<CMat>,
}

pub fn frequency_response(sys: &Realization, grid: &[f64]) -> Result<FrequencyResponse> {
    let values = grid
        .iter()
        .map(|&w| sys.evaluate(w))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrequencyResponse {
        grid: grid.to_vec(),
        values,
    })
}

/// `count` equispaced points covering `[-π, π)`.
pub fn uniform_grid(count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| -PI + 2.0 * PI * k as f64 / count as f64)
        .collect()
}

/// Solves `X = A X Aᵀ + R`, or `X = Aᵀ X A + R` when `transposed` is set.
///
/// Uses the doubling recursion `X ← X + Aₖ X Aₖᵀ`, `Aₖ₊₁ = Aₖ²`, which sums
/// the series `Σ A^k R (A^k)ᵀ` in logarithmically many steps.
pub fn dlyap(state: &Mat, rhs: &Mat, transposed: bool) -> Result<Mat> {
    let n = state.nrows();
    if state.ncols() != n || rhs.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "Lyapunov data: state {}x{}, rhs {}x{}",
            state.nrows(),
            state.ncols(),
            rhs.nrows(),
            rhs.ncols()
        )));
    }
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let radius = linalg::spectral_radius(state);
    if !is_stable_radius(radius) {
        return Err(Error::Unstable {
            what: "Lyapunov state matrix",
            radius,
        });
    }
    let mut a = if transposed {
        state.transpose()
    } else {
        state.clone()
    };
    let mut x = linalg::symmetrize(rhs);
    for _ in 0..DLYAP_MAX_DOUBLINGS {
        let term = &a * &x * a.transpose();
        let size = linalg::frobenius(&term);
        x = linalg::symmetrize(&(x + term));
        if size <= f64::EPSILON * linalg::frobenius(&x) || size == 0.0 {
            break;
        }
        a = &a * &a;
    }
    let a0 = if transposed {
        state.transpose()
    } else {
        state.clone()
    };
    let residual = linalg::frobenius(&(&x - &a0 * &x * a0.transpose() - rhs));
    // normwise backward error: non-normal A makes A X Aᵀ much larger than X
    let scale = linalg::frobenius(&a0).powi(2) * linalg::frobenius(&x);
    if residual > DLYAP_TOL * (1.0 + linalg::frobenius(rhs) + linalg::frobenius(&x) + scale) {
        return Err(Error::NoConvergence {
            solver: "discrete Lyapunov doubling",
            iterations: DLYAP_MAX_DOUBLINGS,
            residual,
        });
    }
    Ok(x)
}

/// Controllability gramian `Pc = A Pc Aᵀ + B Bᵀ`.
pub fn controllability_gramian(sys: &Realization) -> Result<Mat> {
    dlyap(&sys.a, &(&sys.b * sys.b.transpose()), false)
}

/// Stationary output covariance under unit white noise input.
pub fn output_covariance(sys: &Realization) -> Result<Mat> {
    sys.require_stable("system")?;
    let pc = controllability_gramian(sys)?;
    Ok(linalg::symmetrize(
        &(&sys.c * pc * sys.c.transpose() + &sys.d * sys.d.transpose()),
    ))
}

pub fn h2_norm(sys: &Realization) -> Result<f64> {
    Ok(output_covariance(sys)?.trace().max(0.0).sqrt())
}

fn grid_peak(sys: &Realization, points: usize) -> Result<f64> {
    let mut peak: f64 = 0.0;
    for k in 0..=points {
        let w = PI * k as f64 / points as f64;
        peak = peak.max(linalg::sigma_max_complex(&sys.evaluate(w)?));
    }
    Ok(peak)
}

/// Upper bound from the ℓ1 norm of the impulse response.
fn impulse_bound(sys: &Realization) -> f64 {
    let mut bound = linalg::sigma_max(&sys.d);
    let mut markov = sys.b.clone();
    for _ in 0..4096 {
        let term = linalg::sigma_max(&(&sys.c * &markov));
        bound += term;
        if term <= f64::EPSILON * bound {
            break;
        }
        markov = &sys.a * markov;
    }
    bound
}

/// Continuous-time image of the system under `λ = (1 + s) / (1 - s)`.
struct Bilinear {
    a: Mat,
    b: Mat,
    c: Mat,
    d: Mat,
}

impl Bilinear {
    fn new(sys: &Realization) -> Result<Self> {
        let n = sys.states();
        let shift = linalg::inverse(&(&sys.a + Mat::identity(n, n)), "A + I")?;
        let root2 = std::f64::consts::SQRT_2;
        Ok(Self {
            a: &shift * (&sys.a - Mat::identity(n, n)),
            b: &shift * &sys.b * root2,
            c: &sys.c * &shift * root2,
            d: &sys.d - &sys.c * &shift * &sys.b,
        })
    }

    /// Frequencies (in the discrete angle) where the Hamiltonian at level
    /// `gamma` has eigenvalues near the imaginary axis.
    fn crossings(&self, gamma: f64) -> Result<Vec<f64>> {
        let n = self.a.nrows();
        let m = self.b.ncols();
        // the feedthrough of the image is the response at ω = π
        if linalg::sigma_max(&self.d) >= gamma * (1.0 - 1e-12) {
            return Ok(vec![std::f64::consts::PI]);
        }
        let r = Mat::identity(m, m) * (gamma * gamma) - self.d.transpose() * &self.d;
        let r_inv = linalg::inverse(&r, "gamma^2 I - DᵀD")?;
        let f = &self.a + &self.b * &r_inv * self.d.transpose() * &self.c;
        let p = self.c.nrows();
        let q = self.c.transpose()
            * (Mat::identity(p, p) + &self.d * &r_inv * self.d.transpose())
            * &self.c;
        let mut h = Mat::zeros(2 * n, 2 * n);
        h.view_mut((0, 0), (n, n)).copy_from(&f);
        h.view_mut((0, n), (n, n))
            .copy_from(&(&self.b * &r_inv * self.b.transpose()));
        h.view_mut((n, 0), (n, n)).copy_from(&(-q));
        h.view_mut((n, n), (n, n)).copy_from(&(-f.transpose()));
        let scale = 1.0 + h.norm();
        let mut out = Vec::new();
        for ev in h.complex_eigenvalues().iter() {
            if ev.re.abs() <= 1e-6 * scale {
                // s = iy  ↔  λ = e^{iφ} with φ = 2 atan(y)
                out.push((2.0 * ev.im.atan()).abs());
            }
        }
        out.sort_by(f64::total_cmp);
        Ok(out)
    }
}

/// `sup_ω σ_max(Ĝ(ω))` to relative accuracy `tol`.
///
/// Bisection on the level `γ`. Feasibility of `γ` is decided by the
/// bounded-real Hamiltonian test on the bilinear image of the system: any
/// eigenvalue near the imaginary axis is mapped back to a frequency and the
/// response is evaluated there (and between neighbouring crossings), so a
/// level is rejected only with a witness frequency where `σ_max ≥ γ`.
pub fn hinf_norm(sys: &Realization, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    sys.require_stable("system")?;
    if sys.states() == 0 {
        return Ok(linalg::sigma_max(&sys.d));
    }
    let mut lower = grid_peak(sys, HINF_COARSE_GRID)?;
    let mut upper = lower.max(impulse_bound(sys));
    if upper == 0.0 {
        return Ok(0.0);
    }
    let bilinear = Bilinear::new(sys)?;

    let witness = |gamma: f64, lower: &mut f64| -> Result<bool> {
        let crossings = bilinear.crossings(gamma)?;
        let mut probes = crossings.clone();
        probes.extend(crossings.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        let mut found = false;
        for w in probes {
            let s = linalg::sigma_max_complex(&sys.evaluate(w)?);
            if s > *lower {
                *lower = s;
            }
            if s >= gamma {
                found = true;
            }
        }
        Ok(found)
    };

    // the bound can be loose in floating point; make sure it is feasible
    let mut guard = 0;
    while witness(upper, &mut lower)? {
        upper *= 2.0;
        guard += 1;
        if guard > 64 {
            return Err(Error::NoConvergence {
                solver: "H-infinity bracket",
                iterations: guard,
                residual: upper,
            });
        }
    }
    let mut iterations = 0;
    while upper - lower > tol * lower.max(f64::MIN_POSITIVE) {
        let gamma = 0.5 * (lower + upper);
        if witness(gamma, &mut lower)? {
            // lower already raised to the witness value
            lower = lower.max(gamma);
        } else {
            upper = gamma;
        }
        iterations += 1;
        if iterations > 200 {
            break;
        }
    }
    Ok(0.5 * (lower + upper))
}
