//! Estimator, error-operator and shaping-filter realizations, and the
//! coupled-equation solver for the a-anisotropic optimal estimator.
//!
//! The optimal estimator `E_{K,M}` and the worst-case shaping filter
//! `G_{K,S,L}` form a saddle point when
//!
//! ```text
//! K = 𝐊(S, L),  M = 𝐌(S, L),  S = 𝐒(K, M, q),  L = 𝐋(K, M, q)
//! ```
//!
//! with `q ∈ [0, θ_{K,M})` tuned so that the mean anisotropy of `G_{K,S,L}`
//! equals the prescribed level `a`. [`synthesize`] follows the fixed point
//! from the Kalman solution at `q = 0` by continuation in `q`.

use log::{debug, info};
use nalgebra::DVector;

use crate::anisotropy::{self, anisotropy_and_norm};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::riccati::{self, QSolution};
use crate::simulate::GaussianSource;
use crate::statespace::{self, is_stable_radius, PlantModel, Realization};

/// Gains `(K, M)` of the estimator `x̂' = A x̂ + K (y - C x̂)`, `ẑ = Φ x̂ + M (y - C x̂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorGains {
    pub k: Mat,
    pub m: Mat,
}

impl EstimatorGains {
    pub fn zeros(plant: &PlantModel) -> Self {
        Self {
            k: Mat::zeros(plant.states(), plant.measurements()),
            m: Mat::zeros(plant.targets(), plant.measurements()),
        }
    }

    fn check_shape(&self, plant: &PlantModel) -> Result<()> {
        let (n, p, r) = (plant.states(), plant.measurements(), plant.targets());
        if self.k.shape() != (n, p) || self.m.shape() != (r, p) {
            return Err(Error::Dimension(format!(
                "gains K {}x{}, M {}x{} do not fit n = {n}, p = {p}, r = {r}",
                self.k.nrows(),
                self.k.ncols(),
                self.m.nrows(),
                self.m.ncols()
            )));
        }
        Ok(())
    }

    /// Spectral radius of `A - KC`.
    pub fn radius(&self, plant: &PlantModel) -> f64 {
        linalg::spectral_radius(&(&plant.a - &self.k * &plant.c))
    }

    pub fn is_admissible(&self, plant: &PlantModel) -> bool {
        self.check_shape(plant).is_ok() && is_stable_radius(self.radius(plant))
    }

    fn require_admissible(&self, plant: &PlantModel) -> Result<()> {
        self.check_shape(plant)?;
        let radius = self.radius(plant);
        if is_stable_radius(radius) {
            Ok(())
        } else {
            Err(Error::InadmissibleGain { radius })
        }
    }

    fn distance(&self, other: &Self) -> f64 {
        ((&self.k - &other.k).norm_squared() + (&self.m - &other.m).norm_squared()).sqrt()
    }
}

/// Parameters `(S, L)` of the shaping filter `w = L x̃ + √S v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapingParams {
    pub s: Mat,
    pub l: Mat,
}

impl ShapingParams {
    /// `S = I`, `L = 0`: the disturbance is the driving white noise itself.
    pub fn white(disturbances: usize, states: usize) -> Self {
        Self {
            s: Mat::identity(disturbances, disturbances),
            l: Mat::zeros(disturbances, states),
        }
    }
}

impl From<&QSolution> for ShapingParams {
    fn from(sol: &QSolution) -> Self {
        Self {
            s: sol.s.clone(),
            l: sol.l.clone(),
        }
    }
}

/// `E_{K,M} = (A - KC, K, Φ - MC, M)`, mapping `Y` to `Ẑ`.
pub fn build_estimator(plant: &PlantModel, gains: &EstimatorGains) -> Result<Realization> {
    gains.require_admissible(plant)?;
    Realization::new(
        &plant.a - &gains.k * &plant.c,
        gains.k.clone(),
        &plant.phi - &gains.m * &plant.c,
        gains.m.clone(),
    )
}

/// `Δ_{K,M} = (A - KC, B - KD, Φ - MC, Ψ - MD)`, mapping `W` to `Z̃ = Z - Ẑ`.
pub fn build_error_operator(plant: &PlantModel, gains: &EstimatorGains) -> Result<Realization> {
    gains.require_admissible(plant)?;
    Realization::new(
        &plant.a - &gains.k * &plant.c,
        &plant.b - &gains.k * &plant.d,
        &plant.phi - &gains.m * &plant.c,
        &plant.psi - &gains.m * &plant.d,
    )
}

/// `G_{K,S,L}` and its inverse.
#[derive(Debug, Clone)]
pub struct ShapingFilter {
    pub filter: Realization,
    pub inverse: Realization,
}

pub fn build_shaping_filter(
    plant: &PlantModel,
    gains: &EstimatorGains,
    shaping: &ShapingParams,
) -> Result<ShapingFilter> {
    gains.require_admissible(plant)?;
    let (n, m) = (plant.states(), plant.disturbances());
    if shaping.s.shape() != (m, m) || shaping.l.shape() != (m, n) {
        return Err(Error::Dimension(format!(
            "shaping parameters S {}x{}, L {}x{} do not fit m = {m}, n = {n}",
            shaping.s.nrows(),
            shaping.s.ncols(),
            shaping.l.nrows(),
            shaping.l.ncols()
        )));
    }
    let root = linalg::sqrtm_spd(&shaping.s)?;
    let inv_root = linalg::inv_sqrtm_spd(&shaping.s)?;
    let a_err = &plant.a - &gains.k * &plant.c;
    let b_err = &plant.b - &gains.k * &plant.d;
    let closed = &a_err + &b_err * &shaping.l;
    let radius = linalg::spectral_radius(&closed);
    if !is_stable_radius(radius) {
        return Err(Error::InadmissibleShaping(format!(
            "A - KC + (B - KD) L has spectral radius {radius:.6}"
        )));
    }
    let filter = Realization::new(closed, &b_err * &root, shaping.l.clone(), root)?;
    let inverse = Realization::new(a_err, b_err, -(&inv_root * &shaping.l), inv_root)?;
    Ok(ShapingFilter { filter, inverse })
}

/// `Θ = [√q Δ_{K,M}; G_{K,S,L}⁻¹]`, inner when `(S, L)` solve the Q-equation at `q`.
pub fn build_inner_system(
    plant: &PlantModel,
    gains: &EstimatorGains,
    shaping: &ShapingParams,
    q: f64,
) -> Result<Realization> {
    if !(q >= 0.0) {
        return Err(Error::InvalidArgument(format!("q must be nonnegative, got {q}")));
    }
    let delta = build_error_operator(plant, gains)?;
    let inverse = build_shaping_filter(plant, gains, shaping)?.inverse;
    let rq = q.sqrt();
    let (r, m, n) = (plant.targets(), plant.disturbances(), plant.states());
    let mut c = Mat::zeros(r + m, n);
    c.view_mut((0, 0), (r, n)).copy_from(&(&delta.c * rq));
    c.view_mut((r, 0), (m, n)).copy_from(&inverse.c);
    let mut d = Mat::zeros(r + m, m);
    d.view_mut((0, 0), (r, m)).copy_from(&(&delta.d * rq));
    d.view_mut((r, 0), (m, m)).copy_from(&inverse.d);
    Realization::new(delta.a, delta.b, c, d)
}

/// `max_ω ‖Θ̂(ω)* Θ̂(ω) - I‖_F` over `points` equispaced frequencies.
pub fn inner_defect(sys: &Realization, points: usize) -> Result<f64> {
    let m = sys.inputs();
    let eye = linalg::to_complex(&Mat::identity(m, m));
    let mut worst: f64 = 0.0;
    for w in statespace::uniform_grid(points) {
        let v = sys.evaluate(w)?;
        worst = worst.max((v.adjoint() * v - &eye).norm());
    }
    Ok(worst)
}

/// Steady-state Kalman gains `(K₀, M₀)`: the P-map at `S = I`, `L = 0`.
pub fn kalman_baseline(plant: &PlantModel) -> Result<EstimatorGains> {
    let sol = riccati::solve_p_dare(
        plant,
        &ShapingParams::white(plant.disturbances(), plant.states()),
    )?;
    if !sol.gain_admissible() {
        return Err(Error::InadmissibleGain {
            radius: sol.gain_radius,
        });
    }
    Ok(sol.gains())
}

/// Solver controls for [`synthesize`].
#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    /// Relative fixed-point residual required at every continuation point.
    pub tolerance: f64,
    /// Allowed mismatch between achieved and requested anisotropy.
    pub a_tolerance: f64,
    /// Alternations between the Q- and P-maps per continuation point.
    pub max_inner_iterations: usize,
    /// Initial step as a fraction of `θ` at the Kalman gains.
    pub initial_step: f64,
    /// Abort once the step falls below this fraction of `θ` at the Kalman gains.
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-11,
            a_tolerance: 1e-8,
            max_inner_iterations: 2000,
            initial_step: 1.0 / 64.0,
            min_step: 1e-6,
            max_steps: 10_000,
        }
    }
}

/// Residuals of the coupled equations at a solution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Residuals {
    /// `‖K - 𝐊(S,L)‖ / (1 + ‖𝐊(S,L)‖)`
    pub k: f64,
    /// `‖M - 𝐌(S,L)‖ / (1 + ‖𝐌(S,L)‖)`
    pub m: f64,
    /// `‖S - 𝐒(K,M,q)‖ / (1 + ‖𝐒‖)`
    pub s: f64,
    /// `‖L - 𝐋(K,M,q)‖ / (1 + ‖𝐋‖)`
    pub l: f64,
    /// Relative residual of the Q-equation.
    pub q_equation: f64,
    /// Relative residual of the P-equation.
    pub p_equation: f64,
    /// `‖𝐏(S,L) - cov(x̃)‖ / (1 + ‖𝐏‖)`; vanishes at a saddle point.
    pub p_consistency: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        [
            self.k,
            self.m,
            self.s,
            self.l,
            self.q_equation,
            self.p_equation,
            self.p_consistency,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Point visited by the continuation in `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationPoint {
    pub q: f64,
    pub a: f64,
    pub norm: f64,
    pub theta: f64,
    /// `θ ‖Δ‖₂² < m`: the a(q) curve of this estimator is strictly increasing.
    pub monotone: bool,
}

/// Converged a-anisotropic optimal estimator with its worst-case noise.
#[derive(Debug, Clone)]
pub struct SynthesisSolution {
    pub target: f64,
    pub gains: EstimatorGains,
    pub shaping: ShapingParams,
    pub q: f64,
    pub p: Mat,
    pub q_matrix: Mat,
    pub achieved_anisotropy: f64,
    pub anisotropic_norm: f64,
    /// `tr(L P Lᵀ + S)`, the disturbance power under the worst-case filter.
    pub energy: f64,
    pub theta: f64,
    pub residuals: Residuals,
    /// Total Q/P alternations over the whole continuation.
    pub iterations: usize,
    pub trace: Vec<ContinuationPoint>,
    pub note: Option<String>,
}

/// Converged saddle point at one value of `q`.
struct FixedPoint {
    q: f64,
    gains: EstimatorGains,
    q_sol: QSolution,
    p: Mat,
    residuals: Residuals,
    a: f64,
    norm: f64,
    energy: f64,
    iterations: usize,
}

/// One pass of the coupled maps: `(S, L) = (𝐒, 𝐋)(K, M, q)`, then `(K', M') = (𝐊, 𝐌)(S, L)`.
struct Pass {
    delta: Realization,
    q_sol: QSolution,
    p_sol: riccati::PSolution,
}

impl Pass {
    fn run(plant: &PlantModel, gains: &EstimatorGains, q: f64) -> Result<Self> {
        let delta = build_error_operator(plant, gains)?;
        let q_sol = riccati::worst_case_dare(&delta, q)?;
        let p_sol = riccati::solve_p_dare(plant, &ShapingParams::from(&q_sol))?;
        if !p_sol.gain_admissible() {
            return Err(Error::InadmissibleGain {
                radius: p_sol.gain_radius,
            });
        }
        Ok(Self { delta, q_sol, p_sol })
    }

    fn image(&self) -> EstimatorGains {
        self.p_sol.gains()
    }
}

fn pack(g: &EstimatorGains) -> DVector<f64> {
    DVector::from_iterator(
        g.k.len() + g.m.len(),
        g.k.iter().chain(g.m.iter()).copied(),
    )
}

fn unpack(v: &DVector<f64>, like: &EstimatorGains) -> EstimatorGains {
    let nk = like.k.len();
    EstimatorGains {
        k: Mat::from_column_slice(like.k.nrows(), like.k.ncols(), &v.as_slice()[..nk]),
        m: Mat::from_column_slice(like.m.nrows(), like.m.ncols(), &v.as_slice()[nk..]),
    }
}

/// Damped alternations tried before switching to Newton.
const ALTERNATIONS: usize = 30;

/// Solves `(K, M) = 𝐇(K, M, q)` at fixed `q` starting from `start`.
///
/// A few plain alternations of the Q- and P-maps (damped by one half once
/// the steps stop shrinking) are tried first. The alternation is only
/// linearly convergent and its rate degrades as `q` grows, so it hands over
/// to Newton's method on `𝐇(g) - g` with a forward-difference Jacobian and
/// backtracking.
fn solve_fixed_point(
    plant: &PlantModel,
    q: f64,
    start: &EstimatorGains,
    opts: &SynthesisOptions,
) -> Result<FixedPoint> {
    let mut gains = start.clone();
    let mut pass = Pass::run(plant, &gains, q)?;
    let mut evaluations = 1;
    let mut damping = 1.0;
    let mut last_step = f64::INFINITY;
    let converged = |gains: &EstimatorGains, pass: &Pass| {
        let target = pass.image();
        let res_k = (&gains.k - &target.k).norm() / (1.0 + target.k.norm());
        let res_m = (&gains.m - &target.m).norm() / (1.0 + target.m.norm());
        (res_k, res_m, res_k.max(res_m) <= opts.tolerance)
    };

    for _ in 0..ALTERNATIONS.min(opts.max_inner_iterations) {
        if converged(&gains, &pass).2 {
            return fixed_point(q, gains, pass, evaluations);
        }
        let target = pass.image();
        let step = gains.distance(&target);
        if step > last_step * 0.999 && damping == 1.0 {
            debug!("alternation stalls at q = {q}; damping gain updates");
            damping = 0.5;
        }
        last_step = step;
        let next = EstimatorGains {
            k: &gains.k + (&target.k - &gains.k) * damping,
            m: &gains.m + (&target.m - &gains.m) * damping,
        };
        match Pass::run(plant, &next, q) {
            Ok(p) => {
                gains = next;
                pass = p;
                evaluations += 1;
            }
            Err(e) => {
                debug!("alternation left the admissible set at q = {q}: {e}");
                break;
            }
        }
    }

    let mut residual = pack(&pass.image()) - pack(&gains);
    while evaluations < opts.max_inner_iterations {
        if converged(&gains, &pass).2 {
            return fixed_point(q, gains, pass, evaluations);
        }
        let x = pack(&gains);
        let dim = x.len();
        let mut jac = Mat::identity(dim, dim);
        for j in 0..dim {
            let h = 1e-7 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            xp[j] += h;
            let image = pack(&Pass::run(plant, &unpack(&xp, &gains), q)?.image());
            evaluations += 1;
            let column = (image - pack(&pass.image())) / h;
            for i in 0..dim {
                jac[(i, j)] -= column[i];
            }
        }
        // (I - J) δ = 𝐇(g) - g
        let newton = jac
            .lu()
            .solve(&residual)
            .ok_or_else(|| Error::Singular("Newton matrix of the coupled equations".into()))?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = unpack(&(&x + &newton * scale), &gains);
            if let Ok(p) = Pass::run(plant, &trial, q) {
                evaluations += 1;
                let r = pack(&p.image()) - pack(&trial);
                if r.norm() < residual.norm() {
                    gains = trial;
                    pass = p;
                    residual = r;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(Error::NoConvergence {
        solver: "Q/P fixed-point iteration",
        iterations: evaluations,
        residual: residual.norm(),
    })
}

fn fixed_point(
    q: f64,
    gains: EstimatorGains,
    pass: Pass,
    evaluations: usize,
) -> Result<FixedPoint> {
    let target = pass.image();
    let res_k = (&gains.k - &target.k).norm() / (1.0 + target.k.norm());
    let res_m = (&gains.m - &target.m).norm() / (1.0 + target.m.norm());
    let Pass { delta, q_sol, p_sol } = pass;
    let p_lyap = anisotropy::worst_case_state_covariance(&delta, &q_sol)?;
    let (a, norm, energy) = anisotropy_and_norm(&delta, &q_sol, &p_sol.p)?;
    let residuals = Residuals {
        k: res_k,
        m: res_m,
        s: 0.0,
        l: 0.0,
        q_equation: q_sol.residual,
        p_equation: p_sol.residual,
        p_consistency: (&p_sol.p - &p_lyap).norm() / (1.0 + p_sol.p.norm()),
    };
    Ok(FixedPoint {
        q,
        gains,
        q_sol,
        p: p_sol.p,
        residuals,
        a,
        norm,
        energy,
        iterations: evaluations,
    })
}

/// Recomputes `(S, L) = (𝐒, 𝐋)(K, M, q)` at the final gains so that the
/// stored tuple is self-consistent, and fills the S/L residual entries.
fn finish(
    plant: &PlantModel,
    target: f64,
    point: FixedPoint,
    iterations: usize,
    trace: Vec<ContinuationPoint>,
    note: Option<String>,
) -> Result<SynthesisSolution> {
    let theta = riccati::theta_bound(plant, &point.gains)?;
    if point.q >= theta {
        return Err(Error::QOutOfRange {
            q: point.q,
            theta,
        });
    }
    let check = riccati::solve_q_dare(plant, &point.gains, point.q)?;
    let mut residuals = point.residuals.clone();
    residuals.s = (&check.s - &point.q_sol.s).norm() / (1.0 + check.s.norm());
    residuals.l = (&check.l - &point.q_sol.l).norm() / (1.0 + check.l.norm());
    Ok(SynthesisSolution {
        target,
        gains: point.gains,
        shaping: ShapingParams::from(&point.q_sol),
        q: point.q,
        p: point.p,
        q_matrix: point.q_sol.q_matrix,
        achieved_anisotropy: point.a,
        anisotropic_norm: point.norm,
        energy: point.energy,
        theta,
        residuals,
        iterations,
        trace,
        note,
    })
}

fn continuation_point(plant: &PlantModel, fp: &FixedPoint) -> Result<ContinuationPoint> {
    let delta = build_error_operator(plant, &fp.gains)?;
    let theta = riccati::theta_of(&delta)?;
    let h2 = statespace::h2_norm(&delta)?;
    Ok(ContinuationPoint {
        q: fp.q,
        a: fp.a,
        norm: fp.norm,
        theta,
        monotone: theta * h2 * h2 < plant.disturbances() as f64,
    })
}

/// Relative size of `‖Δ‖∞` at the Kalman gains below which estimation counts as exact.
pub const EXACT_ESTIMATION: f64 = 1e-10;

/// Solves the coupled equations for the a-anisotropic optimal estimator.
pub fn synthesize(plant: &PlantModel, a: f64, opts: &SynthesisOptions) -> Result<SynthesisSolution> {
    if !(a >= 0.0) || !a.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "anisotropy level must be finite and nonnegative, got {a}"
        )));
    }
    let report = plant.validate();
    if let Some(v) = report.violations.first() {
        return Err(Error::Assumption(v.to_string()));
    }
    let kalman = kalman_baseline(plant)?;
    let origin = solve_fixed_point(plant, 0.0, &kalman, opts)?;
    let mut iterations = origin.iterations;
    let theta0 = riccati::theta_bound(plant, &origin.gains)?;
    let mut trace = vec![ContinuationPoint {
        q: 0.0,
        a: 0.0,
        norm: origin.norm,
        theta: theta0,
        monotone: true,
    }];
    if a == 0.0 {
        return finish(plant, a, origin, iterations, trace, None);
    }
    // ‖Δ‖∞ at round-off level relative to the unestimated target means exact estimation
    let f2_peak = statespace::hinf_norm(&plant.estimated(), riccati::THETA_TOL)?;
    if theta0.is_infinite() || theta0.sqrt().recip() <= EXACT_ESTIMATION * f2_peak {
        info!("Kalman estimator is exact; anisotropic norm vanishes for every level");
        return finish(
            plant,
            a,
            origin,
            iterations,
            trace,
            Some("error operator vanishes at the Kalman gains; Kalman estimator returned".into()),
        );
    }

    let mut lo = origin;
    let mut step = theta0 * opts.initial_step;
    let floor = theta0 * opts.min_step;
    let mut steps = 0;
    let hi = loop {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::NoConvergence {
                solver: "q-continuation",
                iterations: steps,
                residual: (a - lo.a).abs(),
            });
        }
        let q_try = lo.q + step;
        match solve_fixed_point(plant, q_try, &lo.gains, opts) {
            Ok(fp) => {
                iterations += fp.iterations;
                let cp = continuation_point(plant, &fp)?;
                if !(q_try < cp.theta) {
                    step *= 0.5;
                } else {
                    debug!("continuation q = {q_try:.6e} a = {:.6e} norm = {:.6e}", fp.a, fp.norm);
                    trace.push(cp);
                    if fp.a >= a {
                        break fp;
                    }
                    lo = fp;
                    step *= 1.5;
                    continue;
                }
            }
            Err(e) => {
                debug!("continuation step to q = {q_try:.6e} failed: {e}");
                step *= 0.5;
            }
        }
        if step < floor {
            return Err(Error::UnreachableAnisotropy {
                target: a,
                best_a: lo.a,
                best_q: lo.q,
            });
        }
    };

    // bisection in q between the last two continuation points, then a secant polish
    let (mut lo, mut hi) = (lo, hi);
    if (hi.a - a).abs() <= opts.a_tolerance {
        return finish(plant, a, hi, iterations, trace, None);
    }
    for _ in 0..200 {
        let secant = lo.q + (a - lo.a) * (hi.q - lo.q) / (hi.a - lo.a);
        let mid = 0.5 * (lo.q + hi.q);
        // alternate secant and bisection steps; the secant is guarded to the bracket
        let q_next = if secant > lo.q && secant < hi.q && (hi.q - lo.q) < theta0 * 1e-3 {
            secant
        } else {
            mid
        };
        if q_next <= lo.q || q_next >= hi.q {
            break;
        }
        let fp = solve_fixed_point(plant, q_next, &lo.gains, opts)?;
        iterations += fp.iterations;
        if (fp.a - a).abs() <= opts.a_tolerance {
            return finish(plant, a, fp, iterations, trace, None);
        }
        if fp.a < a {
            lo = fp;
        } else {
            hi = fp;
        }
    }
    let best = if (lo.a - a).abs() < (hi.a - a).abs() { lo } else { hi };
    let miss = (best.a - a).abs();
    if miss <= opts.a_tolerance {
        finish(plant, a, best, iterations, trace, None)
    } else {
        Err(Error::NoConvergence {
            solver: "anisotropy root finding",
            iterations,
            residual: miss,
        })
    }
}

/// Estimator-side probe that lowered the weighted H2 cost.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeViolation {
    pub probe: usize,
    pub value: f64,
    pub decrease: f64,
}

/// Outcome of [`verify_saddle`].
#[derive(Debug, Clone)]
pub struct SaddleReport {
    pub seed: u64,
    pub probes: usize,
    pub radius: f64,
    /// `‖Δ_{K,M} G_{K,S,L}‖₂`.
    pub base: f64,
    /// Smallest `‖Δ_{K',M'} G‖₂ - base` over admissible probes.
    pub min_margin: f64,
    /// Probes whose perturbed `K'` left the admissible set.
    pub skipped: usize,
    pub estimator_violations: Vec<ProbeViolation>,
    pub noise_violations: Vec<String>,
}

impl SaddleReport {
    pub fn passed(&self) -> bool {
        self.estimator_violations.is_empty() && self.noise_violations.is_empty()
    }
}

/// Decrease of the weighted H2 cost tolerated before a probe counts as a violation.
pub const SADDLE_SLACK: f64 = 1e-9;

/// Checks a claimed solution for the saddle-point property.
///
/// Estimator side: random gain perturbations of Frobenius size `radius` must
/// not lower `‖Δ_{K',M'} G_{K,S,L}‖₂`. Noise side: the worst-case filter must
/// reproduce the stored anisotropy level and norm, and satisfy the energy
/// identity `q ‖Δ G‖₂² + m = tr(L P Lᵀ + S)`.
pub fn verify_saddle(
    plant: &PlantModel,
    solution: &SynthesisSolution,
    probes: usize,
    radius: f64,
    seed: u64,
) -> Result<SaddleReport> {
    let shaping = build_shaping_filter(plant, &solution.gains, &solution.shaping)?;
    let delta = build_error_operator(plant, &solution.gains)?;
    let base = statespace::h2_norm(&shaping.filter.series(&delta)?)?;

    let mut source = GaussianSource::new(seed);
    let (n, p, r) = (plant.states(), plant.measurements(), plant.targets());
    let mut estimator_violations = Vec::new();
    let mut skipped = 0;
    let mut min_margin = f64::INFINITY;
    for probe in 0..probes {
        let mut dk = Mat::from_fn(n, p, |_, _| source.sample());
        let mut dm = Mat::from_fn(r, p, |_, _| source.sample());
        let size = (dk.norm_squared() + dm.norm_squared()).sqrt();
        if size > 0.0 {
            dk *= radius / size;
            dm *= radius / size;
        }
        let perturbed = EstimatorGains {
            k: &solution.gains.k + dk,
            m: &solution.gains.m + dm,
        };
        if !perturbed.is_admissible(plant) {
            skipped += 1;
            continue;
        }
        let cascade = shaping
            .filter
            .series(&build_error_operator(plant, &perturbed)?)?;
        let value = statespace::h2_norm(&cascade)?;
        min_margin = min_margin.min(value - base);
        if value < base - SADDLE_SLACK {
            estimator_violations.push(ProbeViolation {
                probe,
                value,
                decrease: base - value,
            });
        }
    }

    let mut noise_violations = Vec::new();
    let m = plant.disturbances() as f64;
    let energy = statespace::h2_norm(&shaping.filter)?.powi(2);
    let lhs = solution.q * base * base + m;
    if (lhs - energy).abs() > 1e-8 * energy {
        noise_violations.push(format!(
            "energy identity: q‖ΔG‖² + m = {lhs:.12e} but ‖G‖² = {energy:.12e}"
        ));
    }
    match riccati::solve_q_dare(plant, &solution.gains, solution.q) {
        Ok(check) => {
            let p_lyap = anisotropy::worst_case_state_covariance(&delta, &check)?;
            let (a, norm, _) = anisotropy_and_norm(&delta, &check, &p_lyap)?;
            if (a - solution.achieved_anisotropy).abs() > 1e-7 {
                noise_violations.push(format!(
                    "anisotropy level: recomputed {a:.12e}, claimed {:.12e}",
                    solution.achieved_anisotropy
                ));
            }
            if (norm - solution.anisotropic_norm).abs() > 1e-7 * (1.0 + norm) {
                noise_violations.push(format!(
                    "anisotropic norm: recomputed {norm:.12e}, claimed {:.12e}",
                    solution.anisotropic_norm
                ));
            }
            let s_gap = (&check.s - &solution.shaping.s).norm();
            let l_gap = (&check.l - &solution.shaping.l).norm();
            if s_gap.max(l_gap) > 1e-7 * (1.0 + check.s.norm() + check.l.norm()) {
                noise_violations.push(format!(
                    "shaping filter is not worst case for the estimator (|ΔS| = {s_gap:.3e}, |ΔL| = {l_gap:.3e})"
                ));
            }
        }
        Err(e) => noise_violations.push(format!("Q-equation at the claimed q failed: {e}")),
    }
    if energy > 0.0 && solution.q > 0.0 {
        let ratio = base / energy.sqrt();
        if (ratio - solution.anisotropic_norm).abs() > 1e-7 * (1.0 + ratio) {
            noise_violations.push(format!(
                "worst-case RMS ratio ‖ΔG‖₂/‖G‖₂ = {ratio:.12e} differs from claimed norm {:.12e}",
                solution.anisotropic_norm
            ));
        }
    }

    Ok(SaddleReport {
        seed,
        probes,
        radius,
        base,
        min_margin,
        skipped,
        estimator_violations,
        noise_violations,
    })
}
