//! Seeded Monte Carlo runs of the closed loop
//! `V → shaping filter → W → plant → (Y, Z)`, `Y → estimator → Ẑ`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::statespace::{is_stable_radius, PlantModel, Realization};
use crate::synthesis::{EstimatorGains, ShapingParams};

/// Standard normal samples from a ChaCha8 stream via the Box–Muller transform.
///
/// The stream is a counter-mode cipher keyed by the seed, so sample `j`
/// depends only on `(seed, j)`.
pub struct GaussianSource {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianSource {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        // u1 ∈ (0, 1] keeps the logarithm finite
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

/// How the disturbance `W` is produced from the white noise `V`.
#[derive(Debug, Clone)]
pub enum Shaping {
    /// `w = L x̃ + √S v`, with `x̃ = x - x̂` taken from the simulated plant and
    /// estimator (the feedback arrangement of `G_{K,S,L}`).
    Feedback(ShapingParams),
    /// Open-loop convolution `W = G V` through an arbitrary square filter.
    Filter(Realization),
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    /// Total number of samples, including the burn-in prefix.
    pub length: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Standard deviation of `V`; zero switches the noise off.
    pub noise_scale: f64,
}

impl SimulationConfig {
    pub fn new(length: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            length,
            burn_in,
            seed,
            noise_scale: 1.0,
        }
    }
}

/// A time-indexed sequence of fixed-dimension real vectors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Signal {
    fn with_capacity(dim: usize, length: usize) -> Self {
        Self {
            dim,
            data: Vec::with_capacity(dim * length),
        }
    }

    fn push(&mut self, v: &DVector<f64>) {
        self.data.extend_from_slice(v.as_slice());
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    fn squared_norm(&self, t: usize) -> f64 {
        self.at(t).iter().map(|v| v * v).sum()
    }
}

/// Simulated signals of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub seed: u64,
    pub length: usize,
    pub burn_in: usize,
    pub v: Signal,
    pub w: Signal,
    pub x: Signal,
    pub y: Signal,
    pub z: Signal,
    pub z_hat: Signal,
    pub z_tilde: Signal,
    pub x_tilde: Signal,
}

impl TrajectoryBatch {
    /// Signals in dump order with their short names.
    pub fn signals(&self) -> [(&'static str, &Signal); 8] {
        [
            ("v", &self.v),
            ("w", &self.w),
            ("x", &self.x),
            ("y", &self.y),
            ("z", &self.z),
            ("zhat", &self.z_hat),
            ("ztilde", &self.z_tilde),
            ("xtilde", &self.x_tilde),
        ]
    }

    /// Column names `v1, v2, …, xtilde_n` matching [`TrajectoryBatch::signals`].
    pub fn column_names(&self) -> Vec<String> {
        self.signals()
            .iter()
            .flat_map(|(name, sig)| (1..=sig.dim).map(move |i| format!("{name}{i}")))
            .collect()
    }

    /// Sample covariance of `signal` over the post-burn-in window.
    pub fn covariance(&self, signal: &Signal) -> Mat {
        let d = signal.dim;
        let mut acc = Mat::zeros(d, d);
        let count = self.length - self.burn_in;
        for t in self.burn_in..self.length {
            let row = signal.at(t);
            for i in 0..d {
                for j in 0..d {
                    acc[(i, j)] += row[i] * row[j];
                }
            }
        }
        acc / count as f64
    }
}

fn spectral_radius_checked(what: &'static str, a: &Mat) -> Result<f64> {
    let radius = linalg::spectral_radius(a);
    if is_stable_radius(radius) {
        Ok(radius)
    } else {
        Err(Error::Unstable { what, radius })
    }
}

/// Largest spectral radius among the loop components; errors if any is unstable.
pub fn closed_loop_radius(plant: &PlantModel, gains: &EstimatorGains, shaping: &Shaping) -> Result<f64> {
    let mut rho = spectral_radius_checked("plant", &plant.a)?;
    let a_err = &plant.a - &gains.k * &plant.c;
    rho = rho.max(spectral_radius_checked("estimator", &a_err)?);
    match shaping {
        Shaping::Feedback(sh) => {
            let closed = &a_err + (&plant.b - &gains.k * &plant.d) * &sh.l;
            rho = rho.max(spectral_radius_checked("shaped error loop", &closed)?);
        }
        Shaping::Filter(g) => {
            rho = rho.max(spectral_radius_checked("shaping filter", &g.a)?);
        }
    }
    Ok(rho)
}

/// `10 ⌈ln 10⁻⁶ / ln ρ̂⌉` for the largest closed-loop spectral radius `ρ̂`.
pub fn default_burn_in(plant: &PlantModel, gains: &EstimatorGains, shaping: &Shaping) -> Result<usize> {
    let rho = closed_loop_radius(plant, gains, shaping)?;
    let mixing = if rho <= 0.0 {
        1.0
    } else {
        ((1e-6f64).ln() / rho.ln()).ceil().max(1.0)
    };
    Ok(10 * mixing as usize)
}

/// Runs the plant and estimator under the given disturbance model.
pub fn simulate_chain(
    plant: &PlantModel,
    gains: &EstimatorGains,
    shaping: &Shaping,
    config: &SimulationConfig,
) -> Result<TrajectoryBatch> {
    if config.length <= config.burn_in {
        return Err(Error::InvalidArgument(format!(
            "length {} must exceed burn-in {}",
            config.length, config.burn_in
        )));
    }
    let (n, m, p, r) = (
        plant.states(),
        plant.disturbances(),
        plant.measurements(),
        plant.targets(),
    );
    if gains.k.shape() != (n, p) || gains.m.shape() != (r, p) {
        return Err(Error::Dimension("estimator gains do not fit the plant".into()));
    }
    closed_loop_radius(plant, gains, shaping)?;

    let a_est = &plant.a - &gains.k * &plant.c;
    let c_est = &plant.phi - &gains.m * &plant.c;
    let (root_s, l_gain, filter) = match shaping {
        Shaping::Feedback(sh) => {
            if sh.s.shape() != (m, m) || sh.l.shape() != (m, n) {
                return Err(Error::Dimension("shaping parameters do not fit the plant".into()));
            }
            (Some(linalg::sqrtm_spd(&sh.s)?), Some(sh.l.clone()), None)
        }
        Shaping::Filter(g) => {
            if g.inputs() != m || g.outputs() != m {
                return Err(Error::Dimension(format!(
                    "shaping filter must be {m}x{m}, got {}x{}",
                    g.outputs(),
                    g.inputs()
                )));
            }
            (None, None, Some(g))
        }
    };

    let len = config.length;
    let mut batch = TrajectoryBatch {
        seed: config.seed,
        length: len,
        burn_in: config.burn_in,
        v: Signal::with_capacity(m, len),
        w: Signal::with_capacity(m, len),
        x: Signal::with_capacity(n, len),
        y: Signal::with_capacity(p, len),
        z: Signal::with_capacity(r, len),
        z_hat: Signal::with_capacity(r, len),
        z_tilde: Signal::with_capacity(r, len),
        x_tilde: Signal::with_capacity(n, len),
    };
    let mut source = GaussianSource::new(config.seed);
    let mut x = DVector::zeros(n);
    let mut x_hat = DVector::zeros(n);
    let mut xi = DVector::zeros(filter.map_or(0, |g| g.states()));
    for _ in 0..len {
        let v = DVector::from_fn(m, |_, _| config.noise_scale * source.sample());
        let x_tilde = &x - &x_hat;
        let w = match (&root_s, &l_gain, filter) {
            (Some(root), Some(l), _) => l * &x_tilde + root * &v,
            (_, _, Some(g)) => {
                let w = &g.c * &xi + &g.d * &v;
                xi = &g.a * &xi + &g.b * &v;
                w
            }
            _ => unreachable!("shaping variant fixes the branch"),
        };
        let y = &plant.c * &x + &plant.d * &w;
        let z = &plant.phi * &x + &plant.psi * &w;
        let z_hat = &c_est * &x_hat + &gains.m * &y;
        let z_tilde = &z - &z_hat;
        batch.v.push(&v);
        batch.w.push(&w);
        batch.x.push(&x);
        batch.y.push(&y);
        batch.z.push(&z);
        batch.z_hat.push(&z_hat);
        batch.z_tilde.push(&z_tilde);
        batch.x_tilde.push(&x_tilde);
        x = &plant.a * &x + &plant.b * &w;
        x_hat = &a_est * &x_hat + &gains.k * &y;
    }
    Ok(batch)
}

/// Empirical error-to-noise RMS ratio with its batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsRatio {
    pub ratio: f64,
    pub stderr: f64,
}

pub const RATIO_BATCHES: usize = 16;
pub const MIN_RATIO_SAMPLES: usize = 1000;

/// `sqrt(mean|z̃|² / mean|w|²)` over the post-burn-in window.
pub fn empirical_rms_ratio(batch: &TrajectoryBatch) -> Result<RmsRatio> {
    let count = batch.length - batch.burn_in;
    if count < MIN_RATIO_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_RATIO_SAMPLES} post-burn-in samples, have {count}"
        )));
    }
    let sums = |from: usize, to: usize| {
        (from..to).fold((0.0, 0.0), |(e, d), t| {
            (e + batch.z_tilde.squared_norm(t), d + batch.w.squared_norm(t))
        })
    };
    let (err, dist) = sums(batch.burn_in, batch.length);
    if dist == 0.0 {
        return Err(Error::InvalidArgument(
            "disturbance is identically zero; RMS ratio undefined".into(),
        ));
    }
    let ratio = (err / dist).sqrt();
    let mut means = Vec::with_capacity(RATIO_BATCHES);
    for b in 0..RATIO_BATCHES {
        let from = batch.burn_in + b * count / RATIO_BATCHES;
        let to = batch.burn_in + (b + 1) * count / RATIO_BATCHES;
        let (e, d) = sums(from, to);
        if d == 0.0 {
            return Err(Error::InvalidArgument(
                "disturbance vanishes on a whole batch; RMS ratio undefined".into(),
            ));
        }
        means.push((e / d).sqrt());
    }
    let k = RATIO_BATCHES as f64;
    let mean = means.iter().sum::<f64>() / k;
    let var = means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(RmsRatio {
        ratio,
        stderr: (var / k).sqrt(),
    })
}
