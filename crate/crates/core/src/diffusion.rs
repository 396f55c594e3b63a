//! One-dimensional Itô diffusions `dX = μ(X) dt + σ(X) dW` on an open
//! interval, their characteristic operator, and path simulation.
//!
//! Geometric Brownian motion and the Wiener process are always advanced with
//! their exact transition law. Everything else goes through an Euler step
//! that is kept inside the state interval by step halving.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::{Band, Engine, Event, PathState};
use crate::rng::PathRng;
use crate::smooth::{RealFn, SmoothFn};
use crate::stats::{compensated_mean, MCSummary};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_HORIZON: f64 = 200.0;
pub const DEFAULT_MAX_STRIDE: u32 = 1000;
const MAX_HALVINGS: u32 = 30;

/// Transition law used by the path simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    Gbm { mu: f64, sigma2: f64 },
    Wiener,
    GeneralEuler,
}

/// Open interval `(lo, hi)`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::InvalidParameter(format!(
                "empty interval ({lo}, {hi})"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn real_line() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn positive() -> Self {
        Self {
            lo: 0.0,
            hi: f64::INFINITY,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lo, self.hi)
    }
}

/// A one-dimensional diffusion model.
#[derive(Clone)]
pub struct DiffusionModel {
    scheme: Scheme,
    interval: Interval,
    drift: RealFn,
    vol: RealFn,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("scheme", &self.scheme)
            .field("interval", &self.interval)
            .finish()
    }
}

impl DiffusionModel {
    /// Geometric Brownian motion `dX = μX dt + σX dW` on `(0, ∞)`.
    pub fn gbm(mu: f64, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !mu.is_finite() || !sigma2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "GBM needs finite mu and sigma2 > 0 (got mu = {mu}, sigma2 = {sigma2})"
            )));
        }
        let sigma = sigma2.sqrt();
        Ok(Self {
            scheme: Scheme::Gbm { mu, sigma2 },
            interval: Interval::positive(),
            drift: Arc::new(move |x| mu * x),
            vol: Arc::new(move |x| sigma * x),
        })
    }

    /// Standard Wiener process on the real line.
    pub fn wiener() -> Self {
        Self {
            scheme: Scheme::Wiener,
            interval: Interval::real_line(),
            drift: Arc::new(|_| 0.0),
            vol: Arc::new(|_| 1.0),
        }
    }

    /// Arbitrary coefficients, simulated by Euler steps.
    pub fn general(
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        vol: impl Fn(f64) -> f64 + Send + Sync + 'static,
        interval: Interval,
    ) -> Self {
        Self {
            scheme: Scheme::GeneralEuler,
            interval,
            drift: Arc::new(drift),
            vol: Arc::new(vol),
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn drift(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    pub fn vol(&self, x: f64) -> f64 {
        (self.vol)(x)
    }

    /// `σ²(x)`.
    pub fn variance(&self, x: f64) -> f64 {
        let s = self.vol(x);
        s * s
    }

    pub fn contains(&self, x: f64) -> bool {
        self.interval.contains(x)
    }

    pub fn check_interior(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                what: "x",
                value: x,
                domain: self.interval.to_string(),
            })
        }
    }

    /// Checks `σ(x) > 0` at the given points.
    pub fn check_vol_positive(&self, points: &[f64]) -> Result<()> {
        for &x in points {
            self.check_interior(x)?;
            if !(self.vol(x) > 0.0) {
                return Err(Error::Domain {
                    what: "sigma(x)",
                    value: self.vol(x),
                    domain: "(0, inf)".into(),
                });
            }
        }
        Ok(())
    }

    /// Almost-sure limit of `X_t` as `t → ∞`, when the model has one.
    /// GBM with `μ < σ²/2` converges to 0.
    pub fn limit_at_infinity(&self) -> Option<f64> {
        match self.scheme {
            Scheme::Gbm { mu, sigma2 } if mu < sigma2 / 2.0 => Some(0.0),
            _ => None,
        }
    }

    /// `ξ = 2μ/σ²` for GBM.
    pub fn gbm_xi(&self) -> Option<f64> {
        match self.scheme {
            Scheme::Gbm { mu, sigma2 } => Some(2.0 * mu / sigma2),
            _ => None,
        }
    }
}

/// Simulation settings for a batch of paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub antithetic: bool,
    /// Largest step, as a multiple of `dt`, that exact schemes may take far
    /// away from every barrier. `1` forces fixed steps.
    pub max_stride: u32,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            horizon: DEFAULT_HORIZON,
            seed: 0,
            antithetic: false,
            max_stride: DEFAULT_MAX_STRIDE,
        }
    }
}

impl PathConfig {
    pub fn new(dt: f64, horizon: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            dt,
            horizon,
            seed,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.horizon.is_finite()) || self.dt > self.horizon {
            return Err(Error::InvalidParameter(format!(
                "need 0 < dt <= horizon (dt = {}, horizon = {})",
                self.dt, self.horizon
            )));
        }
        if self.max_stride == 0 {
            return Err(Error::InvalidParameter("max_stride must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn fixed_steps(mut self) -> Self {
        self.max_stride = 1;
        self
    }

    pub fn rng(&self, path_index: u64) -> PathRng {
        PathRng::for_path(self.seed, path_index, self.antithetic)
    }
}

/// `A_X k(x) = μ(x) k'(x) + ½ σ²(x) k''(x)`.
pub fn generator_apply(model: &DiffusionModel, k: &SmoothFn, x: f64) -> Result<f64> {
    model.check_interior(x)?;
    Ok(model.drift(x) * k.d1(x)? + 0.5 * model.variance(x) * k.d2(x)?)
}

/// Result of one simulation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: f64,
    /// Time actually advanced; smaller than the requested step only when an
    /// Euler step had to be halved to stay inside the state interval.
    pub elapsed: f64,
}

/// Advances the state by `dt` using the standard normal draw `z`.
pub fn simulate_step(model: &DiffusionModel, x: f64, dt: f64, z: f64) -> Result<Step> {
    model.check_interior(x)?;
    if dt < 0.0 || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("step dt = {dt}")));
    }
    match model.scheme {
        Scheme::Gbm { mu, sigma2 } => Ok(Step {
            state: x * ((mu - 0.5 * sigma2) * dt + (sigma2 * dt).sqrt() * z).exp(),
            elapsed: dt,
        }),
        Scheme::Wiener => Ok(Step {
            state: x + dt.sqrt() * z,
            elapsed: dt,
        }),
        Scheme::GeneralEuler => {
            let (mu, sigma) = (model.drift(x), model.vol(x));
            let mut h = dt;
            for _ in 0..=MAX_HALVINGS {
                let next = x + mu * h + sigma * h.sqrt() * z;
                if model.contains(next) {
                    return Ok(Step {
                        state: next,
                        elapsed: h,
                    });
                }
                h *= 0.5;
            }
            Err(Error::BoundaryEscape {
                x,
                halvings: MAX_HALVINGS,
            })
        }
    }
}

/// Samples `τ_h = inf{t : |X_t − x| ≥ h}` and the exit state, which is
/// snapped onto `x ± h`. Always uses fixed steps of `config.dt`.
pub fn sample_symmetric_exit(
    model: &DiffusionModel,
    x: f64,
    h: f64,
    config: &PathConfig,
    rng: &mut PathRng,
) -> Result<(f64, f64)> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("h = {h} must be positive")));
    }
    let band = Band::new(x - h, x + h);
    if !(model.contains(band.lo) && model.contains(band.hi)) {
        return Err(Error::Domain {
            what: "x ± h",
            value: x,
            domain: model.interval.to_string(),
        });
    }
    let cfg = config.fixed_steps();
    let engine = Engine::new(model, &cfg);
    let mut state = PathState::start(x);
    match engine.run_band(&mut state, band, rng)? {
        Event::Exit { state: s, time, .. } => Ok((s, time)),
        _ => Err(Error::HorizonExceeded {
            horizon: config.horizon,
        }),
    }
}

/// Moments of `τ_h` over a batch of paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitStats {
    pub h: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub mean_tau: MCSummary,
    pub mean_tau_sq: MCSummary,
    /// Fraction of paths leaving through `x + h`.
    pub up_fraction: MCSummary,
    /// `E k(X_{τ_h})` for the kink function `|y − x|`.
    pub mean_abs_displacement: f64,
}

impl ExitStats {
    /// `h² / E τ_h`, which tends to `σ²(x)`.
    pub fn scaled_rate(&self) -> f64 {
        self.h * self.h / self.mean_tau.estimate
    }

    /// `E τ_h² / E τ_h`, which tends to 0.
    pub fn second_moment_ratio(&self) -> f64 {
        self.mean_tau_sq.estimate / self.mean_tau.estimate
    }
}

/// Step size used for exit-time statistics: fine enough that the step is a
/// small fraction of `E τ_h ≈ h²/σ²(x)`.
pub fn exit_step_for(model: &DiffusionModel, x: f64, h: f64, dt: f64) -> f64 {
    dt.min(h * h / model.variance(x) / 400.0)
}

/// Runs `n_paths` symmetric exits from `x`; path `i` uses stream `i`.
pub fn exit_statistics(
    model: &DiffusionModel,
    x: f64,
    h: f64,
    config: &PathConfig,
    n_paths: usize,
) -> Result<ExitStats> {
    let samples: Vec<(f64, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = config.rng(i);
            sample_symmetric_exit(model, x, h, config, &mut rng)
        })
        .collect::<Result<_>>()?;
    let taus: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let taus_sq: Vec<f64> = taus.iter().map(|t| t * t).collect();
    let ups: Vec<f64> = samples
        .iter()
        .map(|s| if s.0 > x { 1.0 } else { 0.0 })
        .collect();
    let disp: Vec<f64> = samples.iter().map(|s| (s.0 - x).abs()).collect();
    let paired = config.antithetic;
    Ok(ExitStats {
        h,
        dt: config.dt,
        n_paths,
        mean_tau: MCSummary::from_samples(&taus, paired),
        mean_tau_sq: MCSummary::from_samples(&taus_sq, paired),
        up_fraction: MCSummary::from_samples(&ups, paired),
        mean_abs_displacement: compensated_mean(&disp),
    })
}

/// Exit-time scaling over a ladder of `h`, with the step refined per `h`
/// via [`exit_step_for`].
pub fn exit_time_ladder(
    model: &DiffusionModel,
    x: f64,
    hs: &[f64],
    config: &PathConfig,
    n_paths: usize,
) -> Result<Vec<ExitStats>> {
    hs.iter()
        .map(|&h| {
            let cfg = PathConfig {
                dt: exit_step_for(model, x, h, config.dt),
                ..*config
            };
            exit_statistics(model, x, h, &cfg, n_paths)
        })
        .collect()
}

/// Monte Carlo mean of `X_t` from `x` under the model's scheme.
pub fn mean_state_at(
    model: &DiffusionModel,
    x: f64,
    t: f64,
    config: &PathConfig,
    n_paths: usize,
) -> Result<MCSummary> {
    let xs: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = config.rng(i);
            let mut state = x;
            let mut elapsed = 0.0;
            while elapsed < t {
                let dt = config.dt.min(t - elapsed);
                let step = simulate_step(model, state, dt, rng.normal())?;
                state = step.state;
                elapsed += step.elapsed;
            }
            Ok(state)
        })
        .collect::<Result<_>>()?;
    Ok(MCSummary::from_samples(&xs, config.antithetic))
}

/// `P_x(τ_b < ∞) = b^{ξ−1} x^{1−ξ}` for GBM started below the level `b`.
pub fn gbm_hitting_prob(xi: f64, x: f64, b: f64) -> Result<f64> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::Domain {
            what: "xi",
            value: xi,
            domain: "(0, 1)".into(),
        });
    }
    if !(x > 0.0 && x <= b) {
        return Err(Error::Domain {
            what: "x",
            value: x,
            domain: format!("(0, {b}]"),
        });
    }
    Ok((x / b).powf(1.0 - xi))
}

/// `P_x(X leaves (c, d) through d)` for GBM with exponent `ξ`.
pub fn gbm_two_sided_exit(xi: f64, x: f64, c: f64, d: f64) -> Result<f64> {
    if !(c > 0.0 && c <= x && x <= d && c < d) {
        return Err(Error::Domain {
            what: "x",
            value: x,
            domain: format!("[{c}, {d}] with 0 < c < d"),
        });
    }
    if !xi.is_finite() {
        return Err(Error::Domain {
            what: "xi",
            value: xi,
            domain: "finite".into(),
        });
    }
    let s = gbm_scale(xi);
    Ok(((s(x) - s(c)) / (s(d) - s(c))).clamp(0.0, 1.0))
}

/// Scale function of GBM, `x^{1−ξ}` (or `ln x` when `ξ = 1`).
pub fn gbm_scale(xi: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| {
        if xi == 1.0 {
            x.ln()
        } else {
            x.powf(1.0 - xi)
        }
    }
}
