//! Path engine shared by the exit-time, stopping and deviation samplers.
//!
//! A path is advanced until it leaves a band `(lo, hi)`, the integrated
//! intensity reaches a unit-exponential threshold, or the horizon is reached.
//! Barrier crossings inside a step are detected with the Brownian-bridge
//! crossing probability in the scheme's natural coordinate (log-space for
//! GBM), and the exit state is snapped onto the barrier.

use crate::diffusion::{simulate_step, DiffusionModel, PathConfig, Scheme};
use crate::error::Result;
use crate::rng::PathRng;
use crate::smooth::SmoothFn;

/// Barriers in state coordinates; infinite ends are not barriers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }
}

/// Intensity seen by the engine.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Rate<'a> {
    Zero,
    Constant(f64),
    Function(&'a SmoothFn),
}

impl Rate<'_> {
    fn at(&self, x: f64) -> f64 {
        match self {
            Rate::Zero => 0.0,
            Rate::Constant(c) => *c,
            Rate::Function(f) => f.value(x).max(0.0),
        }
    }

    fn allows_long_steps(&self) -> bool {
        !matches!(self, Rate::Function(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PathState {
    pub x: f64,
    pub t: f64,
    /// Integrated intensity so far.
    pub cumulative: f64,
    /// Unit-exponential level at which the Cox process jumps.
    pub threshold: f64,
}

impl PathState {
    pub fn start(x: f64) -> Self {
        Self {
            x,
            t: 0.0,
            cumulative: 0.0,
            threshold: f64::INFINITY,
        }
    }

    pub fn with_threshold(x: f64, threshold: f64) -> Self {
        Self {
            threshold,
            ..Self::start(x)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Event {
    Exit { state: f64, time: f64, upper: bool },
    Jump { state: f64, time: f64 },
    Censored { state: f64, time: f64 },
}

pub(crate) struct Engine<'a> {
    model: &'a DiffusionModel,
    cfg: &'a PathConfig,
}

/// Natural coordinate of an exact scheme: `y = ln x` for GBM, `y = x` for
/// the Wiener process. Constant drift `nu` and volatility `s` in `y`.
#[derive(Debug, Clone, Copy)]
struct Exact {
    log: bool,
    nu: f64,
    s: f64,
}

impl Exact {
    fn to_y(self, x: f64) -> f64 {
        if self.log {
            if x <= 0.0 {
                f64::NEG_INFINITY
            } else {
                x.ln()
            }
        } else {
            x
        }
    }

    fn to_x(self, y: f64) -> f64 {
        if self.log {
            y.exp()
        } else {
            y
        }
    }
}

fn crossing_prob(barrier_gap0: f64, barrier_gap1: f64, var: f64) -> f64 {
    if barrier_gap0.is_infinite() || barrier_gap1.is_infinite() {
        0.0
    } else {
        (-2.0 * barrier_gap0 * barrier_gap1 / var).exp()
    }
}

impl<'a> Engine<'a> {
    pub fn new(model: &'a DiffusionModel, cfg: &'a PathConfig) -> Self {
        Self { model, cfg }
    }

    fn exact(&self) -> Option<Exact> {
        match self.model.scheme() {
            Scheme::Gbm { mu, sigma2 } => Some(Exact {
                log: true,
                nu: mu - 0.5 * sigma2,
                s: sigma2.sqrt(),
            }),
            Scheme::Wiener => Some(Exact {
                log: false,
                nu: 0.0,
                s: 1.0,
            }),
            Scheme::GeneralEuler => None,
        }
    }

    /// Runs until the band is left or the horizon is reached.
    pub fn run_band(&self, state: &mut PathState, band: Band, rng: &mut PathRng) -> Result<Event> {
        self.run(state, band, Rate::Zero, rng)
    }

    pub fn run(
        &self,
        state: &mut PathState,
        band: Band,
        rate: Rate<'_>,
        rng: &mut PathRng,
    ) -> Result<Event> {
        let horizon = self.cfg.horizon;
        let dt = self.cfg.dt;
        let exact = self.exact();
        let coord = exact.unwrap_or(Exact {
            log: false,
            nu: 0.0,
            s: 1.0,
        });
        let ylo = coord.to_y(band.lo);
        let yhi = coord.to_y(band.hi);
        loop {
            let remaining = horizon - state.t;
            if remaining <= 1e-12 * horizon {
                return Ok(Event::Censored {
                    state: state.x,
                    time: horizon,
                });
            }
            let y0 = coord.to_y(state.x);
            let s = match exact {
                Some(e) => e.s,
                None => self.model.vol(state.x),
            };
            let mut step = dt;
            if exact.is_some() && rate.allows_long_steps() && self.cfg.max_stride > 1 {
                let gap = (y0 - ylo).min(yhi - y0);
                let relaxed = gap * gap / (16.0 * s * s);
                step = relaxed.clamp(dt, dt * self.cfg.max_stride as f64);
            }
            step = step.min(remaining);
            let mut jump_at_end = false;
            if let Rate::Constant(c) = rate {
                if c > 0.0 {
                    let to_jump = (state.threshold - state.cumulative) / c;
                    if to_jump <= step {
                        step = to_jump.max(0.0);
                        jump_at_end = true;
                    }
                }
            }
            let z = rng.normal();
            let u = rng.uniform();

            let (x1, elapsed) = match exact {
                Some(e) => {
                    let y1 = y0 + e.nu * step + e.s * step.sqrt() * z;
                    (e.to_x(y1), step)
                }
                None => {
                    let st = simulate_step(self.model, state.x, step, z)?;
                    if st.elapsed < step {
                        jump_at_end = false;
                    }
                    (st.state, st.elapsed)
                }
            };
            let y1 = coord.to_y(x1);

            // Barrier crossing within the step, as a fraction of the step.
            let var = s * s * elapsed;
            let crossing = if y1 >= yhi {
                Some(((yhi - y0) / (y1 - y0), true))
            } else if y1 <= ylo {
                Some(((y0 - ylo) / (y0 - y1), false))
            } else if elapsed > 0.0 {
                let p_hi = crossing_prob(yhi - y0, yhi - y1, var);
                let p_lo = crossing_prob(y0 - ylo, y1 - ylo, var);
                if u < p_hi {
                    Some((0.5, true))
                } else if u < p_hi + p_lo {
                    Some((0.5, false))
                } else {
                    None
                }
            } else {
                None
            };

            // Cox jump within the step.
            let jump = match rate {
                Rate::Zero => None,
                Rate::Constant(c) => {
                    if jump_at_end {
                        Some(1.0)
                    } else {
                        state.cumulative += c * elapsed;
                        None
                    }
                }
                Rate::Function(_) => {
                    let inc = 0.5 * (rate.at(state.x) + rate.at(x1)) * elapsed;
                    if state.cumulative + inc >= state.threshold {
                        Some(crate::strategy::invert_linear(
                            state.cumulative,
                            state.cumulative + inc,
                            state.threshold,
                        ))
                    } else {
                        state.cumulative += inc;
                        None
                    }
                }
            };

            match (crossing, jump) {
                (Some((fc, upper)), j) if j.is_none_or(|fj| fc <= fj) => {
                    let fc = fc.clamp(0.0, 1.0);
                    let x = if upper { band.hi } else { band.lo };
                    let time = state.t + fc * elapsed;
                    state.x = x;
                    state.t = time;
                    return Ok(Event::Exit {
                        state: x,
                        time,
                        upper,
                    });
                }
                (_, Some(fj)) => {
                    let x = if fj >= 1.0 {
                        x1
                    } else {
                        coord.to_x(y0 + fj * (y1 - y0))
                    };
                    let time = state.t + fj * elapsed;
                    state.x = x;
                    state.t = time;
                    state.cumulative = state.threshold;
                    return Ok(Event::Jump { state: x, time });
                }
                _ => {
                    state.x = x1;
                    state.t += elapsed;
                }
            }
        }
    }
}
