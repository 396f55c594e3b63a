//! Numerical verification of the equilibrium conditions for a mixed strategy
//! `τ^{λ,C}`: conditions (I)-(V), smooth fit, deviation gains and the
//! local-time limit.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::diffusion::{exit_step_for, generator_apply, DiffusionModel, PathConfig, Scheme};
use crate::error::{Error, Result};
use crate::path::{Band, Engine, Event, PathState, Rate};
use crate::payoff::{estimate_values, Problem, ValueTriple};
use crate::smooth::SmoothFn;
use crate::stats::{compensated_mean, std_error_of_mean, MCSummary};
use crate::strategy::{
    classify_point, ContinuationSet, Intensity, MixedStrategy, PointClass, StrategyEcho,
};

/// Absolute tolerance for residuals computed from closed forms.
pub const CLOSED_FORM_TOL: f64 = 1e-9;
/// Monte Carlo residuals are judged at this many standard errors.
pub const MC_SIGMAS: f64 = 3.0;
/// Step of the one-sided finite differences used when no derivative is given.
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }
}

/// Piecewise function; piece `i` lives between `breaks[i-1]` and `breaks[i]`.
#[derive(Debug, Clone)]
pub struct Piecewise {
    breaks: Vec<f64>,
    pieces: Vec<SmoothFn>,
}

impl Piecewise {
    pub fn single(f: SmoothFn) -> Self {
        Self {
            breaks: Vec::new(),
            pieces: vec![f],
        }
    }

    pub fn new(breaks: Vec<f64>, pieces: Vec<SmoothFn>) -> Result<Self> {
        if pieces.len() != breaks.len() + 1 {
            return Err(Error::InvalidParameter(format!(
                "{} breakpoints need {} pieces, got {}",
                breaks.len(),
                breaks.len() + 1,
                pieces.len()
            )));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(Self { breaks, pieces })
    }

    fn piece(&self, x: f64, side: Side) -> &SmoothFn {
        let i = match side {
            Side::Left => self.breaks.iter().filter(|&&b| b < x).count(),
            Side::Right => self.breaks.iter().filter(|&&b| b <= x).count(),
        };
        &self.pieces[i]
    }

    pub fn value(&self, x: f64) -> f64 {
        self.piece(x, Side::Left).value(x)
    }

    /// One-sided derivative of order 1 or 2. Pieces without the derivative
    /// fall back to a 4-point one-sided difference with step [`FD_STEP`].
    pub fn derivative(&self, order: u8, x: f64, side: Side) -> Result<f64> {
        let f = self.piece(x, side);
        if f.has_derivative(order) {
            return f.derivative(order, x);
        }
        let s = side.sign();
        let h = FD_STEP;
        let v: Vec<f64> = (0..4).map(|k| f.value(x + s * k as f64 * h)).collect();
        match order {
            1 => Ok(s * (-11.0 * v[0] + 18.0 * v[1] - 9.0 * v[2] + 2.0 * v[3]) / (6.0 * h)),
            2 => Ok((2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / (h * h)),
            _ => Err(Error::MissingDerivative { order }),
        }
    }
}

/// How the value functions were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueMode {
    ClosedForm,
    MonteCarlo { spacing: f64, n_paths: usize },
}

#[derive(Debug, Clone)]
enum Values {
    Closed {
        phi: Piecewise,
        psi: Piecewise,
    },
    Grid {
        points: Vec<(f64, ValueTriple)>,
        continuation: ContinuationSet,
        f: SmoothFn,
        h: SmoothFn,
    },
}

/// `φ_{λ,C}`, `ψ_{λ,C}` and their one-sided derivatives.
#[derive(Debug, Clone)]
pub struct ValueFunctions {
    values: Values,
    mode: ValueMode,
}

impl ValueFunctions {
    pub fn closed_form(phi: Piecewise, psi: Piecewise) -> Self {
        Self {
            values: Values::Closed { phi, psi },
            mode: ValueMode::ClosedForm,
        }
    }

    /// `C = ∅`: `φ = f`, `ψ = h`.
    pub fn immediate(problem: &Problem) -> Self {
        Self::closed_form(
            Piecewise::single(problem.f.clone()),
            Piecewise::single(problem.h.clone()),
        )
    }

    /// Monte Carlo estimates of `φ` and `ψ` at each grid point; all points
    /// share the random streams of `config`.
    pub fn monte_carlo(
        problem: &Problem,
        model: &DiffusionModel,
        strategy: &MixedStrategy,
        grid: &[f64],
        config: &PathConfig,
        n_paths: usize,
    ) -> Result<Self> {
        let mut xs = grid.to_vec();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let points = xs
            .iter()
            .map(|&x| estimate_values(problem, model, strategy, x, config, n_paths).map(|v| (x, v)))
            .collect::<Result<Vec<_>>>()?;
        let spacing = if xs.len() > 1 {
            (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64
        } else {
            0.0
        };
        Ok(Self {
            values: Values::Grid {
                points,
                continuation: strategy.continuation.clone(),
                f: problem.f.clone(),
                h: problem.h.clone(),
            },
            mode: ValueMode::MonteCarlo { spacing, n_paths },
        })
    }

    pub fn mode(&self) -> ValueMode {
        self.mode
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(self.values, Values::Closed { .. })
    }

    /// `(φ, ψ)` at `x` with standard errors. Monte Carlo values between grid
    /// points are linearly interpolated.
    pub fn triple(&self, problem: &Problem, x: f64) -> ValueTriple {
        match &self.values {
            Values::Closed { phi, psi } => ValueTriple::exact(problem, phi.value(x), psi.value(x)),
            Values::Grid {
                points,
                continuation,
                f,
                h,
            } => {
                if !continuation.contains(x) {
                    return ValueTriple::exact(problem, f.value(x), h.value(x));
                }
                let i = points.partition_point(|p| p.0 < x);
                if i < points.len() && points[i].0 == x {
                    return points[i].1;
                }
                if i == 0 {
                    return points[0].1;
                }
                if i == points.len() {
                    return points[i - 1].1;
                }
                let ((x0, a), (x1, b)) = (points[i - 1], points[i]);
                let w = (x - x0) / (x1 - x0);
                let mix = |p: MCSummary, q: MCSummary| MCSummary {
                    estimate: (1.0 - w) * p.estimate + w * q.estimate,
                    std_error: p.std_error.max(q.std_error),
                    n_paths: p.n_paths.max(q.n_paths),
                    censored_fraction: p.censored_fraction.max(q.censored_fraction),
                    high_censoring: p.high_censoring || q.high_censoring,
                };
                let phi = mix(a.phi, b.phi);
                let psi = mix(a.psi, b.psi);
                let mut t = ValueTriple {
                    phi,
                    psi,
                    j: problem.objective(phi.estimate, psi.estimate),
                    j_std_error: 0.0,
                    cov_phi_psi: a.cov_phi_psi.max(b.cov_phi_psi),
                };
                t.j_std_error = t.linear_std_error(1.0, problem.g.d1(psi.estimate).unwrap_or(0.0));
                t
            }
        }
    }

    pub fn phi(&self, x: f64) -> f64 {
        match &self.values {
            Values::Closed { phi, .. } => phi.value(x),
            Values::Grid { .. } => self.grid_pair(x).0,
        }
    }

    pub fn psi(&self, x: f64) -> f64 {
        match &self.values {
            Values::Closed { psi, .. } => psi.value(x),
            Values::Grid { .. } => self.grid_pair(x).1,
        }
    }

    fn grid_pair(&self, x: f64) -> (f64, f64) {
        let Values::Grid { f, h, .. } = &self.values else {
            unreachable!()
        };
        // Only φ and ψ are used; the objective is irrelevant here.
        let dummy = Problem {
            f: f.clone(),
            g: SmoothFn::constant(0.0),
            h: h.clone(),
            name: None,
        };
        let t = self.triple(&dummy, x);
        (t.phi.estimate, t.psi.estimate)
    }

    pub fn j(&self, problem: &Problem, x: f64) -> f64 {
        problem.objective(self.phi(x), self.psi(x))
    }

    /// One-sided derivatives `(φ^{(k)}(x±), ψ^{(k)}(x±))`; closed form only.
    pub fn one_sided(&self, order: u8, x: f64, side: Side) -> Result<(f64, f64)> {
        match &self.values {
            Values::Closed { phi, psi } => Ok((
                phi.derivative(order, x, side)?,
                psi.derivative(order, x, side)?,
            )),
            Values::Grid { .. } => Err(Error::MissingDerivative { order }),
        }
    }
}

/// `φ`, `ψ` for `λ ≡ 0` and a single interval `C = (l, r)`, via the scale
/// function. An endpoint where the scale function is finite but which the
/// process only approaches in the limit (GBM at 0 when `ξ < 1`) is treated as
/// absorbing with value `f(0)`, `h(0)`.
pub fn pure_interval_values(
    problem: &Problem,
    model: &DiffusionModel,
    l: f64,
    r: f64,
) -> Result<ValueFunctions> {
    let e = model.interval();
    if !(l < r) || l < e.lo || r > e.hi {
        return Err(Error::InvalidParameter(format!(
            "({l}, {r}) is not a subinterval of {e}"
        )));
    }
    // Scale function with its first two derivatives, increasing.
    type Scale = (
        fn(f64, f64) -> f64,
        fn(f64, f64) -> f64,
        fn(f64, f64) -> f64,
    );
    let (xi, scale): (f64, Scale) = match model.scheme() {
        Scheme::Wiener => (0.0, (|_, x| x, |_, _| 1.0, |_, _| 0.0)),
        Scheme::Gbm { mu, sigma2 } => {
            let xi = 2.0 * mu / sigma2;
            if xi == 1.0 {
                (xi, (|_, x| x.ln(), |_, x| 1.0 / x, |_, x| -1.0 / (x * x)))
            } else {
                (
                    xi,
                    (
                        |xi, x| x.powf(1.0 - xi) / (1.0 - xi),
                        |xi, x| x.powf(-xi),
                        |xi, x| -xi * x.powf(-xi - 1.0),
                    ),
                )
            }
        }
        Scheme::GeneralEuler => {
            return Err(Error::InvalidParameter(
                "closed-form values need a GBM or Wiener model".into(),
            ))
        }
    };
    let (s, s1, s2) = scale;
    let s_at = |x: f64| -> f64 {
        if x == 0.0 && matches!(model.scheme(), Scheme::Gbm { .. }) {
            if xi < 1.0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        } else if x.is_infinite() {
            if x > 0.0 {
                match model.scheme() {
                    Scheme::Gbm { .. } if xi > 1.0 => 0.0,
                    _ => f64::INFINITY,
                }
            } else {
                f64::NEG_INFINITY
            }
        } else {
            s(xi, x)
        }
    };
    let (sl, sr) = (s_at(l), s_at(r));
    // Exit probability through r: a + b·s(x).
    let (a, b) = match (sl.is_finite(), sr.is_finite()) {
        (true, true) => (-sl / (sr - sl), 1.0 / (sr - sl)),
        (false, true) => (1.0, 0.0),
        (true, false) => (0.0, 0.0),
        (false, false) => {
            return Err(Error::InvalidParameter(format!(
                "the process never leaves ({l}, {r}) and has no limit there"
            )))
        }
    };
    let endpoint = |k: &SmoothFn, y: f64, weight_nonzero: bool| -> Result<f64> {
        if !weight_nonzero {
            return Ok(0.0);
        }
        if y.is_finite() {
            Ok(k.value(y))
        } else {
            Err(Error::InvalidParameter(format!(
                "the process escapes to {y} with positive probability"
            )))
        }
    };
    let build = |k: &SmoothFn| -> Result<Piecewise> {
        let p_right_const = a;
        let uses_r = b != 0.0 || a != 0.0;
        let uses_l = b != 0.0 || a != 1.0;
        let kr = endpoint(k, r, uses_r)?;
        let kl = endpoint(k, l, uses_l)?;
        // k(x) = kl + (kr − kl)(a + b s(x)) inside C.
        let c0 = kl + (kr - kl) * p_right_const;
        let c1 = (kr - kl) * b;
        let inside = SmoothFn::new(move |x| c0 + c1 * s(xi, x))
            .with_d1(move |x| c1 * s1(xi, x))
            .with_d2(move |x| c1 * s2(xi, x));
        let mut breaks = Vec::new();
        let mut pieces = Vec::new();
        if l > e.lo {
            breaks.push(l);
            pieces.push(k.clone());
        }
        pieces.push(inside);
        if r < e.hi {
            breaks.push(r);
            pieces.push(k.clone());
        }
        Piecewise::new(breaks, pieces)
    };
    Ok(ValueFunctions::closed_form(
        build(&problem.f)?,
        build(&problem.h)?,
    ))
}

/// `φ`, `ψ` for a constant intensity on `C = (0, ∞)` under GBM, when `f` and
/// `h` are polynomials: each monomial `x^p` maps to `λ/(λ − pμ − ½p(p−1)σ²) x^p`.
pub fn constant_intensity_gbm_values(
    problem: &Problem,
    mu: f64,
    sigma2: f64,
    lambda: f64,
) -> Result<ValueFunctions> {
    let map = |k: &SmoothFn| -> Result<SmoothFn> {
        let poly = k.as_polynomial().ok_or_else(|| {
            Error::InvalidParameter(
                "constant-intensity closed form needs polynomial f and h".into(),
            )
        })?;
        let coeffs = poly
            .coeffs()
            .iter()
            .enumerate()
            .map(|(p, &c)| {
                if c == 0.0 {
                    return Ok(0.0);
                }
                crate::payoff::closed_form_values_constant_lambda_gbm(
                    mu, sigma2, lambda, p as f64, 1.0,
                )
                .map(|m| c * m)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(SmoothFn::polynomial(&coeffs))
    };
    Ok(ValueFunctions::closed_form(
        Piecewise::single(map(&problem.f)?),
        Piecewise::single(map(&problem.h)?),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Condition {
    I,
    II,
    III,
    IV,
    V,
    SmoothFit,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Condition::I => "I",
            Condition::II => "II",
            Condition::III => "III",
            Condition::IV => "IV",
            Condition::V => "V",
            Condition::SmoothFit => "SmoothFit",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    /// Fail dominates, then inconclusive.
    pub fn combine(verdicts: impl IntoIterator<Item = Verdict>) -> Verdict {
        let mut out = Verdict::Pass;
        for v in verdicts {
            match v {
                Verdict::Fail => return Verdict::Fail,
                Verdict::Inconclusive => out = Verdict::Inconclusive,
                Verdict::Pass => {}
            }
        }
        out
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointResult {
    pub x: f64,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionVerdict {
    pub condition: Condition,
    pub points: Vec<PointResult>,
    pub overall: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub evidence: Vec<GainLadder>,
}

impl ConditionVerdict {
    fn from_points(condition: Condition, points: Vec<PointResult>) -> Self {
        let overall = if points.iter().all(|p| p.pass) {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        Self {
            condition,
            points,
            overall,
            note: None,
            evidence: Vec::new(),
        }
    }

    fn inconclusive(condition: Condition, points: Vec<PointResult>, note: String) -> Self {
        Self {
            condition,
            points,
            overall: Verdict::Inconclusive,
            note: Some(note),
            evidence: Vec::new(),
        }
    }

    pub fn is_pass(&self) -> bool {
        self.overall == Verdict::Pass
    }

    /// Largest residual by absolute value.
    pub fn worst_residual(&self) -> Option<f64> {
        self.points
            .iter()
            .map(|p| p.residual)
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
    }
}

fn tolerance(std_error: f64) -> f64 {
    CLOSED_FORM_TOL + MC_SIGMAS * std_error
}

/// `J(x) − f(x) − g(h(x)) ≥ 0` on `C`.
pub fn check_condition_i(problem: &Problem, vf: &ValueFunctions, grid: &[f64]) -> ConditionVerdict {
    let points = grid
        .iter()
        .map(|&x| {
            let t = vf.triple(problem, x);
            let residual = t.j - problem.immediate_value(x);
            let tol = tolerance(t.j_std_error);
            PointResult {
                x,
                residual,
                tol,
                pass: residual >= -tol,
            }
        })
        .collect();
    ConditionVerdict::from_points(Condition::I, points)
}

/// `A_X f + g'(h) A_X h ≤ 0` on `int(C^c)`.
pub fn check_condition_ii(
    problem: &Problem,
    model: &DiffusionModel,
    grid: &[f64],
) -> Result<ConditionVerdict> {
    let points = grid
        .iter()
        .map(|&x| {
            let residual = stopping_drift(problem, model, x)?;
            Ok(PointResult {
                x,
                residual,
                tol: CLOSED_FORM_TOL,
                pass: residual <= CLOSED_FORM_TOL,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConditionVerdict::from_points(Condition::II, points))
}

/// `A_X f(x) + g'(h(x)) A_X h(x)`.
pub fn stopping_drift(problem: &Problem, model: &DiffusionModel, x: f64) -> Result<f64> {
    let gp = problem.g.d1(problem.h.value(x))?;
    Ok(generator_apply(model, &problem.f, x)? + gp * generator_apply(model, &problem.h, x)?)
}

/// `f − φ + g'(ψ)(h − ψ)` and its standard error.
fn indifference_residual(problem: &Problem, t: &ValueTriple, x: f64) -> (f64, f64) {
    let (phi, psi) = (t.phi.estimate, t.psi.estimate);
    let hx = problem.h.value(x);
    let gp = problem.g.d1(psi).unwrap_or(0.0);
    let gpp = problem.g.d2(psi).unwrap_or(0.0);
    let residual = problem.f.value(x) - phi + gp * (hx - psi);
    // d/dφ = −1, d/dψ = g''(ψ)(h − ψ) − g'(ψ).
    let se = t.linear_std_error(-1.0, gpp * (hx - psi) - gp);
    (residual, se)
}

/// Conditions (III) (`= 0` where `λ > 0`) and (IV) (`≤ 0` where `λ = 0`)
/// on `C`, returned in that order.
pub fn check_condition_iii_iv(
    problem: &Problem,
    strategy: &MixedStrategy,
    vf: &ValueFunctions,
    grid: &[f64],
) -> (ConditionVerdict, ConditionVerdict) {
    let mut iii = Vec::new();
    let mut iv = Vec::new();
    for &x in grid {
        let t = vf.triple(problem, x);
        let (residual, se) = indifference_residual(problem, &t, x);
        let tol = tolerance(se);
        if strategy.intensity.value(x) > 0.0 {
            iii.push(PointResult {
                x,
                residual,
                tol,
                pass: residual.abs() <= tol,
            });
        } else {
            iv.push(PointResult {
                x,
                residual,
                tol,
                pass: residual <= tol,
            });
        }
    }
    (
        ConditionVerdict::from_points(Condition::III, iii),
        ConditionVerdict::from_points(Condition::IV, iv),
    )
}

/// Sides of `x` from which `C` is approached.
fn sides_in_c(c: &ContinuationSet, x: f64) -> Vec<Side> {
    let mut out = Vec::new();
    if c.intervals()
        .iter()
        .any(|&(_, r)| (r - x).abs() <= crate::strategy::BOUNDARY_TOL)
    {
        out.push(Side::Left);
    }
    if c.intervals()
        .iter()
        .any(|&(l, _)| (l - x).abs() <= crate::strategy::BOUNDARY_TOL)
    {
        out.push(Side::Right);
    }
    out
}

/// Smooth fit at a boundary point: the derivative of `J` from the `C` side
/// minus `f' + g'(h) h'`.
pub fn check_smooth_fit(
    problem: &Problem,
    strategy: &MixedStrategy,
    vf: &ValueFunctions,
    x: f64,
) -> Result<ConditionVerdict> {
    let sides = sides_in_c(&strategy.continuation, x);
    if sides.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{x} is not a boundary point of C"
        )));
    }
    let psi = vf.psi(x);
    let gp_psi = problem.g.d1(psi)?;
    let target = problem.f.d1(x)? + problem.g.d1(problem.h.value(x))? * problem.h.d1(x)?;
    let points = sides
        .into_iter()
        .map(|side| {
            let (dphi, dpsi) = vf.one_sided(1, x, side)?;
            let residual = dphi + gp_psi * dpsi - target;
            Ok(PointResult {
                x,
                residual,
                tol: CLOSED_FORM_TOL,
                pass: residual.abs() <= CLOSED_FORM_TOL,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConditionVerdict::from_points(Condition::SmoothFit, points))
}

/// Left-hand side of the second-order boundary inequality:
/// `A_Xφ(x+) + g'(ψ)A_Xψ(x+) + A_Xφ(x−) + g'(ψ)A_Xψ(x−)
///  + g''(ψ)((ψ'(x+) − ψ'(x−))/2)² σ²(x)`.
pub fn boundary_second_order(
    problem: &Problem,
    model: &DiffusionModel,
    vf: &ValueFunctions,
    x: f64,
) -> Result<f64> {
    let psi = vf.psi(x);
    let gp = problem.g.d1(psi)?;
    let gpp = problem.g.d2(psi)?;
    let (mu, s2) = (model.drift(x), model.variance(x));
    let mut total = 0.0;
    let mut slopes = [0.0; 2];
    for (k, side) in [Side::Right, Side::Left].into_iter().enumerate() {
        let (p1, q1) = vf.one_sided(1, x, side)?;
        let (p2, q2) = vf.one_sided(2, x, side)?;
        let a_phi = mu * p1 + 0.5 * s2 * p2;
        let a_psi = mu * q1 + 0.5 * s2 * q2;
        total += a_phi + gp * a_psi;
        slopes[k] = q1;
    }
    let jump = 0.5 * (slopes[0] - slopes[1]);
    Ok(total + gpp * jump * jump * s2)
}

/// Condition (V) at a boundary point through the second-order inequality,
/// which requires smooth fit; otherwise the verdict is inconclusive.
pub fn check_condition_v_sufficient(
    problem: &Problem,
    model: &DiffusionModel,
    strategy: &MixedStrategy,
    vf: &ValueFunctions,
    x: f64,
) -> Result<ConditionVerdict> {
    let fit = match check_smooth_fit(problem, strategy, vf, x) {
        Ok(v) => v,
        Err(e) => {
            return Ok(ConditionVerdict::inconclusive(
                Condition::V,
                Vec::new(),
                format!("one-sided derivatives unavailable at {x}: {e}"),
            ))
        }
    };
    if !fit.is_pass() {
        return Ok(ConditionVerdict::inconclusive(
            Condition::V,
            Vec::new(),
            format!("smooth fit fails at {x}; the second-order test does not apply"),
        ));
    }
    let residual = boundary_second_order(problem, model, vf, x)?;
    Ok(ConditionVerdict::from_points(
        Condition::V,
        vec![PointResult {
            x,
            residual,
            tol: CLOSED_FORM_TOL,
            pass: residual <= CLOSED_FORM_TOL,
        }],
    ))
}

/// A deviation `(η, D)` used on a small interval around the deviating agent.
#[derive(Debug, Clone)]
pub struct Deviation {
    pub eta: Intensity,
    pub region: ContinuationSet,
    pub label: String,
}

impl Deviation {
    pub fn new(eta: Intensity, region: ContinuationSet) -> Self {
        let label = format!("eta={}, D={}", eta.describe(), region);
        Self { eta, region, label }
    }

    /// The finite family `η ∈ {0, λ/2, 2λ, 5}`, `D ∈ {∅, C, E}`, with `λ`
    /// taken at `x`. Duplicates (e.g. `C = E`) are dropped.
    pub fn standard_family(
        model: &DiffusionModel,
        strategy: &MixedStrategy,
        x: f64,
    ) -> Vec<Deviation> {
        let lambda = strategy.intensity.value(x);
        let mut etas = vec![0.0, 0.5 * lambda, 2.0 * lambda, 5.0];
        etas.dedup();
        let mut regions = vec![ContinuationSet::empty()];
        for d in [strategy.continuation.clone(), ContinuationSet::whole(model)] {
            if !regions.contains(&d) {
                regions.push(d);
            }
        }
        let mut out = Vec::new();
        for region in &regions {
            if region.is_empty() {
                out.push(Deviation::new(Intensity::Zero, region.clone()));
                continue;
            }
            let mut seen = Vec::new();
            for &eta in &etas {
                if seen.contains(&eta) {
                    continue;
                }
                seen.push(eta);
                if let Ok(i) = Intensity::constant(eta) {
                    out.push(Deviation::new(i, region.clone()));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainEstimate {
    pub h: f64,
    pub gain: f64,
    pub std_error: f64,
    pub mean_tau: f64,
    pub n_paths: usize,
}

/// Deviation gains over a decreasing ladder of `h`, with the closed-form
/// limit when one is available.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainLadder {
    pub x: f64,
    pub deviation: String,
    pub estimates: Vec<GainEstimate>,
    pub limit: Option<f64>,
}

impl GainLadder {
    /// Smallest-`h` estimate, which is the closest to the limit.
    pub fn finest(&self) -> Option<&GainEstimate> {
        self.estimates.iter().min_by(|a, b| a.h.total_cmp(&b.h))
    }

    /// True when the finest estimate is not below 0 by more than `n_se`
    /// standard errors.
    pub fn consistent_with_nonnegative(&self, n_se: f64) -> bool {
        self.finest()
            .is_none_or(|e| e.gain + n_se * e.std_error >= -CLOSED_FORM_TOL)
    }

    /// True when the finest estimate is below 0 by more than `n_se`
    /// standard errors.
    pub fn clearly_negative(&self, n_se: f64) -> bool {
        self.finest()
            .is_some_and(|e| e.gain + n_se * e.std_error < -CLOSED_FORM_TOL)
    }

    /// Consecutive estimates that move in alternating directions by more
    /// than their combined error bars.
    pub fn oscillates(&self, n_se: f64) -> bool {
        let d: Vec<f64> = self
            .estimates
            .windows(2)
            .filter_map(|w| {
                let diff = w[1].gain - w[0].gain;
                let se = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
                (diff.abs() > n_se * se).then_some(diff)
            })
            .collect();
        d.windows(2).any(|w| w[0].signum() != w[1].signum())
    }
}

/// Closed-form limit of the deviation gain at `x`, when one is known:
/// `(λ − η){f − φ + g'(ψ)(h − ψ)}` on `C ∩ D`, `−A_X f − g'(h)A_X h` on
/// `int(C^c) ∩ D`, and `±∞` or 0 off `D` depending on the sign of
/// `J − f − g(h)`. Boundary points of `C` have no closed form here.
pub fn deviation_limit(
    problem: &Problem,
    model: &DiffusionModel,
    strategy: &MixedStrategy,
    vf: &ValueFunctions,
    deviation: &Deviation,
    x: f64,
) -> Result<Option<f64>> {
    if !deviation.region.contains(x) {
        let num = vf.j(problem, x) - problem.immediate_value(x);
        return Ok(Some(if num.abs() <= CLOSED_FORM_TOL {
            0.0
        } else {
            num.signum() * f64::INFINITY
        }));
    }
    match classify_point(&strategy.continuation, x) {
        PointClass::InC => {
            let t = vf.triple(problem, x);
            let (r, _) = indifference_residual(problem, &t, x);
            Ok(Some(
                (strategy.intensity.value(x) - deviation.eta.value(x)) * r,
            ))
        }
        PointClass::IntComplement => Ok(Some(-stopping_drift(problem, model, x)?)),
        PointClass::Boundary => Ok(None),
    }
}

/// Monte Carlo estimates of `(J_τ(x) − J_{τ◊τ^{η,D}(h)}(x)) / E_x τ_h` for
/// each `h`. The spliced time follows `(η, D)` until `τ_h`; from `X_{τ_h}`
/// the original strategy's value functions supply the continuation values.
#[allow(clippy::too_many_arguments)]
pub fn deviation_gain(
    problem: &Problem,
    model: &DiffusionModel,
    strategy: &MixedStrategy,
    vf: &ValueFunctions,
    deviation: &Deviation,
    x: f64,
    hs: &[f64],
    config: &PathConfig,
    n_paths: usize,
) -> Result<GainLadder> {
    model.check_interior(x)?;
    let j_hat = vf.j(problem, x);
    let region = deviation.region.interval_containing(x);
    let estimates = hs
        .iter()
        .map(|&h| {
            if !(h > 0.0) || !model.contains(x - h) || !model.contains(x + h) {
                return Err(Error::InvalidParameter(format!(
                    "ball of radius {h} around {x} leaves the state space"
                )));
            }
            let cfg = PathConfig {
                dt: exit_step_for(model, x, h, config.dt),
                ..*config
            };
            let ball = Band::new(x - h, x + h);
            let samples: Vec<(f64, f64, f64)> = (0..n_paths as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = cfg.rng(i);
                    let engine = Engine::new(model, &cfg);
                    let threshold = rng.exp1();
                    let mut state = PathState::with_threshold(x, threshold);
                    let stopped = match region {
                        None => Some(x),
                        Some((l, r)) => {
                            let band = Band::new(l.max(ball.lo), r.min(ball.hi));
                            match engine.run(&mut state, band, deviation.eta.rate(), &mut rng)? {
                                Event::Exit {
                                    state: s,
                                    time,
                                    upper,
                                } => {
                                    let edge = if upper { ball.hi } else { ball.lo };
                                    if s == edge {
                                        let t = vf.triple(problem, s);
                                        return Ok((t.phi.estimate, t.psi.estimate, time));
                                    }
                                    Some(s)
                                }
                                Event::Jump { state: s, .. } => Some(s),
                                Event::Censored { state: s, time } => {
                                    let t = vf.triple(problem, s);
                                    return Ok((t.phi.estimate, t.psi.estimate, time));
                                }
                            }
                        }
                    };
                    let s = stopped.unwrap_or(x);
                    // Stopped before τ_h: keep running for the denominator.
                    let mut rest = PathState::start(s);
                    rest.t = state.t;
                    let time = match engine.run(&mut rest, ball, Rate::Zero, &mut rng)? {
                        Event::Exit { time, .. } | Event::Censored { time, .. } => time,
                        Event::Jump { time, .. } => time,
                    };
                    Ok((problem.f.value(s), problem.h.value(s), time))
                })
                .collect::<Result<_>>()?;
            let fs: Vec<f64> = samples.iter().map(|s| s.0).collect();
            let hv: Vec<f64> = samples.iter().map(|s| s.1).collect();
            let ts: Vec<f64> = samples.iter().map(|s| s.2).collect();
            let (fm, hm, tm) = (
                compensated_mean(&fs),
                compensated_mean(&hv),
                compensated_mean(&ts),
            );
            let gain = (j_hat - problem.objective(fm, hm)) / tm;
            let gp = problem.g.d1(hm)?;
            let influence: Vec<f64> = samples
                .iter()
                .map(|&(f, hh, t)| (-(f - fm) - gp * (hh - hm) - gain * (t - tm)) / tm)
                .collect();
            let std_error = if cfg.antithetic && n_paths >= 4 {
                let pairs: Vec<f64> = influence.chunks(2).map(compensated_mean).collect();
                std_error_of_mean(&pairs)
            } else {
                std_error_of_mean(&influence)
            };
            Ok(GainEstimate {
                h,
                gain,
                std_error,
                mean_tau: tm,
                n_paths,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GainLadder {
        x,
        deviation: deviation.label.clone(),
        estimates,
        limit: deviation_limit(problem, model, strategy, vf, deviation, x)?,
    })
}

/// Continuous function that is smooth on either side of `at`.
#[derive(Debug, Clone)]
pub struct KinkedFn {
    pub left: SmoothFn,
    pub right: SmoothFn,
    pub at: f64,
}

impl KinkedFn {
    /// `k(y) = |y − at|`.
    pub fn abs(at: f64) -> Self {
        Self {
            left: SmoothFn::polynomial(&[at, -1.0]),
            right: SmoothFn::polynomial(&[-at, 1.0]),
            at,
        }
    }

    pub fn value(&self, y: f64) -> f64 {
        if y < self.at {
            self.left.value(y)
        } else {
            self.right.value(y)
        }
    }

    /// `((k'(at+) − k'(at−))/2)²`.
    pub fn half_jump_sq(&self) -> Result<f64> {
        let j = 0.5 * (self.right.d1(self.at)? - self.left.d1(self.at)?);
        Ok(j * j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalTimePoint {
    pub h: f64,
    pub value: f64,
    pub std_error: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalTimeReport {
    pub x: f64,
    pub target: f64,
    pub ladder: Vec<LocalTimePoint>,
}

impl LocalTimeReport {
    pub fn finest(&self) -> Option<&LocalTimePoint> {
        self.ladder.iter().min_by(|a, b| a.h.total_cmp(&b.h))
    }
}

/// Estimates `(E_x k(X_{τ_h}) − k(x))² / E_x τ_h` over the ladder; the
/// limit is `((k'(x+) − k'(x−))/2)² σ²(x)`.
pub fn local_time_limit_check(
    model: &DiffusionModel,
    k: &KinkedFn,
    x: f64,
    hs: &[f64],
    config: &PathConfig,
    n_paths: usize,
) -> Result<LocalTimeReport> {
    let target = k.half_jump_sq()? * model.variance(x);
    let kx = k.value(x);
    let ladder = hs
        .iter()
        .map(|&h| {
            let cfg = PathConfig {
                dt: exit_step_for(model, x, h, config.dt),
                ..*config
            };
            let samples: Vec<(f64, f64)> = (0..n_paths as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = cfg.rng(i);
                    crate::diffusion::sample_symmetric_exit(model, x, h, &cfg, &mut rng)
                        .map(|(s, t)| (k.value(s) - kx, t))
                })
                .collect::<Result<_>>()?;
            let ks: Vec<f64> = samples.iter().map(|s| s.0).collect();
            let ts: Vec<f64> = samples.iter().map(|s| s.1).collect();
            let (a, t) = (compensated_mean(&ks), compensated_mean(&ts));
            let value = a * a / t;
            let influence: Vec<f64> = samples
                .iter()
                .map(|&(ki, ti)| 2.0 * a / t * (ki - a) - value / t * (ti - t))
                .collect();
            let std_error = std_error_of_mean(&influence);
            Ok(LocalTimePoint {
                h,
                value,
                std_error,
                relative_error: if target != 0.0 {
                    (value - target).abs() / target
                } else {
                    value.abs()
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LocalTimeReport { x, target, ladder })
}

/// Uniform grid `lo, …, hi` with `n` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo <= hi) || n == 0 || (n == 1 && lo != hi) {
            return Err(Error::InvalidParameter(format!(
                "grid [{lo}, {hi}] with {n} points"
            )));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn points(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.n - 1) as f64;
        (0..self.n)
            .map(|i| {
                if i == self.n - 1 {
                    self.hi
                } else {
                    self.lo + step * i as f64
                }
            })
            .collect()
    }
}

/// Settings for the Monte Carlo evidence attached to a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub config: PathConfig,
    /// Paths per ladder rung for boundary evidence; 0 disables it.
    pub evidence_paths: usize,
    pub ladder: Vec<f64>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            config: PathConfig::default(),
            evidence_paths: 2000,
            ladder: vec![0.04, 0.02, 0.01],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassifiedPoint {
    pub x: f64,
    pub class: PointClass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub strategy: StrategyEcho,
    pub grid: GridSpec,
    pub mode: ValueMode,
    pub points: Vec<ClassifiedPoint>,
    pub verdicts: Vec<ConditionVerdict>,
    pub summary: Verdict,
}

impl EquilibriumReport {
    pub fn verdict(&self, condition: Condition) -> Option<&ConditionVerdict> {
        self.verdicts.iter().find(|v| v.condition == condition)
    }

    /// Conditions whose overall verdict is a failure.
    pub fn failures(&self) -> Vec<Condition> {
        self.verdicts
            .iter()
            .filter(|v| v.overall == Verdict::Fail)
            .map(|v| v.condition)
            .collect()
    }
}

/// Checks every applicable condition on the grid plus the boundary points
/// of `C` inside the state space.
pub fn run_full_report(
    problem: &Problem,
    model: &DiffusionModel,
    strategy: &MixedStrategy,
    vf: &ValueFunctions,
    grid: &GridSpec,
    options: &ReportOptions,
) -> Result<EquilibriumReport> {
    let mut xs: Vec<f64> = grid
        .points()
        .into_iter()
        .filter(|&x| model.contains(x))
        .collect();
    xs.extend(strategy.continuation.boundary_in(model));
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| (*a - *b).abs() <= crate::strategy::BOUNDARY_TOL);
    let points: Vec<ClassifiedPoint> = xs
        .iter()
        .map(|&x| ClassifiedPoint {
            x,
            class: classify_point(&strategy.continuation, x),
        })
        .collect();
    let of = |class: PointClass| -> Vec<f64> {
        points
            .iter()
            .filter(|p| p.class == class)
            .map(|p| p.x)
            .collect()
    };
    let in_c = of(PointClass::InC);
    let outside = of(PointClass::IntComplement);
    let boundary = of(PointClass::Boundary);

    let mut verdicts = Vec::new();
    if !in_c.is_empty() {
        verdicts.push(check_condition_i(problem, vf, &in_c));
        let (iii, iv) = check_condition_iii_iv(problem, strategy, vf, &in_c);
        for v in [iii, iv] {
            if !v.points.is_empty() {
                verdicts.push(v);
            }
        }
    }
    if !outside.is_empty() {
        verdicts.push(check_condition_ii(problem, model, &outside)?);
    }
    if !boundary.is_empty() {
        let mut fit_points = Vec::new();
        let mut fit_note = None;
        let mut v_points = Vec::new();
        let mut v_notes = Vec::new();
        let mut evidence = Vec::new();
        for &x in &boundary {
            match check_smooth_fit(problem, strategy, vf, x) {
                Ok(v) => fit_points.extend(v.points),
                Err(e) => fit_note = Some(format!("one-sided derivatives unavailable: {e}")),
            }
            let v = check_condition_v_sufficient(problem, model, strategy, vf, x)?;
            if v.overall == Verdict::Inconclusive {
                v_notes.extend(v.note);
                if options.evidence_paths > 0 {
                    let dev = Deviation::new(Intensity::Zero, ContinuationSet::whole(model));
                    let hs: Vec<f64> = options
                        .ladder
                        .iter()
                        .copied()
                        .filter(|&h| model.contains(x - h) && model.contains(x + h))
                        .collect();
                    evidence.push(deviation_gain(
                        problem,
                        model,
                        strategy,
                        vf,
                        &dev,
                        x,
                        &hs,
                        &options.config,
                        options.evidence_paths,
                    )?);
                }
            } else {
                v_points.extend(v.points);
            }
        }
        let fit = match fit_note {
            Some(note) => ConditionVerdict::inconclusive(Condition::SmoothFit, fit_points, note),
            None => ConditionVerdict::from_points(Condition::SmoothFit, fit_points),
        };
        verdicts.push(fit);
        let mut v = if v_notes.is_empty() {
            ConditionVerdict::from_points(Condition::V, v_points)
        } else {
            let mut v = ConditionVerdict::inconclusive(Condition::V, v_points, v_notes.join("; "));
            if v.points.iter().any(|p| !p.pass) {
                v.overall = Verdict::Fail;
            }
            v
        };
        v.evidence = evidence;
        verdicts.push(v);
    }
    let summary = Verdict::combine(verdicts.iter().map(|v| v.overall));
    Ok(EquilibriumReport {
        strategy: strategy.echo(),
        grid: *grid,
        mode: vf.mode(),
        points,
        verdicts,
        summary,
    })
}
