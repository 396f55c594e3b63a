//! Closed-form equilibria for the variance and mean-variance problems under
//! GBM, the ODE for `ψ` when the intensity is positive, and an example with
//! two equilibria.

use serde::Serialize;

use crate::diffusion::DiffusionModel;
use crate::equilibrium::{pure_interval_values, Piecewise, ValueFunctions};
use crate::error::{Error, Result};
use crate::payoff::{
    make_mean_variance_problem, make_two_equilibria_problem, make_variance_problem, Problem,
};
use crate::smooth::SmoothFn;
use crate::strategy::{ContinuationSet, Intensity, MixedStrategy};

fn check_positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{what} = {v} must be positive"
        )))
    }
}

/// Constant-intensity equilibrium of the variance problem under GBM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceSolution {
    pub mu: f64,
    pub sigma2: f64,
    pub lambda: f64,
    /// `J(x) = j_coefficient · x²`.
    pub j_coefficient: f64,
    /// `ψ(x) = psi_slope · x`, `psi_slope = λ/(λ − μ)`.
    pub psi_slope: f64,
    /// `φ(x) = phi_coefficient · x²`, `phi_coefficient = λ/(λ − 2μ − σ²)`.
    pub phi_coefficient: f64,
}

/// `λ = √(−μ²(2μ + σ²)/σ²)`, which requires `2μ + σ² < 0`.
pub fn solve_variance_gbm(mu: f64, sigma2: f64) -> Result<VarianceSolution> {
    check_positive("sigma2", sigma2)?;
    if !mu.is_finite() {
        return Err(Error::InvalidParameter(format!("mu = {mu}")));
    }
    let k = 2.0 * mu + sigma2;
    if !(k < 0.0) {
        return Err(Error::ParameterCondition(format!(
            "2*mu + sigma2 < 0 is required (got {k}); otherwise the variance of X_t diverges"
        )));
    }
    let lambda = (-mu * mu * k / sigma2).sqrt();
    let root = (-k / sigma2).sqrt();
    Ok(VarianceSolution {
        mu,
        sigma2,
        lambda,
        j_coefficient: 1.0 / ((root + 1.0) * (root + 1.0)),
        psi_slope: lambda / (lambda - mu),
        phi_coefficient: lambda / (lambda - k),
    })
}

impl VarianceSolution {
    pub fn j(&self, x: f64) -> f64 {
        self.j_coefficient * x * x
    }

    pub fn psi(&self, x: f64) -> f64 {
        self.psi_slope * x
    }

    pub fn phi(&self, x: f64) -> f64 {
        self.phi_coefficient * x * x
    }

    pub fn model(&self) -> DiffusionModel {
        DiffusionModel::gbm(self.mu, self.sigma2).expect("validated parameters")
    }

    pub fn problem(&self) -> Problem {
        make_variance_problem()
    }

    pub fn strategy(&self) -> MixedStrategy {
        MixedStrategy::new(
            Intensity::Constant(self.lambda),
            ContinuationSet::whole(&self.model()),
        )
        .labelled(format!("constant intensity {}", self.lambda))
    }

    pub fn value_functions(&self) -> ValueFunctions {
        ValueFunctions::closed_form(
            Piecewise::single(SmoothFn::polynomial(&[0.0, 0.0, self.phi_coefficient])),
            Piecewise::single(SmoothFn::polynomial(&[0.0, self.psi_slope])),
        )
    }
}

/// Indifference residual `(f − φ + g'(ψ)(h − ψ))/x²` of the variance problem
/// under GBM with a constant intensity `λ` on `(0, ∞)`:
/// `1 − a − 2c(1 − c)` with `a = λ/(λ − 2μ − σ²)`, `c = λ/(λ − μ)`.
pub fn constant_intensity_residual(mu: f64, sigma2: f64, lambda: f64) -> f64 {
    let a = lambda / (lambda - 2.0 * mu - sigma2);
    let c = lambda / (lambda - mu);
    1.0 - a - 2.0 * c * (1.0 - c)
}

/// Positive roots of [`constant_intensity_residual`] found by a sign scan
/// on a logarithmic grid followed by bisection. The scan starts where both
/// moments are finite and stops at `lambda_max`.
pub fn constant_equilibrium_intensities(mu: f64, sigma2: f64, lambda_max: f64) -> Vec<f64> {
    let floor = mu.max(2.0 * mu + sigma2).max(0.0);
    let lo = if floor > 0.0 {
        floor * (1.0 + 1e-9)
    } else {
        1e-9
    };
    if !(lambda_max > lo) {
        return Vec::new();
    }
    let n = 4000;
    let ratio = (lambda_max / lo).ln() / n as f64;
    let at = |i: usize| lo * (ratio * i as f64).exp();
    let r = |l: f64| constant_intensity_residual(mu, sigma2, l);
    let mut roots = Vec::new();
    let mut prev = (at(0), r(at(0)));
    for i in 1..=n {
        let l = at(i);
        let v = r(l);
        if v == 0.0 {
            roots.push(l);
        } else if prev.1 * v < 0.0 {
            let (mut a, mut b) = (prev.0, l);
            let fa = prev.1;
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if r(m) * fa > 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            roots.push(0.5 * (a + b));
        }
        prev = (l, v);
    }
    roots
}

/// Regimes of the mean-variance problem under GBM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum MeanVarianceRegime {
    /// `μ ≤ 0`.
    StopImmediately,
    /// `0 < μ ≤ σ²/4`: stop when `X` first reaches `b = ξ/(γ(1 − ξ))`.
    Threshold { b: f64 },
    /// `σ²/4 < μ < σ²/2`.
    NoEquilibrium,
    /// `μ ≥ σ²/2`.
    ValueUnbounded,
}

impl MeanVarianceRegime {
    pub fn name(&self) -> &'static str {
        match self {
            MeanVarianceRegime::StopImmediately => "StopImmediately",
            MeanVarianceRegime::Threshold { .. } => "Threshold",
            MeanVarianceRegime::NoEquilibrium => "NoEquilibrium",
            MeanVarianceRegime::ValueUnbounded => "ValueUnbounded",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanVarianceSolution {
    pub mu: f64,
    pub sigma2: f64,
    pub gamma: f64,
    pub xi: f64,
    pub regime: MeanVarianceRegime,
}

/// Threshold value of the mean-variance problem: `b = ξ/(γ(1 − ξ))`.
pub fn mean_variance_threshold(xi: f64, gamma: f64) -> f64 {
    xi / (gamma * (1.0 - xi))
}

pub fn solve_mean_variance_gbm(mu: f64, sigma2: f64, gamma: f64) -> Result<MeanVarianceSolution> {
    check_positive("sigma2", sigma2)?;
    check_positive("gamma", gamma)?;
    if !mu.is_finite() {
        return Err(Error::InvalidParameter(format!("mu = {mu}")));
    }
    let xi = 2.0 * mu / sigma2;
    let regime = if mu <= 0.0 {
        MeanVarianceRegime::StopImmediately
    } else if mu <= sigma2 / 4.0 {
        MeanVarianceRegime::Threshold {
            b: mean_variance_threshold(xi, gamma),
        }
    } else if mu < sigma2 / 2.0 {
        MeanVarianceRegime::NoEquilibrium
    } else {
        MeanVarianceRegime::ValueUnbounded
    };
    Ok(MeanVarianceSolution {
        mu,
        sigma2,
        gamma,
        xi,
        regime,
    })
}

impl MeanVarianceSolution {
    pub fn threshold(&self) -> Option<ThresholdValue> {
        match self.regime {
            MeanVarianceRegime::Threshold { b } => {
                ThresholdValue::new(self.mu, self.sigma2, self.gamma, b).ok()
            }
            _ => None,
        }
    }
}

/// Value functions of the mean-variance problem under GBM for the pure
/// strategy "stop at the first passage above `b`", with exact coefficients:
/// for `x < b`, `J(x) = A x^{1−ξ} + B x^{2−2ξ}`, `A = b^ξ − γb^{1+ξ}`,
/// `B = γb^{2ξ}`; `J(x) = x` for `x ≥ b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdValue {
    pub mu: f64,
    pub sigma2: f64,
    pub gamma: f64,
    pub b: f64,
    pub xi: f64,
    pub a_coef: f64,
    pub b_coef: f64,
}

impl ThresholdValue {
    /// Any threshold `b > 0`, provided `0 < ξ < 1`.
    pub fn new(mu: f64, sigma2: f64, gamma: f64, b: f64) -> Result<Self> {
        check_positive("sigma2", sigma2)?;
        check_positive("gamma", gamma)?;
        check_positive("b", b)?;
        let xi = 2.0 * mu / sigma2;
        if !(xi > 0.0 && xi < 1.0) {
            return Err(Error::Domain {
                what: "xi",
                value: xi,
                domain: "(0, 1)".into(),
            });
        }
        Ok(Self {
            mu,
            sigma2,
            gamma,
            b,
            xi,
            a_coef: b.powf(xi) - gamma * b.powf(1.0 + xi),
            b_coef: gamma * b.powf(2.0 * xi),
        })
    }

    /// The threshold `b = ξ/(γ(1 − ξ))` regardless of the regime.
    pub fn from_formula(mu: f64, sigma2: f64, gamma: f64) -> Result<Self> {
        let xi = 2.0 * mu / sigma2;
        Self::new(mu, sigma2, gamma, mean_variance_threshold(xi, gamma))
    }

    pub fn j(&self, x: f64) -> f64 {
        if x >= self.b {
            x
        } else {
            let e = 1.0 - self.xi;
            self.a_coef * x.powf(e) + self.b_coef * x.powf(2.0 * e)
        }
    }

    pub fn psi(&self, x: f64) -> f64 {
        if x >= self.b {
            x
        } else {
            self.b.powf(self.xi) * x.powf(1.0 - self.xi)
        }
    }

    pub fn phi(&self, x: f64) -> f64 {
        if x >= self.b {
            -self.gamma * x * x
        } else {
            -self.gamma * self.b.powf(1.0 + self.xi) * x.powf(1.0 - self.xi)
        }
    }

    pub fn model(&self) -> DiffusionModel {
        DiffusionModel::gbm(self.mu, self.sigma2).expect("validated parameters")
    }

    pub fn problem(&self) -> Problem {
        make_mean_variance_problem(self.gamma).expect("validated gamma")
    }

    pub fn strategy(&self) -> MixedStrategy {
        MixedStrategy::pure(ContinuationSet::interval(0.0, self.b).expect("b > 0"))
            .labelled(format!("threshold b = {}", self.b))
    }

    /// `(1 − ξ)(1 + γb) − 1`: derivative of `J` at `b−` minus that of the
    /// stopping payoff `x`.
    pub fn smooth_fit_residual(&self) -> f64 {
        (1.0 - self.xi) * (1.0 + self.gamma * self.b) - 1.0
    }

    /// Left side of the second-order boundary inequality at `b`.
    pub fn boundary_second_order(&self) -> f64 {
        let (mu, s2, g, b, xi) = (self.mu, self.sigma2, self.gamma, self.b, self.xi);
        -g * b * b * (2.0 * mu + s2) + (1.0 + 2.0 * g * b) * mu * b + 0.5 * g * xi * xi * s2 * b * b
    }

    pub fn value_functions(&self) -> ValueFunctions {
        let (b, xi, gamma) = (self.b, self.xi, self.gamma);
        let e = 1.0 - xi;
        let power = move |c: f64| {
            SmoothFn::new(move |x: f64| c * x.powf(e))
                .with_d1(move |x: f64| c * e * x.powf(e - 1.0))
                .with_d2(move |x: f64| c * e * (e - 1.0) * x.powf(e - 2.0))
        };
        let phi_in = power(-gamma * b.powf(1.0 + xi));
        let psi_in = power(b.powf(xi));
        let phi = Piecewise::new(
            vec![b],
            vec![phi_in, SmoothFn::polynomial(&[0.0, 0.0, -gamma])],
        )
        .expect("one breakpoint");
        let psi = Piecewise::new(vec![b], vec![psi_in, SmoothFn::polynomial(&[0.0, 1.0])])
            .expect("one breakpoint");
        ValueFunctions::closed_form(phi, psi)
    }
}

/// `−bμ(1 + ξ − ξ²)/(1 − ξ)`: the second-order boundary inequality of the
/// mean-variance problem evaluated at the optimal threshold.
pub fn mean_variance_boundary_value(mu: f64, xi: f64, b: f64) -> f64 {
    -b * mu * (1.0 + xi - xi * xi) / (1.0 - xi)
}

/// The problem and model of the ODE for `ψ` on an interval inside `C`,
/// with `ψ` and `ψ'` given at an anchor point.
#[derive(Debug, Clone)]
pub struct IntensityOdeProblem {
    pub problem: Problem,
    pub model: DiffusionModel,
    pub domain: (f64, f64),
    pub anchor: f64,
    pub psi0: f64,
    pub dpsi0: f64,
    /// Integration step; defaults to `1e-4` of the domain length.
    pub step: Option<f64>,
}

impl IntensityOdeProblem {
    /// Right-hand side `μ{f' + h'g'(ψ)} + ½σ²{f'' + d}` with
    /// `d = g'''(ψ)ψ'²(h − ψ) + 2g''(ψ)ψ'(h' − ψ') + g'(ψ)h''`.
    pub fn forcing(&self, x: f64, psi: f64, dpsi: f64) -> Result<f64> {
        let p = &self.problem;
        let hx = p.h.value(x);
        let (h1, h2) = (p.h.d1(x)?, p.h.d2(x)?);
        let (g1, g2, g3) = (p.g.d1(psi)?, p.g.d2(psi)?, p.g.d3(psi)?);
        let d = g3 * dpsi * dpsi * (hx - psi) + 2.0 * g2 * dpsi * (h1 - dpsi) + g1 * h2;
        Ok(self.model.drift(x) * (p.f.d1(x)? + h1 * g1)
            + 0.5 * self.model.variance(x) * (p.f.d2(x)? + d))
    }

    /// `(h − ψ) g''(ψ)`, guarded against zero.
    fn coefficient(&self, x: f64, psi: f64) -> Result<f64> {
        let gap = self.problem.h.value(x) - psi;
        if gap.abs() <= 1e-12 * psi.abs().max(1.0) {
            return Err(Error::Singularity {
                x,
                reason: "h(x) = psi(x)",
            });
        }
        let g2 = self.problem.g.d2(psi)?;
        if g2.abs() <= 1e-14 {
            return Err(Error::Singularity {
                x,
                reason: "g''(psi(x)) = 0",
            });
        }
        Ok(gap * g2)
    }

    /// `ψ''` from the ODE solved for the highest derivative.
    pub fn second_derivative(&self, x: f64, psi: f64, dpsi: f64) -> Result<f64> {
        let k = self.coefficient(x, psi)?;
        let r = self.forcing(x, psi, dpsi)?;
        Ok(2.0 / self.model.variance(x) * (-r / k - self.model.drift(x) * dpsi))
    }

    /// `−(μψ' + ½σ²ψ'')(h − ψ)g''(ψ) − forcing`.
    pub fn residual(&self, x: f64, psi: f64, dpsi: f64, d2psi: f64) -> Result<f64> {
        let gen = self.model.drift(x) * dpsi + 0.5 * self.model.variance(x) * d2psi;
        let k = (self.problem.h.value(x) - psi) * self.problem.g.d2(psi)?;
        Ok(-gen * k - self.forcing(x, psi, dpsi)?)
    }
}

/// `λ(x) = forcing / ((h − ψ)² g''(ψ))`. The sign is not checked; a
/// negative value means no admissible intensity reproduces this `ψ`.
pub fn intensity_from_psi(ode: &IntensityOdeProblem, x: f64, psi: f64, dpsi: f64) -> Result<f64> {
    let k = ode.coefficient(x, psi)?;
    let gap = ode.problem.h.value(x) - psi;
    Ok(ode.forcing(x, psi, dpsi)? / (k * gap))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdeHalt {
    pub x: f64,
    pub reason: String,
}

/// `ψ` on a grid, ascending in `x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiSolution {
    pub xs: Vec<f64>,
    pub psi: Vec<f64>,
    pub dpsi: Vec<f64>,
    /// Residual of the implicit ODE with `ψ''` differenced from `ψ'`.
    pub residual: Vec<f64>,
    /// Where integration stopped early, if it did.
    pub halted: Option<OdeHalt>,
}

impl PsiSolution {
    pub fn max_abs_residual(&self) -> f64 {
        self.residual.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// Classical fourth-order Runge-Kutta for the system `(ψ, ψ')`, from the
/// anchor towards both ends of the domain. Integration halts where the
/// coefficient of `ψ''` vanishes.
pub fn integrate_psi_ode(ode: &IntensityOdeProblem) -> Result<PsiSolution> {
    let (lo, hi) = ode.domain;
    if !(lo < hi) || !(lo..=hi).contains(&ode.anchor) {
        return Err(Error::InvalidParameter(format!(
            "anchor {} must lie in [{lo}, {hi}]",
            ode.anchor
        )));
    }
    let step = ode.step.unwrap_or(1e-4 * (hi - lo));
    check_positive("step", step)?;
    // Fails here when the anchor data are singular.
    ode.second_derivative(ode.anchor, ode.psi0, ode.dpsi0)?;

    let rhs = |x: f64, y: [f64; 2]| -> Result<[f64; 2]> {
        Ok([y[1], ode.second_derivative(x, y[0], y[1])?])
    };
    let mut halted: Option<OdeHalt> = None;
    let mut sweep = |end: f64| -> Vec<(f64, [f64; 2])> {
        let dist = end - ode.anchor;
        let mut out = Vec::new();
        if dist == 0.0 {
            return out;
        }
        let n = (dist.abs() / step).ceil() as usize;
        let h = dist / n as f64;
        let mut y = [ode.psi0, ode.dpsi0];
        for i in 0..n {
            let x = ode.anchor + h * i as f64;
            let stage = || -> Result<[f64; 2]> {
                let k1 = rhs(x, y)?;
                let k2 = rhs(
                    x + 0.5 * h,
                    [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]],
                )?;
                let k3 = rhs(
                    x + 0.5 * h,
                    [y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]],
                )?;
                let k4 = rhs(x + h, [y[0] + h * k3[0], y[1] + h * k3[1]])?;
                Ok([
                    y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                    y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
                ])
            };
            match stage() {
                Ok(next) if next[0].is_finite() && next[1].is_finite() => {
                    y = next;
                    let xn = if i + 1 == n {
                        end
                    } else {
                        ode.anchor + h * (i + 1) as f64
                    };
                    out.push((xn, y));
                }
                Ok(_) => {
                    halted.get_or_insert(OdeHalt {
                        x,
                        reason: "solution is not finite".into(),
                    });
                    break;
                }
                Err(e) => {
                    let at = match e {
                        Error::Singularity { x: at, .. } => at,
                        _ => x,
                    };
                    halted.get_or_insert(OdeHalt {
                        x: at,
                        reason: e.to_string(),
                    });
                    break;
                }
            }
        }
        out
    };
    let mut left = sweep(lo);
    let right = sweep(hi);
    left.reverse();
    let mut pts = left;
    pts.push((ode.anchor, [ode.psi0, ode.dpsi0]));
    pts.extend(right);

    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let psi: Vec<f64> = pts.iter().map(|p| p.1[0]).collect();
    let dpsi: Vec<f64> = pts.iter().map(|p| p.1[1]).collect();
    let n = xs.len();
    let residual = (0..n)
        .map(|i| {
            let d2 = if n < 2 {
                ode.second_derivative(xs[i], psi[i], dpsi[i])?
            } else if i == 0 {
                (dpsi[1] - dpsi[0]) / (xs[1] - xs[0])
            } else if i == n - 1 {
                (dpsi[n - 1] - dpsi[n - 2]) / (xs[n - 1] - xs[n - 2])
            } else {
                let (h1, h2) = (xs[i] - xs[i - 1], xs[i + 1] - xs[i]);
                (h1 * h1 * dpsi[i + 1] - h2 * h2 * dpsi[i - 1] - (h1 * h1 - h2 * h2) * dpsi[i])
                    / (h1 * h2 * (h1 + h2))
            };
            ode.residual(xs[i], psi[i], dpsi[i], d2)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PsiSolution {
        xs,
        psi,
        dpsi,
        residual,
        halted,
    })
}

/// Wiener process with `f(x) = x⁶/9 − x⁴/3`, `g(y) = y² − 5y³/9`,
/// `h(x) = x²`, which has (at least) two equilibria: stop immediately, and
/// continue on `(−1, 1)` with `λ = 0`.
#[derive(Debug, Clone)]
pub struct TwoEquilibria {
    pub problem: Problem,
    pub model: DiffusionModel,
    pub immediate: MixedStrategy,
    pub interval: MixedStrategy,
    /// `(φ, ψ, J)` on `(−1, 1)` for the interval strategy.
    pub interval_values: (f64, f64, f64),
}

pub fn two_equilibria_example() -> TwoEquilibria {
    TwoEquilibria {
        problem: make_two_equilibria_problem(),
        model: DiffusionModel::wiener(),
        immediate: MixedStrategy::immediate().labelled("stop immediately"),
        interval: MixedStrategy::pure(ContinuationSet::interval(-1.0, 1.0).expect("valid"))
            .labelled("continue on (-1, 1)"),
        interval_values: (-2.0 / 9.0, 1.0, 2.0 / 9.0),
    }
}

impl TwoEquilibria {
    pub fn immediate_value_functions(&self) -> ValueFunctions {
        ValueFunctions::immediate(&self.problem)
    }

    pub fn interval_value_functions(&self) -> ValueFunctions {
        pure_interval_values(&self.problem, &self.model, -1.0, 1.0).expect("finite interval")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_reference_parameters() {
        let s = solve_variance_gbm(-0.1, 0.15).unwrap();
        assert!((s.lambda - 0.057_735_026_919).abs() < 1e-10);
        assert!((s.j_coefficient - 0.401_923_788_647).abs() < 1e-9);
        assert!((s.j_coefficient - (s.phi_coefficient - s.psi_slope.powi(2))).abs() < 1e-12);
        let lhs = s.lambda * s.lambda;
        let rhs = -0.01 * (2.0 * -0.1 + 0.15) / 0.15;
        assert!((lhs - rhs).abs() < 1e-12 * rhs);
    }

    #[test]
    fn variance_other_parameters() {
        let s = solve_variance_gbm(-0.2, 0.1).unwrap();
        assert!((s.lambda - 0.346_410_161_513_775_5).abs() < 1e-12);
        assert!((s.j_coefficient - 1.0 / (3f64.sqrt() + 1.0).powi(2)).abs() < 1e-15);
        assert!((s.j_coefficient - 0.133975).abs() < 1e-6);
    }

    #[test]
    fn variance_parameter_condition() {
        assert!(matches!(
            solve_variance_gbm(-0.5, 1.0),
            Err(Error::ParameterCondition(_))
        ));
        assert!(matches!(
            solve_variance_gbm(0.1, 0.15),
            Err(Error::ParameterCondition(_))
        ));
        assert!(matches!(
            solve_variance_gbm(-0.1, 0.0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn unique_constant_intensity() {
        for (mu, s2) in [(-0.1, 0.15), (-0.2, 0.1), (-1.0, 0.5), (-0.3, 0.55)] {
            let s = solve_variance_gbm(mu, s2).unwrap();
            let roots = constant_equilibrium_intensities(mu, s2, 1e3);
            assert_eq!(roots.len(), 1, "mu={mu} s2={s2}: {roots:?}");
            assert!((roots[0] - s.lambda).abs() < 1e-9 * s.lambda.max(1.0));
            assert!(constant_intensity_residual(mu, s2, s.lambda).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_variance_reference_parameters() {
        let s = solve_mean_variance_gbm(0.07, 0.45, 1.1).unwrap();
        let MeanVarianceRegime::Threshold { b } = s.regime else {
            panic!("{:?}", s.regime)
        };
        assert!((b - 0.4105572).abs() < 1e-6);
        let t = s.threshold().unwrap();
        assert!(t.smooth_fit_residual().abs() < 1e-12);
        let v = mean_variance_boundary_value(0.07, s.xi, b);
        assert!((v + 0.05066).abs() < 1e-5);
        assert!((t.boundary_second_order() - v).abs() < 1e-12);
        assert_eq!(t.j(0.45), 0.45);
        assert!((t.j(b) - b).abs() < 1e-12);
        let x: f64 = 0.2;
        let xi = s.xi;
        let expected = x.powf(1.0 - xi) * (b.powf(xi) - 1.1 * b.powf(1.0 + xi))
            + 1.1 * b.powf(2.0 * xi) * x.powf(2.0 - 2.0 * xi);
        assert!((t.j(x) - expected).abs() < 1e-15);
        assert!(t.j(x) - x >= 0.0);
        assert!((t.j(x) - (t.phi(x) + t.psi(x) + 1.1 * t.psi(x).powi(2))).abs() < 1e-14);
    }

    #[test]
    fn perturbed_threshold_smooth_fit() {
        let t = solve_mean_variance_gbm(0.07, 0.45, 1.1)
            .unwrap()
            .threshold()
            .unwrap();
        let p = ThresholdValue::new(0.07, 0.45, 1.1, 1.1 * t.b).unwrap();
        // (1 − ξ)(1 + 1.1γb) − 1 = 0.1ξ at the optimal b.
        assert!((p.smooth_fit_residual() - 0.1 * t.xi).abs() < 1e-12);
        assert!((p.smooth_fit_residual() - 0.031_111_111_111).abs() < 1e-11);
    }

    #[test]
    fn regimes() {
        let r = |mu| {
            solve_mean_variance_gbm(mu, 0.45, 1.1)
                .unwrap()
                .regime
                .name()
        };
        assert_eq!(r(-0.1), "StopImmediately");
        assert_eq!(r(0.0), "StopImmediately");
        assert_eq!(r(0.1125), "Threshold");
        assert_eq!(r(0.2), "NoEquilibrium");
        assert_eq!(r(0.225), "ValueUnbounded");
        assert_eq!(r(0.5), "ValueUnbounded");
        assert!(solve_mean_variance_gbm(0.1, 0.45, 0.0).is_err());
        assert!(solve_mean_variance_gbm(0.1, -0.45, 1.0).is_err());
    }

    #[test]
    fn intensity_recovers_variance_lambda() {
        let s = solve_variance_gbm(-0.1, 0.15).unwrap();
        let ode = IntensityOdeProblem {
            problem: s.problem(),
            model: s.model(),
            domain: (0.5, 2.0),
            anchor: 1.0,
            psi0: s.psi_slope,
            dpsi0: s.psi_slope,
            step: None,
        };
        for x in [0.5, 1.0, 3.0] {
            let l = intensity_from_psi(&ode, x, s.psi(x), s.psi_slope).unwrap();
            assert!((l - s.lambda).abs() < 1e-9);
        }
        assert!(matches!(
            intensity_from_psi(&ode, 1.0, 1.0, 1.0),
            Err(Error::Singularity { .. })
        ));
    }

    #[test]
    fn ode_reproduces_linear_psi() {
        let s = solve_variance_gbm(-0.1, 0.15).unwrap();
        let ode = IntensityOdeProblem {
            problem: s.problem(),
            model: s.model(),
            domain: (0.5, 2.0),
            anchor: 1.0,
            psi0: s.psi_slope,
            dpsi0: s.psi_slope,
            step: None,
        };
        let sol = integrate_psi_ode(&ode).unwrap();
        assert!(sol.halted.is_none());
        assert_eq!(sol.xs[0], 0.5);
        assert_eq!(*sol.xs.last().unwrap(), 2.0);
        for (x, p) in sol.xs.iter().zip(&sol.psi) {
            assert!(((p - s.psi(*x)) / s.psi(*x)).abs() < 1e-6);
        }
        assert!(sol.max_abs_residual() < 1e-8);
        let bad = IntensityOdeProblem {
            psi0: 1.0,
            dpsi0: 1.0,
            ..ode
        };
        assert!(matches!(
            integrate_psi_ode(&bad),
            Err(Error::Singularity { .. })
        ));
    }

    #[test]
    fn two_equilibria_values() {
        let ex = two_equilibria_example();
        let vf = ex.interval_value_functions();
        let (phi, psi, j) = ex.interval_values;
        assert!((vf.phi(0.0) - phi).abs() < 1e-15);
        assert!((vf.psi(0.3) - psi).abs() < 1e-15);
        assert!((vf.j(&ex.problem, 0.0) - j).abs() < 1e-15);
        let imm = ex.immediate_value_functions();
        assert_eq!(imm.j(&ex.problem, 0.0), 0.0);
        assert!(vf.j(&ex.problem, 0.0) != imm.j(&ex.problem, 0.0));
    }
}
