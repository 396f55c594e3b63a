//! Problems `J_τ(x) = E_x f(X_τ) + g(E_x h(X_τ))` and the evaluation of
//! `φ_τ = E f(X_τ)`, `ψ_τ = E h(X_τ)` and `J_τ`.

use serde::Serialize;

use crate::diffusion::{DiffusionModel, PathConfig};
use crate::error::{Error, Result};
use crate::smooth::SmoothFn;
use crate::stats::{covariance_of_means, MCSummary};
use crate::strategy::{sample_stops, MixedStrategy, StopKind, StopOutcome};

/// The reward triple `(f, g, h)`.
///
/// `f` and `h` need derivatives up to second order, `g` up to third.
/// Boundedness of `f` and `h` from one side is the caller's responsibility
/// for custom problems; it is not checked.
#[derive(Debug, Clone)]
pub struct Problem {
    pub f: SmoothFn,
    pub g: SmoothFn,
    pub h: SmoothFn,
    pub name: Option<String>,
}

impl Problem {
    pub fn new(f: SmoothFn, g: SmoothFn, h: SmoothFn) -> Result<Self> {
        for (order, ok) in [
            (
                1,
                f.has_derivative(1) && h.has_derivative(1) && g.has_derivative(1),
            ),
            (
                2,
                f.has_derivative(2) && h.has_derivative(2) && g.has_derivative(2),
            ),
            (3, g.has_derivative(3)),
        ] {
            if !ok {
                return Err(Error::MissingDerivative { order });
            }
        }
        Ok(Self {
            f,
            g,
            h,
            name: None,
        })
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    /// Finite-difference spot check of all supplied derivatives.
    pub fn check_smoothness(&self, points: &[f64]) -> Result<()> {
        self.f.check_derivatives(points)?;
        self.h.check_derivatives(points)?;
        let hs: Vec<f64> = points.iter().map(|&x| self.h.value(x)).collect();
        self.g.check_derivatives(points)?;
        self.g.check_derivatives(&hs)
    }

    /// Payoff from stopping immediately at `x`: `f(x) + g(h(x))`.
    pub fn immediate_value(&self, x: f64) -> f64 {
        self.f.value(x) + self.g.value(self.h.value(x))
    }

    /// `J = φ + g(ψ)`.
    pub fn objective(&self, phi: f64, psi: f64) -> f64 {
        phi + self.g.value(psi)
    }
}

/// `f(x) = x²`, `g(y) = −y²`, `h(x) = x`: `J_τ = Var_x(X_τ)`.
pub fn make_variance_problem() -> Problem {
    Problem {
        f: SmoothFn::polynomial(&[0.0, 0.0, 1.0]),
        g: SmoothFn::polynomial(&[0.0, 0.0, -1.0]),
        h: SmoothFn::polynomial(&[0.0, 1.0]),
        name: Some("variance".into()),
    }
}

/// `f(x) = −γx²`, `g(y) = y + γy²`, `h(x) = x`:
/// `J_τ = E_x X_τ − γ Var_x(X_τ)`.
pub fn make_mean_variance_problem(gamma: f64) -> Result<Problem> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "risk aversion gamma = {gamma} must be positive"
        )));
    }
    Ok(Problem {
        f: SmoothFn::polynomial(&[0.0, 0.0, -gamma]),
        g: SmoothFn::polynomial(&[0.0, 1.0, gamma]),
        h: SmoothFn::polynomial(&[0.0, 1.0]),
        name: Some(format!("mean-variance(gamma={gamma})")),
    })
}

/// Problem with two distinct equilibria under a Wiener process:
/// `f(x) = x⁶/9 − x⁴/3`, `g(y) = y² − 5y³/9`, `h(x) = x²`.
pub fn make_two_equilibria_problem() -> Problem {
    Problem {
        f: SmoothFn::polynomial(&[0.0, 0.0, 0.0, 0.0, -1.0 / 3.0, 0.0, 1.0 / 9.0]),
        g: SmoothFn::polynomial(&[0.0, 0.0, 1.0, -5.0 / 9.0]),
        h: SmoothFn::polynomial(&[0.0, 0.0, 1.0]),
        name: Some("two-equilibria".into()),
    }
}

/// `φ`, `ψ` and `J` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueTriple {
    pub phi: MCSummary,
    pub psi: MCSummary,
    pub j: f64,
    /// First-order delta-method error of `j`, using `g'(ψ̂)`. Approximate.
    pub j_std_error: f64,
    /// Covariance of the two sample means.
    pub cov_phi_psi: f64,
}

impl ValueTriple {
    pub fn exact(problem: &Problem, phi: f64, psi: f64) -> Self {
        Self {
            phi: MCSummary::exact(phi),
            psi: MCSummary::exact(psi),
            j: problem.objective(phi, psi),
            j_std_error: 0.0,
            cov_phi_psi: 0.0,
        }
    }

    /// Standard error of `a·φ̂ + b·ψ̂`.
    pub fn linear_std_error(&self, a: f64, b: f64) -> f64 {
        let v = a * a * self.phi.std_error.powi(2)
            + 2.0 * a * b * self.cov_phi_psi
            + b * b * self.psi.std_error.powi(2);
        v.max(0.0).sqrt()
    }

    /// `φ + g(ψ)` from the stored parts.
    pub fn recompute_j(&self, problem: &Problem) -> f64 {
        problem.objective(self.phi.estimate, self.psi.estimate)
    }
}

/// Value of `(f, h)` at a stopping outcome. Censored paths take the
/// model's almost-sure limit when it has one, otherwise the terminal state.
pub fn terminal_state(model: &DiffusionModel, outcome: &StopOutcome) -> f64 {
    match (outcome.kind, model.limit_at_infinity()) {
        (StopKind::Censored, Some(limit)) => limit,
        _ => outcome.state,
    }
}

/// Monte Carlo estimate of `(φ, ψ, J)` at `x` over `n_paths` paths.
pub fn estimate_values(
    problem: &Problem,
    model: &DiffusionModel,
    strategy: &MixedStrategy,
    x: f64,
    config: &PathConfig,
    n_paths: usize,
) -> Result<ValueTriple> {
    model.check_interior(x)?;
    if !strategy.continuation.contains(x) {
        return Ok(ValueTriple::exact(
            problem,
            problem.f.value(x),
            problem.h.value(x),
        ));
    }
    let outcomes = sample_stops(model, strategy, x, config, n_paths)?;
    Ok(summarize_outcomes(
        problem,
        model,
        &outcomes,
        config.antithetic,
    ))
}

pub(crate) fn summarize_outcomes(
    problem: &Problem,
    model: &DiffusionModel,
    outcomes: &[StopOutcome],
    paired: bool,
) -> ValueTriple {
    let n = outcomes.len();
    let censored = outcomes
        .iter()
        .filter(|o| o.kind == StopKind::Censored)
        .count();
    let fraction = censored as f64 / n.max(1) as f64;
    let has_limit = model.limit_at_infinity().is_some();
    let (fs, hs): (Vec<f64>, Vec<f64>) = outcomes
        .iter()
        .map(|o| {
            let s = terminal_state(model, o);
            (problem.f.value(s), problem.h.value(s))
        })
        .unzip();
    let phi = MCSummary::from_samples(&fs, paired).with_censoring(fraction, has_limit);
    let psi = MCSummary::from_samples(&hs, paired).with_censoring(fraction, has_limit);
    let mut triple = ValueTriple {
        phi,
        psi,
        j: problem.objective(phi.estimate, psi.estimate),
        j_std_error: 0.0,
        cov_phi_psi: covariance_of_means(&fs, &hs, paired),
    };
    let slope = problem.g.d1(psi.estimate).unwrap_or(0.0);
    triple.j_std_error = triple.linear_std_error(1.0, slope);
    triple
}

/// `E_x[X^p_{τ^λ}] = λ / (λ − pμ − ½p(p−1)σ²) · x^p` for GBM stopped at an
/// independent `Exp(λ)` time.
pub fn closed_form_values_constant_lambda_gbm(
    mu: f64,
    sigma2: f64,
    lambda: f64,
    p: f64,
    x: f64,
) -> Result<f64> {
    let growth = p * mu + 0.5 * p * (p - 1.0) * sigma2;
    if !(lambda > growth) {
        return Err(Error::DivergentMoment {
            order: p,
            lambda,
            bound: growth,
        });
    }
    Ok(lambda / (lambda - growth) * x.powf(p))
}

/// `E_x[X^p_{τ^b}]` for the first passage `τ^b` of GBM above `b`, using
/// `X_t → 0` on paths that never reach `b`: `b^p (x/b)^{1−ξ}`.
pub fn closed_form_values_threshold_gbm(
    mu: f64,
    sigma2: f64,
    b: f64,
    p: f64,
    x: f64,
) -> Result<f64> {
    let xi = 2.0 * mu / sigma2;
    let hit = crate::diffusion::gbm_hitting_prob(xi, x, b)?;
    if !(p > 0.0) {
        return Err(Error::Domain {
            what: "p",
            value: p,
            domain: "(0, inf)".into(),
        });
    }
    Ok(b.powf(p) * hit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_problem() {
        let p = make_variance_problem();
        for x in [0.1, 1.0, 3.7] {
            assert_eq!(p.immediate_value(x), 0.0);
        }
        assert!((p.objective(0.53590, 0.36603) - 0.401_922_039_1).abs() < 1e-9);
        assert_eq!(p.g.d3(1.3).unwrap(), 0.0);
        p.check_smoothness(&[0.2, 1.0, 5.0]).unwrap();
    }

    #[test]
    fn mean_variance_problem() {
        let p = make_mean_variance_problem(1.1).unwrap();
        for x in [0.05, 0.41, 2.0] {
            assert!((p.immediate_value(x) - x).abs() < 1e-15);
        }
        let x = 0.41056;
        assert!((p.g.d1(p.h.value(x)).unwrap() - 1.903232).abs() < 1e-6);
        assert!((p.g.d2(0.3).unwrap() - 2.2).abs() < 1e-15);
        assert!(make_mean_variance_problem(0.0).is_err());
        assert!(make_mean_variance_problem(-1.0).is_err());
    }

    #[test]
    fn two_equilibria_problem_values() {
        let p = make_two_equilibria_problem();
        // f(1) = -2/9, h(1) = 1, g(1) = 4/9
        assert!((p.f.value(1.0) + 2.0 / 9.0).abs() < 1e-15);
        assert!((p.g.value(1.0) - 4.0 / 9.0).abs() < 1e-15);
        assert_eq!(p.immediate_value(0.0), 0.0);
        p.check_smoothness(&[-1.5, 0.0, 0.7, 1.0]).unwrap();
    }

    #[test]
    fn problem_requires_derivatives() {
        let bare = SmoothFn::new(|x| x);
        let poly = SmoothFn::polynomial(&[0.0, 1.0]);
        assert!(Problem::new(bare, poly.clone(), poly.clone()).is_err());
        let g2 = SmoothFn::new(|x| x * x)
            .with_d1(|x| 2.0 * x)
            .with_d2(|_| 2.0);
        assert_eq!(
            Problem::new(poly.clone(), g2, poly).unwrap_err(),
            Error::MissingDerivative { order: 3 }
        );
    }

    #[test]
    fn constant_lambda_moments() {
        let lambda = 0.057_735_026_918_962_58;
        let m1 = closed_form_values_constant_lambda_gbm(-0.1, 0.15, lambda, 1.0, 1.0).unwrap();
        let m2 = closed_form_values_constant_lambda_gbm(-0.1, 0.15, lambda, 2.0, 1.0).unwrap();
        assert!((m1 - 0.36603).abs() < 1e-5);
        assert!((m2 - 0.53590).abs() < 1e-5);
        let fast = closed_form_values_constant_lambda_gbm(-0.1, 0.15, 1e6, 1.0, 1.0).unwrap();
        assert!((fast - 1.0).abs() < 1e-5);
        assert!(matches!(
            closed_form_values_constant_lambda_gbm(0.2, 0.15, 0.1, 1.0, 1.0),
            Err(Error::DivergentMoment { .. })
        ));
    }

    #[test]
    fn threshold_moments() {
        let (mu, s2) = (0.07, 0.45);
        let xi = 2.0 * mu / s2;
        let b = 0.4105572;
        assert!((closed_form_values_threshold_gbm(mu, s2, b, 1.0, b).unwrap() - b).abs() < 1e-15);
        assert!(
            (closed_form_values_threshold_gbm(mu, s2, b, 2.0, b).unwrap() - b * b).abs() < 1e-15
        );
        let v = closed_form_values_threshold_gbm(mu, s2, b, 1.0, 0.2).unwrap();
        assert!((v - b.powf(xi) * 0.2f64.powf(1.0 - xi)).abs() < 1e-15);
        assert!((v - 0.2502).abs() < 1e-4);
        let v2 = closed_form_values_threshold_gbm(mu, s2, b, 2.0, 0.2).unwrap();
        assert!((v2 - b.powf(1.0 + xi) * 0.2f64.powf(1.0 - xi)).abs() < 1e-15);
        // J at the threshold equals b for any b.
        let gamma = 1.1;
        for bb in [0.1, 0.4105572, 3.0] {
            let phi = -gamma * closed_form_values_threshold_gbm(mu, s2, bb, 2.0, bb).unwrap();
            let psi = closed_form_values_threshold_gbm(mu, s2, bb, 1.0, bb).unwrap();
            let j = make_mean_variance_problem(gamma)
                .unwrap()
                .objective(phi, psi);
            assert!((j - bb).abs() < 1e-12);
        }
        assert!(closed_form_values_threshold_gbm(0.3, 0.45, b, 1.0, 0.2).is_err());
    }
}
