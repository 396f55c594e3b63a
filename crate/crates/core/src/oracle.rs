//! Independent reference values: direct sampling of GBM at an exponential
//! killing time, and exact dynamic programming on a lattice chain.
//!
//! Nothing here shares code with the path engine. Sampling uses PCG streams
//! rather than the ChaCha streams of the simulators.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::Serialize;

use crate::diffusion::{DiffusionModel, Scheme};
use crate::error::{Error, Result};
use crate::payoff::Problem;
use crate::strategy::MixedStrategy;

/// Mixed into the seed so oracle streams never coincide with simulator ones.
const ORACLE_SALT: u128 = 0x6f72_6163_6c65_5f73_7472_6561_6d5f_7631;

/// Largest lattice accepted by [`discrete_chain_value`].
pub const MAX_CHAIN_STATES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub value: f64,
    pub method: String,
    /// Samples drawn or lattice states used.
    pub size: usize,
    /// Sampling error; 0 for deterministic methods.
    pub std_error: f64,
}

/// `E_x[X_τ^p]` for GBM killed at `τ ~ Exp(λ)`, sampled exactly: `τ` first,
/// then the lognormal `X_τ` given `τ`.
pub fn killed_gbm_moment(
    mu: f64,
    sigma2: f64,
    lambda: f64,
    p: f64,
    x: f64,
    n: usize,
    seed: u64,
) -> Result<OracleResult> {
    let growth = p * mu + 0.5 * p * (p - 1.0) * sigma2;
    if !(lambda > growth) || !(lambda > 0.0) {
        return Err(Error::DivergentMoment {
            order: p,
            lambda,
            bound: growth,
        });
    }
    if !(sigma2 > 0.0) || !(x > 0.0) || n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need sigma2 > 0, x > 0 and n >= 2 (sigma2 = {sigma2}, x = {x}, n = {n})"
        )));
    }
    let nu = mu - 0.5 * sigma2;
    let sigma = sigma2.sqrt();
    let samples: Vec<f64> = (0..n as u128)
        .into_par_iter()
        .map(|i| {
            let mut rng = Pcg64::new(ORACLE_SALT ^ seed as u128, i);
            let e: f64 = rng.sample(Exp1);
            let z: f64 = rng.sample(StandardNormal);
            let tau = e / lambda;
            (x * (nu * tau + sigma * tau.sqrt() * z).exp()).powf(p)
        })
        .collect();
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &s in &samples {
        let t = sum + s;
        comp += if sum.abs() >= s.abs() {
            (sum - t) + s
        } else {
            (s - t) + sum
        };
        sum = t;
    }
    let mean = (sum + comp) / n as f64;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n as f64 - 1.0);
    Ok(OracleResult {
        value: mean,
        method: "exact killed-GBM sampling".into(),
        size: n,
        std_error: (var / n as f64).sqrt(),
    })
}

/// Nearest-neighbour lattice approximating a GBM (in `ln x`) or Wiener
/// process on `[lo, hi]`, with absorbing end points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeChain {
    /// State values of the nodes, ascending.
    pub nodes: Vec<f64>,
    pub dt: f64,
    pub up_prob: f64,
}

impl LatticeChain {
    /// Nodes `lo + k·dx` (Wiener) or `lo·e^{k·dx}` (GBM), with `dx`
    /// shrunk so that `hi` is a node.
    pub fn new(model: &DiffusionModel, lo: f64, hi: f64, dx: f64) -> Result<Self> {
        if !(lo < hi) || !(dx > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lattice [{lo}, {hi}] with step {dx}"
            )));
        }
        let (log, nu, s2) = match model.scheme() {
            Scheme::Wiener => (false, 0.0, 1.0),
            Scheme::Gbm { mu, sigma2 } => {
                if !(lo > 0.0) {
                    return Err(Error::InvalidParameter(
                        "a GBM lattice needs a positive lower end".into(),
                    ));
                }
                (true, mu - 0.5 * sigma2, sigma2)
            }
            Scheme::GeneralEuler => {
                return Err(Error::InvalidParameter(
                    "lattice chains are built for GBM and Wiener models only".into(),
                ))
            }
        };
        let (a, b) = if log { (lo.ln(), hi.ln()) } else { (lo, hi) };
        let steps = ((b - a) / dx).ceil().max(2.0) as usize;
        if steps + 1 > MAX_CHAIN_STATES {
            return Err(Error::InvalidParameter(format!(
                "{} lattice states exceed the limit of {MAX_CHAIN_STATES}",
                steps + 1
            )));
        }
        let d = (b - a) / steps as f64;
        let up_prob = 0.5 * (1.0 + nu * d / s2);
        if !(0.0..=1.0).contains(&up_prob) {
            return Err(Error::InvalidParameter(format!(
                "lattice step {d} too coarse for the drift"
            )));
        }
        let nodes = (0..=steps)
            .map(|k| {
                let y = if k == steps { b } else { a + d * k as f64 };
                if log {
                    if k == 0 {
                        lo
                    } else if k == steps {
                        hi
                    } else {
                        y.exp()
                    }
                } else {
                    y
                }
            })
            .collect();
        Ok(Self {
            nodes,
            dt: d * d / s2,
            up_prob,
        })
    }
}

/// `(φ, ψ, J)` of the chain at `x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainValue {
    pub phi: OracleResult,
    pub psi: OracleResult,
    pub j: OracleResult,
}

/// Solves `V_k = q_k F(x_k) + (1 − q_k)(p V_{k+1} + (1 − p) V_{k−1})` with
/// `V` fixed at the end nodes, by the Thomas algorithm.
fn solve_chain(
    chain: &LatticeChain,
    q: &[f64],
    payoff: &[f64],
    ends: (f64, f64),
) -> Result<Vec<f64>> {
    let n = chain.nodes.len();
    let p = chain.up_prob;
    let m = n - 2;
    let mut v = vec![0.0; n];
    v[0] = ends.0;
    v[n - 1] = ends.1;
    if m == 0 {
        return Ok(v);
    }
    // Row i (node k = i + 1): −a_i V_{k−1} + V_k − c_i V_{k+1} = r_i.
    let mut c_prime = vec![0.0; m];
    let mut r_prime = vec![0.0; m];
    for i in 0..m {
        let k = i + 1;
        let a = (1.0 - q[k]) * (1.0 - p);
        let c = (1.0 - q[k]) * p;
        let mut r = q[k] * payoff[k];
        if i == 0 {
            r += a * ends.0;
        }
        if i == m - 1 {
            r += c * ends.1;
        }
        let denom = if i == 0 {
            1.0
        } else {
            1.0 - a * c_prime[i - 1]
        };
        if !(denom.abs() > 1e-300) || !denom.is_finite() {
            return Err(Error::NonConvergent(format!(
                "lattice system is singular at node {k}"
            )));
        }
        c_prime[i] = c / denom;
        r_prime[i] = if i == 0 {
            r
        } else {
            (r + a * r_prime[i - 1]) / denom
        };
    }
    v[m] = r_prime[m - 1];
    for i in (0..m - 1).rev() {
        v[i + 1] = r_prime[i] + c_prime[i] * v[i + 2];
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonConvergent(
            "lattice solution is not finite".into(),
        ));
    }
    Ok(v)
}

fn interpolate(nodes: &[f64], v: &[f64], x: f64) -> f64 {
    let i = nodes.partition_point(|&n| n < x);
    if i == 0 {
        return v[0];
    }
    if i == nodes.len() {
        return v[nodes.len() - 1];
    }
    let w = (x - nodes[i - 1]) / (nodes[i] - nodes[i - 1]);
    (1.0 - w) * v[i - 1] + w * v[i]
}

/// Exact expectations of `f` and `h` at the stopping time of the chain that
/// stops at node `k` with probability `stop_prob(x_k)` each step and is
/// absorbed at the end nodes, whose values are `end_values` for `(f, h)`.
pub fn discrete_chain_value(
    problem: &Problem,
    chain: &LatticeChain,
    stop_prob: &dyn Fn(f64) -> f64,
    end_values: [(f64, f64); 2],
    x: f64,
) -> Result<ChainValue> {
    let n = chain.nodes.len();
    if !(chain.nodes[0] <= x && x <= chain.nodes[n - 1]) {
        return Err(Error::Domain {
            what: "x",
            value: x,
            domain: format!("[{}, {}]", chain.nodes[0], chain.nodes[n - 1]),
        });
    }
    let q: Vec<f64> = chain
        .nodes
        .iter()
        .map(|&y| stop_prob(y).clamp(0.0, 1.0))
        .collect();
    let fv: Vec<f64> = chain.nodes.iter().map(|&y| problem.f.value(y)).collect();
    let hv: Vec<f64> = chain.nodes.iter().map(|&y| problem.h.value(y)).collect();
    let vf = solve_chain(chain, &q, &fv, (end_values[0].0, end_values[1].0))?;
    let vh = solve_chain(chain, &q, &hv, (end_values[0].1, end_values[1].1))?;
    let phi = interpolate(&chain.nodes, &vf, x);
    let psi = interpolate(&chain.nodes, &vh, x);
    let result = |value: f64| OracleResult {
        value,
        method: "lattice chain dynamic programming".into(),
        size: n,
        std_error: 0.0,
    };
    Ok(ChainValue {
        phi: result(phi),
        psi: result(psi),
        j: result(problem.objective(phi, psi)),
    })
}

/// Chain value of a mixed strategy on the interval of `C` containing `x`,
/// with stop probability `1 − exp(−λ(x)Δt)`. Infinite or state-space ends
/// are truncated at `truncation` (a distance in the lattice coordinate)
/// from `x`, where the chain stops and takes `f`, `h` at the model's limit
/// if it has one, or at the truncation node otherwise.
pub fn strategy_chain_value(
    problem: &Problem,
    model: &DiffusionModel,
    strategy: &MixedStrategy,
    x: f64,
    dx: f64,
    truncation: f64,
) -> Result<ChainValue> {
    let Some((l, r)) = strategy.continuation.interval_containing(x) else {
        let one = |value: f64| OracleResult {
            value,
            method: "immediate stop".into(),
            size: 1,
            std_error: 0.0,
        };
        let (f, h) = (problem.f.value(x), problem.h.value(x));
        return Ok(ChainValue {
            phi: one(f),
            psi: one(h),
            j: one(problem.objective(f, h)),
        });
    };
    let log = matches!(model.scheme(), Scheme::Gbm { .. });
    let e = model.interval();
    let clip_lo = l <= e.lo || !l.is_finite();
    let clip_hi = r >= e.hi || !r.is_finite();
    let lo = if clip_lo {
        if log {
            x * (-truncation).exp()
        } else {
            x - truncation
        }
    } else {
        l
    };
    let hi = if clip_hi {
        if log {
            x * truncation.exp()
        } else {
            x + truncation
        }
    } else {
        r
    };
    let chain = LatticeChain::new(model, lo, hi, dx)?;
    let end = |y: f64, clipped: bool, lower: bool| -> (f64, f64) {
        let at = match (clipped, lower, model.limit_at_infinity()) {
            (true, true, Some(limit)) => limit,
            _ => y,
        };
        (problem.f.value(at), problem.h.value(at))
    };
    let ends = [end(lo, clip_lo, true), end(hi, clip_hi, false)];
    let dt = chain.dt;
    let stop = |y: f64| 1.0 - (-strategy.intensity.value(y) * dt).exp();
    discrete_chain_value(problem, &chain, &stop, ends, x)
}
