use std::path::Path;

use anyhow::{bail, Context, Result};
use mixstop::diffusion::{DiffusionModel, PathConfig, Scheme};
use mixstop::equilibrium::{
    constant_intensity_gbm_values, pure_interval_values, GridSpec, ValueFunctions,
};
use mixstop::payoff::{
    make_mean_variance_problem, make_two_equilibria_problem, make_variance_problem, Problem,
};
use mixstop::solvers::{mean_variance_threshold, solve_variance_gbm};
use mixstop::strategy::{ContinuationSet, Intensity, MixedStrategy};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// A verification run, as read from a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub model: ModelSpec,
    pub problem: ProblemSpec,
    pub strategy: StrategySpec,
    pub grid: GridSpec,
    #[serde(default)]
    pub values: ValuesSpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Gbm { mu: f64, sigma2: f64 },
    Wiener,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// `f = x², g = −y², h = x`.
    Variance,
    /// `f = −γx², g = y + γy², h = x`.
    MeanVariance { gamma: f64 },
    /// `f = x⁶/9 − x⁴/3, g = y² − 5y³/9, h = x²`.
    TwoEquilibria,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntensitySpec {
    Zero,
    Constant { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategySpec {
    Immediate,
    /// Constant intensity on the whole state space, solved from the model.
    VarianceEquilibrium,
    /// Continue below `b` (default: the mean-variance threshold), scaled by
    /// `scale`.
    Threshold {
        #[serde(default)]
        b: Option<f64>,
        #[serde(default = "unit")]
        scale: f64,
    },
    /// Explicit intensity and continuation intervals; `null` endpoints are
    /// the ends of the state space.
    Mixed {
        intensity: IntensitySpec,
        continuation: Vec<(Option<f64>, Option<f64>)>,
    },
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValuesSpec {
    #[default]
    ClosedForm,
    MonteCarlo {
        #[serde(default)]
        paths: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub evidence_paths: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub report: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            bail!(
                "unsupported schema {} (expected {SCHEMA_VERSION})",
                self.schema
            );
        }
        GridSpec::new(self.grid.lo, self.grid.hi, self.grid.n)?;
        if let ValuesSpec::MonteCarlo { paths: Some(0) } = self.values {
            bail!("monte_carlo paths must be positive");
        }
        self.build()?;
        Ok(())
    }

    pub fn model(&self) -> Result<DiffusionModel> {
        Ok(match self.model {
            ModelSpec::Gbm { mu, sigma2 } => DiffusionModel::gbm(mu, sigma2)?,
            ModelSpec::Wiener => DiffusionModel::wiener(),
        })
    }

    pub fn problem(&self) -> Result<Problem> {
        Ok(match self.problem {
            ProblemSpec::Variance => make_variance_problem(),
            ProblemSpec::MeanVariance { gamma } => make_mean_variance_problem(gamma)?,
            ProblemSpec::TwoEquilibria => make_two_equilibria_problem(),
        })
    }

    pub fn strategy(&self, model: &DiffusionModel) -> Result<MixedStrategy> {
        match &self.strategy {
            StrategySpec::Immediate => Ok(MixedStrategy::immediate().labelled("immediate")),
            StrategySpec::VarianceEquilibrium => {
                let ModelSpec::Gbm { mu, sigma2 } = self.model else {
                    bail!("variance_equilibrium needs a gbm model");
                };
                Ok(solve_variance_gbm(mu, sigma2)?.strategy())
            }
            StrategySpec::Threshold { b, scale } => {
                let b = match b {
                    Some(b) => *b,
                    None => {
                        let (ModelSpec::Gbm { mu, sigma2 }, ProblemSpec::MeanVariance { gamma }) =
                            (self.model, self.problem)
                        else {
                            bail!("threshold without b needs a gbm model and the mean_variance problem");
                        };
                        let xi = 2.0 * mu / sigma2;
                        if !(xi > 0.0 && xi < 1.0) {
                            bail!("mean-variance threshold needs 0 < 2mu/sigma2 < 1 (got {xi})");
                        }
                        mean_variance_threshold(xi, gamma)
                    }
                };
                if !(scale > &0.0) || !scale.is_finite() {
                    bail!("threshold scale must be positive");
                }
                let b = b * scale;
                let lo = model.interval().lo;
                Ok(MixedStrategy::pure(ContinuationSet::interval(lo, b)?)
                    .labelled(format!("threshold b = {b}")))
            }
            StrategySpec::Mixed {
                intensity,
                continuation,
            } => {
                let e = model.interval();
                let intervals = continuation
                    .iter()
                    .map(|&(l, r)| (l.unwrap_or(e.lo), r.unwrap_or(e.hi)))
                    .collect();
                let c = ContinuationSet::new(intervals)?;
                c.check_within(model)?;
                let intensity = match *intensity {
                    IntensitySpec::Zero => Intensity::Zero,
                    IntensitySpec::Constant { lambda } => Intensity::constant(lambda)?,
                };
                Ok(MixedStrategy::new(intensity, c).labelled("mixed"))
            }
        }
    }

    pub fn build(&self) -> Result<(Problem, DiffusionModel, MixedStrategy)> {
        let model = self.model()?;
        let problem = self.problem()?;
        let strategy = self.strategy(&model)?;
        Ok((problem, model, strategy))
    }
}

/// Closed-form `φ`, `ψ` where one is available for the strategy: `C = ∅`,
/// a single interval with `λ ≡ 0`, or a constant intensity on the whole of
/// a GBM state space.
pub fn closed_form_values(
    problem: &Problem,
    model: &DiffusionModel,
    strategy: &MixedStrategy,
) -> Result<ValueFunctions> {
    let c = strategy.continuation.intervals();
    if c.is_empty() {
        return Ok(ValueFunctions::immediate(problem));
    }
    match (&strategy.intensity, c) {
        (Intensity::Zero, &[(l, r)]) => Ok(pure_interval_values(problem, model, l, r)?),
        (Intensity::Constant(lambda), &[(l, r)]) => match model.scheme() {
            Scheme::Gbm { mu, sigma2 } if (l, r) == (0.0, f64::INFINITY) => {
                Ok(constant_intensity_gbm_values(problem, mu, sigma2, *lambda)?)
            }
            _ => bail!(
                "no closed form for a constant intensity on ({l}, {r}); use monte_carlo values"
            ),
        },
        _ => bail!("no closed form for this strategy; use monte_carlo values"),
    }
}

/// Simulation settings after applying command-line overrides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Resolved {
    pub path: PathConfig,
    pub paths: usize,
    pub evidence_paths: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub paths: Option<usize>,
}

pub const DEFAULT_PATHS: usize = 10_000;
pub const DEFAULT_EVIDENCE_PATHS: usize = 2000;

impl Resolved {
    pub fn new(cfg: Option<&RunConfig>, over: Overrides) -> Result<Self> {
        let sim = cfg.map(|c| c.simulation).unwrap_or_default();
        let defaults = PathConfig::default();
        let path = PathConfig::new(
            over.dt.or(sim.dt).unwrap_or(defaults.dt),
            over.horizon.or(sim.horizon).unwrap_or(defaults.horizon),
            over.seed.or(sim.seed).unwrap_or(defaults.seed),
        )?;
        let cfg_paths = match cfg.map(|c| c.values) {
            Some(ValuesSpec::MonteCarlo { paths }) => paths,
            _ => None,
        };
        let paths = over.paths.or(cfg_paths).unwrap_or(DEFAULT_PATHS);
        if paths == 0 {
            bail!("--paths must be positive");
        }
        Ok(Self {
            path,
            paths,
            evidence_paths: sim.evidence_paths.unwrap_or(DEFAULT_EVIDENCE_PATHS),
        })
    }
}
