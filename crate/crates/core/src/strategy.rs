//! Mixed strategy stopping times `τ^{λ,C} = τ^λ ∧ τ^C`.
//!
//! `τ^C` is the first exit from the continuation set `C`; `τ^λ` is the first
//! jump of a Cox process with intensity `λ(X_t)`, realised as the first time
//! the integrated intensity reaches an independent unit exponential.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionModel, PathConfig};
use crate::error::{Error, Result};
use crate::path::{Band, Engine, Event, PathState, Rate};
use crate::rng::PathRng;
use crate::smooth::SmoothFn;

/// Absolute tolerance for matching a point against `∂C`.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Finite union of disjoint open intervals, sorted left to right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationSet {
    intervals: Vec<(f64, f64)>,
}

impl ContinuationSet {
    pub fn new(mut intervals: Vec<(f64, f64)>) -> Result<Self> {
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(l, r) in &intervals {
            if l.is_nan() || r.is_nan() || l >= r {
                return Err(Error::InvalidParameter(format!(
                    "continuation interval ({l}, {r}) is empty"
                )));
            }
        }
        for w in intervals.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::InvalidParameter(format!(
                    "continuation intervals ({}, {}) and ({}, {}) overlap",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        Ok(Self { intervals })
    }

    /// `C = ∅`: stop immediately everywhere.
    pub fn empty() -> Self {
        Self {
            intervals: Vec::new(),
        }
    }

    /// `C = E`.
    pub fn whole(model: &DiffusionModel) -> Self {
        let e = model.interval();
        Self {
            intervals: vec![(e.lo, e.hi)],
        }
    }

    pub fn interval(l: f64, r: f64) -> Result<Self> {
        Self::new(vec![(l, r)])
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.interval_containing(x).is_some()
    }

    pub fn interval_containing(&self, x: f64) -> Option<(f64, f64)> {
        self.intervals
            .iter()
            .copied()
            .find(|&(l, r)| x > l && x < r)
    }

    /// `∂C`: the distinct finite endpoints, sorted.
    pub fn boundary(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self
            .intervals
            .iter()
            .flat_map(|&(l, r)| [l, r])
            .filter(|v| v.is_finite())
            .collect();
        pts.dedup();
        pts
    }

    /// Boundary points lying inside the model's state interval.
    pub fn boundary_in(&self, model: &DiffusionModel) -> Vec<f64> {
        self.boundary()
            .into_iter()
            .filter(|&b| model.contains(b))
            .collect()
    }

    /// Checks every interval lies within the state interval.
    pub fn check_within(&self, model: &DiffusionModel) -> Result<()> {
        let e = model.interval();
        for &(l, r) in &self.intervals {
            if l < e.lo || r > e.hi {
                return Err(Error::Domain {
                    what: "continuation interval end",
                    value: if l < e.lo { l } else { r },
                    domain: e.to_string(),
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for ContinuationSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.intervals.is_empty() {
            return write!(f, "∅");
        }
        let parts: Vec<String> = self
            .intervals
            .iter()
            .map(|(l, r)| format!("({l}, {r})"))
            .collect();
        write!(f, "{}", parts.join(" ∪ "))
    }
}

/// Location of a point relative to `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointClass {
    InC,
    IntComplement,
    Boundary,
}

pub fn classify_point(c: &ContinuationSet, x: f64) -> PointClass {
    if c.boundary().iter().any(|&b| (x - b).abs() <= BOUNDARY_TOL) {
        PointClass::Boundary
    } else if c.contains(x) {
        PointClass::InC
    } else {
        PointClass::IntComplement
    }
}

/// Stopping intensity `λ(·) ≥ 0`.
#[derive(Debug, Clone)]
pub enum Intensity {
    Zero,
    Constant(f64),
    Function { f: SmoothFn, label: String },
}

impl Intensity {
    pub fn constant(c: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "intensity {c} must be finite and non-negative"
            )));
        }
        Ok(if c == 0.0 {
            Intensity::Zero
        } else {
            Intensity::Constant(c)
        })
    }

    pub fn function(f: SmoothFn, label: impl Into<String>) -> Self {
        Intensity::Function {
            f,
            label: label.into(),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            Intensity::Zero => 0.0,
            Intensity::Constant(c) => *c,
            Intensity::Function { f, .. } => f.value(x),
        }
    }

    /// Multiplies the intensity by a non-negative constant.
    pub fn scaled(&self, k: f64) -> Self {
        match self {
            Intensity::Zero => Intensity::Zero,
            Intensity::Constant(c) => Intensity::constant(c * k).unwrap_or(Intensity::Zero),
            Intensity::Function { f, label } => {
                let g = f.clone();
                Intensity::Function {
                    f: SmoothFn::new(move |x| k * g.value(x)),
                    label: format!("{k}*{label}"),
                }
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Intensity::Zero => "0".into(),
            Intensity::Constant(c) => format!("{c}"),
            Intensity::Function { label, .. } => label.clone(),
        }
    }

    pub(crate) fn rate(&self) -> Rate<'_> {
        match self {
            Intensity::Zero => Rate::Zero,
            Intensity::Constant(c) => Rate::Constant(*c),
            Intensity::Function { f, .. } => Rate::Function(f),
        }
    }
}

/// A mixed (Markov) strategy: intensity plus continuation set.
#[derive(Debug, Clone)]
pub struct MixedStrategy {
    pub intensity: Intensity,
    pub continuation: ContinuationSet,
    pub label: String,
}

impl MixedStrategy {
    pub fn new(intensity: Intensity, continuation: ContinuationSet) -> Self {
        Self {
            intensity,
            continuation,
            label: String::new(),
        }
    }

    pub fn labelled(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Stop immediately everywhere (`C = ∅`).
    pub fn immediate() -> Self {
        Self::new(Intensity::Zero, ContinuationSet::empty()).labelled("immediate stop")
    }

    /// First exit from `C` (no randomisation).
    pub fn pure(continuation: ContinuationSet) -> Self {
        Self::new(Intensity::Zero, continuation)
    }

    pub fn echo(&self) -> StrategyEcho {
        StrategyEcho {
            label: self.label.clone(),
            intensity: self.intensity.describe(),
            continuation: self.continuation.intervals().to_vec(),
        }
    }
}

/// Serializable description of a strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyEcho {
    pub label: String,
    pub intensity: String,
    pub continuation: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    CoxJump,
    ExitC,
    ImmediateStop,
    Censored,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopOutcome {
    pub state: f64,
    pub time: f64,
    pub kind: StopKind,
}

/// Samples one realisation of `τ^{λ,C}` from `x`.
pub fn sample_stop(
    model: &DiffusionModel,
    strategy: &MixedStrategy,
    x: f64,
    config: &PathConfig,
    rng: &mut PathRng,
) -> Result<StopOutcome> {
    model.check_interior(x)?;
    let threshold = rng.exp1();
    let Some((l, r)) = strategy.continuation.interval_containing(x) else {
        return Ok(StopOutcome {
            state: x,
            time: 0.0,
            kind: StopKind::ImmediateStop,
        });
    };
    let engine = Engine::new(model, config);
    let mut state = PathState::with_threshold(x, threshold);
    let event = engine.run(&mut state, Band::new(l, r), strategy.intensity.rate(), rng)?;
    Ok(match event {
        Event::Exit { state, time, .. } => StopOutcome {
            state,
            time,
            kind: StopKind::ExitC,
        },
        Event::Jump { state, time } => StopOutcome {
            state,
            time,
            kind: StopKind::CoxJump,
        },
        Event::Censored { state, time } => StopOutcome {
            state,
            time,
            kind: StopKind::Censored,
        },
    })
}

/// `n_paths` stopping outcomes; path `i` uses stream `i` of `config.seed`.
pub fn sample_stops(
    model: &DiffusionModel,
    strategy: &MixedStrategy,
    x: f64,
    config: &PathConfig,
    n_paths: usize,
) -> Result<Vec<StopOutcome>> {
    config.validate()?;
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = config.rng(i);
            sample_stop(model, strategy, x, config, &mut rng)
        })
        .collect()
}

/// First time a piecewise-linear cumulative intensity reaches `target`.
///
/// `times` and `cumulative` are the grid and the (nondecreasing) integrated
/// intensity at the grid nodes.
pub fn integrated_intensity_invert(times: &[f64], cumulative: &[f64], target: f64) -> Result<f64> {
    if times.len() != cumulative.len() || times.is_empty() {
        return Err(Error::InvalidParameter(
            "time and intensity grids must be non-empty and of equal length".into(),
        ));
    }
    if cumulative.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter(
            "integrated intensity must be nondecreasing".into(),
        ));
    }
    if target <= cumulative[0] {
        return Ok(times[0]);
    }
    for i in 1..times.len() {
        if cumulative[i] >= target {
            let frac = invert_linear(cumulative[i - 1], cumulative[i], target);
            return Ok(times[i - 1] + frac * (times[i] - times[i - 1]));
        }
    }
    Err(Error::TargetNotReached {
        target,
        last: *cumulative.last().unwrap(),
    })
}

/// Fraction in `[0, 1]` at which the segment from `a` to `b` reaches `target`.
pub(crate) fn invert_linear(a: f64, b: f64, target: f64) -> f64 {
    if b <= a {
        1.0
    } else {
        ((target - a) / (b - a)).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_examples() {
        let c = ContinuationSet::interval(0.0, 0.41).unwrap();
        assert_eq!(classify_point(&c, 0.2), PointClass::InC);
        assert_eq!(classify_point(&c, 0.41), PointClass::Boundary);
        assert_eq!(classify_point(&c, 0.41 + 5e-13), PointClass::Boundary);
        assert_eq!(classify_point(&c, 0.5), PointClass::IntComplement);
    }

    #[test]
    fn shared_endpoint_is_one_boundary_point() {
        let c = ContinuationSet::new(vec![(1.0, 2.0), (0.0, 1.0)]).unwrap();
        assert_eq!(c.boundary(), vec![0.0, 1.0, 2.0]);
        assert_eq!(classify_point(&c, 1.0), PointClass::Boundary);
        assert!(ContinuationSet::new(vec![(0.0, 1.5), (1.0, 2.0)]).is_err());
        assert!(ContinuationSet::interval(1.0, 1.0).is_err());
    }

    #[test]
    fn boundary_excludes_state_interval_ends() {
        let m = DiffusionModel::gbm(0.07, 0.45).unwrap();
        let c = ContinuationSet::interval(0.0, 0.41).unwrap();
        assert_eq!(c.boundary_in(&m), vec![0.41]);
        assert!(ContinuationSet::whole(&m).boundary_in(&m).is_empty());
    }

    #[test]
    fn invert_examples() {
        let t = [0.0, 1.0, 2.0];
        assert_eq!(
            integrated_intensity_invert(&t, &[0.0, 1.0, 2.0], 0.5).unwrap(),
            0.5
        );
        assert_eq!(
            integrated_intensity_invert(&t, &[0.0, 0.0, 2.0], 1.0).unwrap(),
            1.5
        );
        assert_eq!(
            integrated_intensity_invert(&t, &[0.0, 1.0, 2.0], 0.0).unwrap(),
            0.0
        );
        assert!(matches!(
            integrated_intensity_invert(&t, &[0.0, 1.0, 2.0], 3.0),
            Err(Error::TargetNotReached { .. })
        ));
        assert!(integrated_intensity_invert(&t, &[0.0, 2.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn immediate_stop_outside_c() {
        let m = DiffusionModel::gbm(0.07, 0.45).unwrap();
        let s = MixedStrategy::pure(ContinuationSet::interval(0.0, 0.4).unwrap());
        let cfg = PathConfig::default();
        let out = sample_stop(&m, &s, 0.5, &cfg, &mut cfg.rng(0)).unwrap();
        assert_eq!(
            out,
            StopOutcome {
                state: 0.5,
                time: 0.0,
                kind: StopKind::ImmediateStop
            }
        );
    }

    #[test]
    fn never_stopping_is_censored() {
        let m = DiffusionModel::wiener();
        let s = MixedStrategy::pure(ContinuationSet::whole(&m));
        let cfg = PathConfig::new(1e-2, 5.0, 3).unwrap();
        for i in 0..20 {
            let out = sample_stop(&m, &s, 0.3, &cfg, &mut cfg.rng(i)).unwrap();
            assert_eq!(out.kind, StopKind::Censored);
            assert_eq!(out.time, 5.0);
        }
    }

    #[test]
    fn exit_state_is_snapped() {
        let m = DiffusionModel::wiener();
        let s = MixedStrategy::pure(ContinuationSet::interval(-1.0, 1.0).unwrap());
        let cfg = PathConfig::default().with_seed(5);
        for i in 0..200 {
            let out = sample_stop(&m, &s, 0.0, &cfg, &mut cfg.rng(i)).unwrap();
            assert_eq!(out.kind, StopKind::ExitC);
            assert!(out.state == 1.0 || out.state == -1.0);
        }
    }

    #[test]
    fn negative_intensity_rejected() {
        assert!(Intensity::constant(-1.0).is_err());
        assert!(matches!(Intensity::constant(0.0).unwrap(), Intensity::Zero));
    }
}
