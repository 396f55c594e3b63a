//! Monte Carlo summaries and order-independent reductions.

use serde::{Deserialize, Serialize};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_mean(xs: &[f64]) -> f64 {
    let mut s = CompensatedSum::default();
    xs.iter().for_each(|&x| s.add(x));
    s.total() / xs.len() as f64
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCSummary {
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub censored_fraction: f64,
    /// Set when more than 1% of paths were censored and no pathwise limit
    /// was available to stand in for the censored value.
    pub high_censoring: bool,
}

impl MCSummary {
    /// Exact value, zero error.
    pub fn exact(value: f64) -> Self {
        Self {
            estimate: value,
            std_error: 0.0,
            n_paths: 0,
            censored_fraction: 0.0,
            high_censoring: false,
        }
    }

    /// Summary of i.i.d. samples. With `paired`, consecutive samples are
    /// antithetic pairs and the error is computed from the pair means.
    pub fn from_samples(samples: &[f64], paired: bool) -> Self {
        let n = samples.len();
        let estimate = compensated_mean(samples);
        let std_error = if paired && n >= 4 {
            let pairs: Vec<f64> = samples.chunks(2).map(compensated_mean).collect();
            std_error_of_mean(&pairs)
        } else {
            std_error_of_mean(samples)
        };
        Self {
            estimate,
            std_error,
            n_paths: n,
            censored_fraction: 0.0,
            high_censoring: false,
        }
    }

    pub fn with_censoring(mut self, fraction: f64, limit_available: bool) -> Self {
        self.censored_fraction = fraction;
        self.high_censoring = fraction > 0.01 && !limit_available;
        self
    }

    /// Number of standard errors separating the estimate from `target`.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = self.estimate - target;
        if self.std_error > 0.0 {
            d / self.std_error
        } else if d == 0.0 {
            0.0
        } else {
            d.signum() * f64::INFINITY
        }
    }

    pub fn within(&self, target: f64, n_se: f64) -> bool {
        self.z_score(target).abs() <= n_se
    }
}

pub fn std_error_of_mean(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = compensated_mean(xs);
    let mut ss = CompensatedSum::default();
    xs.iter().for_each(|&x| ss.add((x - mean) * (x - mean)));
    (ss.total() / (n as f64 - 1.0) / n as f64).sqrt()
}

/// Covariance of the sample means of `a` and `b`. With `paired`, computed
/// from the pair means of consecutive antithetic samples.
pub fn covariance_of_means(a: &[f64], b: &[f64], paired: bool) -> f64 {
    if paired && a.len() >= 4 {
        let pa: Vec<f64> = a.chunks(2).map(compensated_mean).collect();
        let pb: Vec<f64> = b.chunks(2).map(compensated_mean).collect();
        return covariance_of_means(&pa, &pb, false);
    }
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let (ma, mb) = (compensated_mean(a), compensated_mean(b));
    let mut s = CompensatedSum::default();
    a.iter()
        .zip(b)
        .for_each(|(x, y)| s.add((x - ma) * (y - mb)));
    s.total() / (n as f64 - 1.0) / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.total(), 1000.0);
    }

    #[test]
    fn summary_of_constant_samples() {
        let m = MCSummary::from_samples(&[2.0; 10], false);
        assert_eq!(m.estimate, 2.0);
        assert_eq!(m.std_error, 0.0);
        assert!(m.within(2.0, 3.0));
        assert!(!m.within(2.1, 3.0));
    }

    #[test]
    fn standard_error_matches_formula() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        // sample variance 5/3
        let expected = (5.0f64 / 3.0 / 4.0).sqrt();
        assert!((std_error_of_mean(&xs) - expected).abs() < 1e-15);
    }

    #[test]
    fn covariance_matches_variance_on_diagonal() {
        let xs = [1.0, 2.0, 3.0, 4.0, 7.0, -1.0];
        let se = std_error_of_mean(&xs);
        assert!((covariance_of_means(&xs, &xs, false) - se * se).abs() < 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((covariance_of_means(&xs, &neg, false) + se * se).abs() < 1e-15);
    }

    #[test]
    fn censoring_flag() {
        let m = MCSummary::exact(1.0).with_censoring(0.02, false);
        assert!(m.high_censoring);
        let m = MCSummary::exact(1.0).with_censoring(0.02, true);
        assert!(!m.high_censoring);
    }
}
