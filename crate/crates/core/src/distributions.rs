//! Input distributions, node transforms and output moment fits.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::orthopoly::{FamilyKind, QuadratureRule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("variance must be positive and finite (got {0})")]
    NonPositiveVariance(f64),
    #[error("log-normal mean must be positive (got {0})")]
    NonPositiveMean(f64),
    #[error("truncation bounds must satisfy lower < upper (got [{0}, {1}])")]
    InvalidBounds(f64, f64),
    #[error("{kind:?} inputs cannot be mapped from a {family} rule")]
    RuleMismatch { kind: DistributionKind, family: FamilyKind },
    #[error("coverage must lie strictly between 0 and 1 (got {0})")]
    InvalidCoverage(f64),
    #[error("truncation interval carries no probability mass for N({mean}, {variance})")]
    UnreachableMass { mean: f64, variance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionKind {
    Normal,
    LogNormal,
    TruncatedNormal,
}

/// A named 1-D distribution given by its mean and variance.
///
/// For `LogNormal` the moments are those of the log-normal variable itself,
/// not of the underlying normal. For `TruncatedNormal` they are the moments
/// of the parent normal before truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    pub mean: f64,
    pub variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

impl DistributionSpec {
    pub fn normal(mean: f64, variance: f64) -> Result<Self, DistributionError> {
        Self::checked(DistributionKind::Normal, mean, variance, None, None)
    }

    pub fn log_normal(mean: f64, variance: f64) -> Result<Self, DistributionError> {
        Self::checked(DistributionKind::LogNormal, mean, variance, None, None)
    }

    /// Truncated normal; missing bounds default to the positive half-line.
    pub fn truncated_normal(
        mean: f64,
        variance: f64,
        lower: Option<f64>,
        upper: Option<f64>,
    ) -> Result<Self, DistributionError> {
        Self::checked(DistributionKind::TruncatedNormal, mean, variance, lower, upper)
    }

    fn checked(
        kind: DistributionKind,
        mean: f64,
        variance: f64,
        lower: Option<f64>,
        upper: Option<f64>,
    ) -> Result<Self, DistributionError> {
        let spec = DistributionSpec { kind, mean, variance, lower, upper };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DistributionError> {
        if !(self.variance > 0.0) || !self.variance.is_finite() {
            return Err(DistributionError::NonPositiveVariance(self.variance));
        }
        match self.kind {
            DistributionKind::LogNormal if !(self.mean > 0.0) => {
                Err(DistributionError::NonPositiveMean(self.mean))
            }
            DistributionKind::TruncatedNormal => {
                let (lo, hi) = self.bounds();
                if lo < hi {
                    Ok(())
                } else {
                    Err(DistributionError::InvalidBounds(lo, hi))
                }
            }
            _ => Ok(()),
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Effective support bounds. Only truncated normals are bounded.
    pub fn bounds(&self) -> (f64, f64) {
        match self.kind {
            DistributionKind::TruncatedNormal => (
                self.lower.unwrap_or(0.0),
                self.upper.unwrap_or(f64::INFINITY),
            ),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Parameters `(m, s)` of the normal whose exponential has this spec's moments.
    pub fn underlying_normal(&self) -> (f64, f64) {
        let m2 = self.mean * self.mean;
        let s2 = (1.0 + self.variance / m2).ln();
        let m = (m2 / (m2 + self.variance).sqrt()).ln();
        (m, s2.sqrt())
    }

    /// Density at `x` (log-normal and normal kinds; truncation renormalized).
    pub fn pdf(&self, x: f64) -> f64 {
        let gauss = |z: f64, sd: f64| (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
        match self.kind {
            DistributionKind::Normal => gauss((x - self.mean) / self.std_dev(), self.std_dev()),
            DistributionKind::LogNormal => {
                if x <= 0.0 {
                    return 0.0;
                }
                let (m, s) = self.underlying_normal();
                gauss((x.ln() - m) / s, s) / x
            }
            DistributionKind::TruncatedNormal => {
                let (lo, hi) = self.bounds();
                if x < lo || x > hi {
                    return 0.0;
                }
                let mass = truncation_mass(self.mean, self.std_dev(), lo, hi);
                gauss((x - self.mean) / self.std_dev(), self.std_dev()) / mass
            }
        }
    }
}

/// Maps standard-variable nodes into parameter space. Weights are unchanged.
pub fn to_parameter_nodes(
    spec: &DistributionSpec,
    rule: &QuadratureRule,
) -> Result<Vec<f64>, DistributionError> {
    spec.validate()?;
    match (spec.kind, rule.kind) {
        (DistributionKind::Normal, FamilyKind::HermiteProbabilists) => {
            let sd = spec.std_dev();
            Ok(rule.nodes.iter().map(|xi| spec.mean + sd * xi).collect())
        }
        (DistributionKind::LogNormal, FamilyKind::HermiteProbabilists) => {
            let (m, s) = spec.underlying_normal();
            Ok(rule.nodes.iter().map(|xi| (m + s * xi).exp()).collect())
        }
        (kind, family) => Err(DistributionError::RuleMismatch { kind, family }),
    }
}

/// The log-normal whose first two moments are `mean` and `variance`.
pub fn fit_lognormal_from_moments(mean: f64, variance: f64) -> Result<DistributionSpec, DistributionError> {
    if !(mean > 0.0) {
        return Err(DistributionError::NonPositiveMean(mean));
    }
    DistributionSpec::log_normal(mean, variance)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

fn truncation_mass(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let n = std_normal();
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    // Work in the tail with the smaller probabilities to avoid cancellation.
    if a > 0.0 {
        n.sf(a) - n.sf(b)
    } else {
        n.cdf(b) - n.cdf(a)
    }
}

/// Central `coverage` interval of a normal restricted to its bounds.
///
/// `Normal` specs are treated as untruncated; `TruncatedNormal` specs use
/// their bounds (default `[0, +inf)`). Equal probability mass lies outside
/// the interval on each side, measured with the truncated CDF.
pub fn truncated_normal_interval(
    spec: &DistributionSpec,
    coverage: f64,
) -> Result<(f64, f64), DistributionError> {
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(DistributionError::InvalidCoverage(coverage));
    }
    spec.validate()?;
    let (lo, hi) = match spec.kind {
        DistributionKind::Normal | DistributionKind::TruncatedNormal => spec.bounds(),
        kind => {
            return Err(DistributionError::RuleMismatch {
                kind,
                family: FamilyKind::HermiteProbabilists,
            })
        }
    };
    let sd = spec.std_dev();
    let n = std_normal();
    let a = (lo - spec.mean) / sd;
    let b = (hi - spec.mean) / sd;
    let tail = 0.5 * (1.0 - coverage);

    let quantile = |p: f64| -> f64 {
        // Quantile of the truncated law at probability p, taken from whichever
        // side of the parent distribution keeps the arithmetic well conditioned.
        if a > 0.0 {
            let (sa, sb) = (n.sf(a), n.sf(b));
            let target = sa - p * (sa - sb);
            spec.mean - sd * n.inverse_cdf(target)
        } else {
            let (ca, cb) = (n.cdf(a), n.cdf(b));
            let target = ca + p * (cb - ca);
            spec.mean + sd * n.inverse_cdf(target)
        }
    };

    let mass = truncation_mass(spec.mean, sd, lo, hi);
    if !(mass > 0.0) {
        return Err(DistributionError::UnreachableMass { mean: spec.mean, variance: spec.variance });
    }
    let lower = quantile(tail).max(lo);
    let upper = quantile(1.0 - tail).min(hi);
    if !(lower.is_finite() && upper.is_finite()) || lower > upper {
        return Err(DistributionError::UnreachableMass { mean: spec.mean, variance: spec.variance });
    }
    Ok((lower, upper))
}
