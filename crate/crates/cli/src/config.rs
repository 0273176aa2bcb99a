//! Run configuration, read from a TOML file.

use anyhow::{bail, Context, Result};
use epichaos::calibrate::{FitSettings, NelderMeadConfig, StageOneWeights};
use epichaos::cases::{Case1Config, UqSettings};
use epichaos::distributions::{DistributionKind, DistributionSpec};
use epichaos::epimodels::{
    hospitalization_split, CapLevel, InfectivityProfile, RestrictionSchedule, SuperspreaderParams, AGE_TABLE,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub case1: Case1Section,
    pub model: ModelSection,
    pub fit: FitSection,
    pub uq: UqSettings,
    pub synth: SynthSection,
    pub quad_check: QuadCheckSection,
}


impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.case1.order == 0 || self.uq.order == 0 {
            bail!("quadrature order must be at least 1");
        }
        if !(self.case1.horizon > 0.0) || self.uq.horizon == 0 || self.synth.days == 0 {
            bail!("time horizons must be positive");
        }
        if self.quad_check.max_points == 0 {
            bail!("quad_check.max_points must be at least 1");
        }
        if !(self.synth.noise >= 0.0) {
            bail!("synth.noise must be non-negative");
        }
        if !(self.uq.relative_sd > 0.0) {
            bail!("uq.relative_sd must be positive (use a tiny value for a deterministic run)");
        }
        self.case1.to_config().context("case1 block")?;
        self.model.to_params().context("model block")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prior {
    pub kind: DistributionKind,
    pub mean: f64,
    pub std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

impl Prior {
    fn log_normal(mean: f64, std: f64) -> Self {
        Prior { kind: DistributionKind::LogNormal, mean, std, lower: None, upper: None }
    }

    pub fn to_spec(self) -> Result<DistributionSpec> {
        let var = self.std * self.std;
        Ok(match self.kind {
            DistributionKind::Normal => DistributionSpec::normal(self.mean, var)?,
            DistributionKind::LogNormal => DistributionSpec::log_normal(self.mean, var)?,
            DistributionKind::TruncatedNormal => {
                DistributionSpec::truncated_normal(self.mean, var, self.lower, self.upper)?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Case1Section {
    pub order: usize,
    pub horizon: f64,
    pub population: f64,
    pub initial_infected: f64,
    pub r0: Prior,
    pub tau_inc: Prior,
    pub tau_inf: Prior,
}

impl Default for Case1Section {
    fn default() -> Self {
        let d = Case1Config::default();
        Case1Section {
            order: d.order,
            horizon: d.horizon,
            population: d.population,
            initial_infected: d.initial_infected,
            r0: Prior::log_normal(1.4, 0.025),
            tau_inc: Prior::log_normal(4.2, 0.7),
            tau_inf: Prior::log_normal(3.3, 0.7),
        }
    }
}

impl Case1Section {
    pub fn to_config(&self) -> Result<Case1Config> {
        if !(self.initial_infected > 0.0 && self.initial_infected < self.population) {
            bail!("initial_infected must lie in (0, population)");
        }
        Ok(Case1Config {
            priors: [self.r0.to_spec()?, self.tau_inc.to_spec()?, self.tau_inf.to_spec()?],
            population: self.population,
            initial_infected: self.initial_infected,
            horizon: self.horizon,
            order: self.order,
        })
    }
}

/// Pre-lockdown restriction: a number is a cap, `"unrestricted"` removes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PreLockdown {
    Cap(f64),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub sigma: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub alpha: f64,
    pub zeta: f64,
    /// Computed from the age table when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z2: Option<f64>,
    pub p: f64,
    pub cp: f64,
    pub s: f64,
    pub initial_infected: f64,
    pub population: f64,
    pub breakpoints: [f64; 3],
    pub levels: [f64; 3],
    pub pre_lockdown: PreLockdown,
}

impl Default for ModelSection {
    fn default() -> Self {
        let r = SuperspreaderParams::reference();
        ModelSection {
            sigma: r.sigma,
            gamma1: r.gamma1,
            gamma2: r.gamma2,
            gamma3: r.gamma3,
            alpha: r.alpha,
            zeta: r.zeta,
            z1: None,
            z2: None,
            p: r.profile.p,
            cp: r.profile.cp,
            s: r.profile.s,
            initial_infected: r.initial_infected,
            population: r.population,
            breakpoints: r.schedule.breakpoints,
            levels: r.schedule.levels,
            pre_lockdown: PreLockdown::Cap(1.0),
        }
    }
}

impl ModelSection {
    pub fn to_params(&self) -> Result<SuperspreaderParams> {
        let pre_lockdown = match &self.pre_lockdown {
            PreLockdown::Cap(c) => CapLevel::Cap(*c),
            PreLockdown::Keyword(k) if k == "unrestricted" => CapLevel::Unrestricted,
            PreLockdown::Keyword(k) => bail!("pre_lockdown must be a number or \"unrestricted\", got {k:?}"),
        };
        let (z1, z2) = hospitalization_split(&AGE_TABLE)?;
        let params = SuperspreaderParams {
            sigma: self.sigma,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            gamma3: self.gamma3,
            alpha: self.alpha,
            zeta: self.zeta,
            z1: self.z1.unwrap_or(z1),
            z2: self.z2.unwrap_or(z2),
            profile: InfectivityProfile::new(self.p, self.cp, self.s)?,
            schedule: RestrictionSchedule::new(self.breakpoints, self.levels, pre_lockdown)?,
            population: self.population,
            initial_infected: self.initial_infected,
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub stage_one_start: [f64; 2],
    pub alpha: f64,
    pub target_growth: f64,
    /// Defaults to `1 / target_growth^2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w0: Option<f64>,
    pub w2: f64,
    pub starts: usize,
    pub jitter: f64,
    pub optimizer: NelderMeadConfig,
}

impl Default for FitSection {
    fn default() -> Self {
        let f = FitSettings::default();
        FitSection {
            stage_one_start: f.stage_one_start,
            alpha: StageOneWeights::DEFAULT_ALPHA,
            target_growth: StageOneWeights::DEFAULT_TARGET,
            w0: None,
            w2: f.w2,
            starts: f.starts,
            jitter: f.jitter,
            optimizer: f.optimizer,
        }
    }
}

impl FitSection {
    pub fn settings(&self, seed: u64) -> FitSettings {
        FitSettings {
            stage_one_start: self.stage_one_start,
            w2: self.w2,
            starts: self.starts,
            jitter: self.jitter,
            seed,
            optimizer: self.optimizer,
        }
    }

    pub fn weights(&self, base: StageOneWeights) -> StageOneWeights {
        StageOneWeights {
            w0: self.w0.unwrap_or(1.0 / (self.target_growth * self.target_growth)),
            alpha: self.alpha,
            target_growth: self.target_growth,
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Relative standard deviation of the multiplicative noise.
    pub noise: f64,
    pub days: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection { noise: 0.0, days: 120 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadCheckSection {
    pub max_points: usize,
    /// Relative perturbation of the first weight of every rule (failure fixture).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturb: Option<f64>,
}

impl Default for QuadCheckSection {
    fn default() -> Self {
        QuadCheckSection { max_points: 64, perturb: None }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.model.to_params().unwrap(), SuperspreaderParams::reference());
    }

    #[test]
    fn round_trip_through_toml() {
        let mut c = RunConfig::default();
        c.model.pre_lockdown = PreLockdown::Keyword("unrestricted".into());
        c.quad_check.perturb = Some(1e-6);
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.model.to_params().unwrap().schedule.pre_lockdown, CapLevel::Unrestricted);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("[case1]\norder = 0\n").is_err());
        assert!(RunConfig::from_toml("[model]\npre_lockdown = \"none\"\n").is_err());
        assert!(RunConfig::from_toml("[model]\nlevels = [0.2, 0.1, -0.1]\n").is_err());
        assert!(RunConfig::from_toml("unknown_key = 1\n").is_err());
    }

    #[test]
    fn weights_follow_target() {
        let f = FitSection { target_growth: 0.5, ..Default::default() };
        let w = f.weights(StageOneWeights { w0: 1.0, w1: 2.0, alpha: 1.0, target_growth: 0.0 });
        assert_eq!((w.w0, w.w1, w.alpha, w.target_growth), (4.0, 2.0, 0.01, 0.5));
    }
}
