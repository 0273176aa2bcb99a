//! Least-squares calibration of the superspreader model to daily hospital
//! admissions, plus a synthetic data generator.

mod nelder_mead;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::epimodels::{
    daily_admissions, simulate_superspreader, IntegratorControls, ModelError, PeakError, SuperspreaderParams,
    Trajectory,
};

pub use nelder_mead::{nelder_mead, NelderMeadConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("objective is not finite at the start point {point:?}")]
    InfeasibleStart { point: Vec<f64> },
    #[error("objective returned NaN at {point:?}")]
    NonFiniteObjective { point: Vec<f64> },
    #[error("invalid admissions data: {0}")]
    InvalidData(String),
    #[error("data must cover day {needed} but ends at day {last}")]
    DataTooShort { needed: usize, last: usize },
    #[error("non-positive infected count {value} at day {day}")]
    NonPositiveGrowthBase { day: usize, value: f64 },
    #[error("growth window needs at least two days, got {0}")]
    WindowTooShort(usize),
    #[error("fit result has no parameter named {0}")]
    MissingParameter(String),
    #[error("noise level must be non-negative, got {0}")]
    NegativeNoise(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Peak(#[from] PeakError),
}

/// Daily new hospital admissions. Day 0 is the first observation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdmissionsSeries {
    pub days: Vec<usize>,
    pub admissions: Vec<f64>,
    /// Calendar dates, empty when unknown.
    pub dates: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdmissionsRow {
    date: Option<String>,
    day: i64,
    admissions: f64,
}

impl AdmissionsSeries {
    pub fn new(days: Vec<usize>, admissions: Vec<f64>) -> Result<Self, CalibrationError> {
        let dates = vec![String::new(); days.len()];
        let s = AdmissionsSeries { days, admissions, dates };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if self.days.len() != self.admissions.len() || self.days.len() != self.dates.len() {
            return Err(CalibrationError::InvalidData("column lengths differ".into()));
        }
        if self.days.is_empty() {
            return Err(CalibrationError::InvalidData("no rows".into()));
        }
        if let Some(w) = self.days.windows(2).find(|w| w[1] <= w[0]) {
            return Err(CalibrationError::InvalidData(format!("day {} does not follow day {}", w[1], w[0])));
        }
        if let Some((d, a)) = self.days.iter().zip(&self.admissions).find(|(_, a)| !(**a >= 0.0) || !a.is_finite()) {
            return Err(CalibrationError::InvalidData(format!("admissions {a} at day {d}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn last_day(&self) -> usize {
        self.days.last().copied().unwrap_or(0)
    }

    pub fn norm_squared(&self) -> f64 {
        self.admissions.iter().map(|a| a * a).sum()
    }

    /// Rows with `day < end`.
    pub fn before(&self, end: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.days.iter().copied().zip(self.admissions.iter().copied()).filter(move |(d, _)| *d < end)
    }

    /// Reads `date,day,admissions` CSV; lines starting with `#` are skipped.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, CalibrationError> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input);
        let mut s = AdmissionsSeries::default();
        for (line, row) in reader.deserialize::<AdmissionsRow>().enumerate() {
            let row = row.map_err(|e| CalibrationError::InvalidData(e.to_string()))?;
            if row.day < 0 {
                return Err(CalibrationError::InvalidData(format!("negative day {} in row {}", row.day, line + 1)));
            }
            s.days.push(row.day as usize);
            s.admissions.push(row.admissions);
            s.dates.push(row.date.unwrap_or_default());
        }
        s.validate()?;
        Ok(s)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["date", "day", "admissions"])?;
        for ((d, a), date) in self.days.iter().zip(&self.admissions).zip(&self.dates) {
            writer.write_record([date.as_str(), &d.to_string(), &a.to_string()])?;
        }
        writer.flush()
    }
}

/// Parameter estimates from one optimizer run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Individual objective terms and derived quantities at the optimum.
    pub diagnostics: BTreeMap<String, f64>,
    /// Conditions the caller should look at, e.g. `ordering-violated`.
    pub flags: Vec<String>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Result<f64, CalibrationError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
            .ok_or_else(|| CalibrationError::MissingParameter(name.to_string()))
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("fit result serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, serde_json::Error> {
        FitResult::deserialize(value)
    }
}

pub const FLAG_NOT_CONVERGED: &str = "not-converged";
pub const FLAG_ZERO_DATA: &str = "zero-data";
pub const FLAG_I0_AT_BOUNDARY: &str = "initial-infected-at-boundary";
pub const FLAG_ORDERING_VIOLATED: &str = "ordering-violated";

/// Mean day-over-day relative growth of `x` over days `1..window_end`.
pub fn growth_rate_of(x: &[f64], window_end: usize) -> Result<f64, CalibrationError> {
    if window_end < 2 {
        return Err(CalibrationError::WindowTooShort(window_end));
    }
    if x.len() < window_end {
        return Err(CalibrationError::DataTooShort { needed: window_end - 1, last: x.len().saturating_sub(1) });
    }
    let mut sum = 0.0;
    for t in 1..window_end {
        if !(x[t - 1] > 0.0) {
            return Err(CalibrationError::NonPositiveGrowthBase { day: t - 1, value: x[t - 1] });
        }
        sum += (x[t] - x[t - 1]) / x[t - 1];
    }
    Ok(sum / (window_end - 1) as f64)
}

/// Growth rate of the active non-hospitalized infections `E + I1 + I2`.
pub fn growth_rate(traj: &Trajectory, window_end: usize) -> Result<f64, CalibrationError> {
    let picks = traj.daily_samples()?;
    let active: Vec<f64> = picks.iter().map(|&i| traj.states[i][1..4].iter().sum()).collect();
    growth_rate_of(&active, window_end)
}

/// Weights of the pre-lockdown objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageOneWeights {
    pub w0: f64,
    pub w1: f64,
    pub alpha: f64,
    /// Assumed unmitigated daily growth rate.
    pub target_growth: f64,
}

impl StageOneWeights {
    pub const DEFAULT_TARGET: f64 = 0.23;
    pub const DEFAULT_ALPHA: f64 = 0.01;

    /// `w1` normalized by the data; all-zero data falls back to `w1 = 1`.
    pub fn for_data(data: &AdmissionsSeries) -> Self {
        let norm = data.norm_squared();
        StageOneWeights {
            w0: 1.0 / (Self::DEFAULT_TARGET * Self::DEFAULT_TARGET),
            w1: if norm > 0.0 { 1.0 / norm } else { 1.0 },
            alpha: Self::DEFAULT_ALPHA,
            target_growth: Self::DEFAULT_TARGET,
        }
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if [self.w0, self.w1, self.alpha].iter().all(|w| *w > 0.0 && w.is_finite()) && self.target_growth.is_finite() {
            Ok(())
        } else {
            Err(CalibrationError::InvalidData(format!("invalid stage-one weights {self:?}")))
        }
    }
}

/// Optimizer settings shared by both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSettings {
    /// Start point `(s, I0)` of the first stage.
    pub stage_one_start: [f64; 2],
    /// Ordering penalty weight of the second stage.
    pub w2: f64,
    /// Number of second-stage starts; the first is unperturbed.
    pub starts: usize,
    /// Relative half-width of the uniform start jitter.
    pub jitter: f64,
    pub seed: u64,
    pub optimizer: NelderMeadConfig,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            stage_one_start: [0.5, 100.0],
            w2: 1e6,
            starts: 5,
            jitter: 0.2,
            seed: 0,
            optimizer: NelderMeadConfig::default(),
        }
    }
}

fn simulate_admissions(
    params: &SuperspreaderParams,
    days: usize,
    controls: &IntegratorControls,
) -> Result<(Trajectory, Vec<f64>), CalibrationError> {
    let traj = simulate_superspreader(params, days as f64, controls)?;
    let adm = daily_admissions(&traj)?;
    Ok((traj, adm))
}

fn misfit<'a>(model: &[f64], data: impl Iterator<Item = (usize, f64)> + 'a) -> f64 {
    data.map(|(d, h)| (model[d] - h).powi(2)).sum()
}

fn stage_one_terms(
    template: &SuperspreaderParams,
    x: &[f64],
    data: &AdmissionsSeries,
    weights: &StageOneWeights,
    controls: &IntegratorControls,
) -> Option<(f64, f64, f64)> {
    let (s, i0) = (x[0], x[1]);
    if !(s > 0.0) || !(i0 > 0.0) || i0 >= template.population {
        return None;
    }
    let mut params = *template;
    params.profile.s = s;
    params.initial_infected = i0;
    let t1 = template.schedule.breakpoints[0] as usize;
    let (traj, adm) = simulate_admissions(&params, t1, controls).ok()?;
    let g = growth_rate(&traj, t1).ok()?;
    let growth_term = 0.5 * weights.w0 * (g - weights.target_growth).powi(2);
    let data_term = 0.5 * weights.alpha * weights.w1 * misfit(&adm, data.before(t1));
    Some((g, growth_term, data_term))
}

/// Fits `(s, I0)` to the pre-lockdown growth rate and admissions.
///
/// Only `s` and `I0` of `template` are varied; the restriction schedule
/// does not act before its first breakpoint.
pub fn fit_stage_one(
    template: &SuperspreaderParams,
    data: &AdmissionsSeries,
    weights: &StageOneWeights,
    settings: &FitSettings,
    controls: &IntegratorControls,
) -> Result<FitResult, CalibrationError> {
    data.validate()?;
    weights.validate()?;
    let t1 = template.schedule.breakpoints[0] as usize;
    if data.days[0] >= t1 {
        return Err(CalibrationError::DataTooShort { needed: t1 - 1, last: data.days[0] });
    }
    let objective = |x: &[f64]| match stage_one_terms(template, x, data, weights, controls) {
        Some((_, a, b)) => a + b,
        None => f64::INFINITY,
    };
    let mut fit = nelder_mead(objective, &settings.stage_one_start, &settings.optimizer)?;
    fit.names = vec!["s".into(), "I0".into()];
    if let Some((g, a, b)) = stage_one_terms(template, &fit.values, data, weights, controls) {
        fit.diagnostics.insert("growth_rate".into(), g);
        fit.diagnostics.insert("growth_term".into(), a);
        fit.diagnostics.insert("data_term".into(), b);
    }
    if !fit.converged {
        fit.flags.push(FLAG_NOT_CONVERGED.into());
    }
    if data.before(t1).all(|(_, h)| h == 0.0) {
        fit.flags.push(FLAG_ZERO_DATA.into());
    }
    if fit.values[1] < 1.0 {
        fit.flags.push(FLAG_I0_AT_BOUNDARY.into());
    }
    Ok(fit)
}

fn ordering_penalty(c: &[f64]) -> f64 {
    (c[0] - c[1]).max(0.0) + (c[1] - c[2]).max(0.0)
}

fn stage_two_terms(
    base: &SuperspreaderParams,
    c: &[f64],
    data: &AdmissionsSeries,
    w2: f64,
    controls: &IntegratorControls,
) -> Option<(f64, f64)> {
    if c.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let mut params = *base;
    params.schedule.levels = [c[0], c[1], c[2]];
    let (_, adm) = simulate_admissions(&params, data.last_day() + 1, controls).ok()?;
    let data_term = 0.5 * misfit(&adm, data.before(usize::MAX));
    Some((data_term, w2 * ordering_penalty(c)))
}

/// Fits the restriction levels `(c1, c2, c3)` with `(s, I0)` fixed from stage one.
///
/// Independent starts run in parallel; the best is chosen by objective,
/// ties going to the lower start index.
pub fn fit_stage_two(
    template: &SuperspreaderParams,
    data: &AdmissionsSeries,
    stage_one: &FitResult,
    settings: &FitSettings,
    controls: &IntegratorControls,
) -> Result<FitResult, CalibrationError> {
    data.validate()?;
    let t3 = template.schedule.breakpoints[2] as usize;
    if data.last_day() <= t3 {
        return Err(CalibrationError::DataTooShort { needed: t3 + 1, last: data.last_day() });
    }
    let s = stage_one.get("s")?;
    let mut base = *template;
    base.profile.s = s;
    base.initial_infected = stage_one.get("I0")?;

    let starts = stage_two_starts(0.5 * s, settings);
    let runs: Vec<Result<FitResult, CalibrationError>> = starts
        .par_iter()
        .map(|start| {
            let objective = |c: &[f64]| match stage_two_terms(&base, c, data, settings.w2, controls) {
                Some((a, b)) => a + b,
                None => f64::INFINITY,
            };
            nelder_mead(objective, start, &settings.optimizer)
        })
        .collect();

    let mut best: Option<(usize, FitResult)> = None;
    for (k, run) in runs.into_iter().enumerate() {
        let run = run?;
        if best.as_ref().is_none_or(|(_, b)| run.objective < b.objective) {
            best = Some((k, run));
        }
    }
    let (k, mut fit) = best.expect("at least one start");
    fit.names = vec!["c1".into(), "c2".into(), "c3".into()];
    if let Some((a, b)) = stage_two_terms(&base, &fit.values, data, settings.w2, controls) {
        fit.diagnostics.insert("data_term".into(), a);
        fit.diagnostics.insert("penalty_term".into(), b);
    }
    fit.diagnostics.insert("best_start".into(), k as f64);
    fit.diagnostics.insert("starts".into(), starts.len() as f64);
    if !fit.converged {
        fit.flags.push(FLAG_NOT_CONVERGED.into());
    }
    if ordering_penalty(&fit.values) > 0.0 {
        fit.flags.push(FLAG_ORDERING_VIOLATED.into());
    }
    Ok(fit)
}

fn stage_two_starts(level: f64, settings: &FitSettings) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let uniform = rand_distr::Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    (0..settings.starts.max(1))
        .map(|k| {
            (0..3)
                .map(|_| {
                    let u: f64 = uniform.sample(&mut rng);
                    if k == 0 { level } else { level * (1.0 + settings.jitter * u) }
                })
                .collect()
        })
        .collect()
}

/// Runs the model for `days` days and perturbs each daily admission count
/// by the factor `1 + noise * eta`, `eta` standard normal, clamped at zero.
pub fn synthesize_data(
    truth: &SuperspreaderParams,
    noise: f64,
    seed: u64,
    days: usize,
    controls: &IntegratorControls,
) -> Result<AdmissionsSeries, CalibrationError> {
    if !(noise >= 0.0) {
        return Err(CalibrationError::NegativeNoise(noise));
    }
    let (_, clean) = simulate_admissions(truth, days, controls)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let admissions = clean
        .iter()
        .map(|h| {
            let eta: f64 = StandardNormal.sample(&mut rng);
            (h * (1.0 + noise * eta)).max(0.0)
        })
        .collect();
    AdmissionsSeries::new((0..days).collect(), admissions)
}
