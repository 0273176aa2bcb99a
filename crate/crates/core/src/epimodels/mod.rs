//! Compartmental epidemic models and their integration.

pub mod ode;
pub mod seir;
pub mod superspreader;

use std::io::{self, Write};

use thiserror::Error;

pub use ode::{integrate, IntegratorControls, OdeError};
pub use seir::{seir_rhs, simulate_seir, SeirParams};
pub use superspreader::{
    daily_admissions, effective_beta, hospitalization_split, simulate_superspreader,
    superspreader_rhs, AgeGroup, CapLevel, InfectivityProfile, RestrictionSchedule,
    SuperspreaderParams, AGE_TABLE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter { name: &'static str, value: f64, reason: &'static str },
    #[error(transparent)]
    Ode(#[from] OdeError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PeakError {
    #[error("compartment {0} does not exist")]
    InvalidCompartment(usize),
    #[error("trajectory needs at least three samples")]
    TooShort,
    #[error("no interior peak: compartment only decreases (epidemic never takes off)")]
    NeverTakesOff,
    #[error("no interior peak: compartment still rising at t = {0} (time horizon too short)")]
    HorizonTooShort(f64),
    #[error("trajectory is not sampled on consecutive whole days")]
    NotDaily,
}

/// Time-indexed compartment states with their derivatives and derived series.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Right-hand side at each sample; may be empty for tabulated data.
    pub derivatives: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    /// Named series aligned with `times`.
    pub observables: Vec<(String, Vec<f64>)>,
    /// Accepted integrator steps.
    pub steps: usize,
}

impl Trajectory {
    pub fn with_capacity(samples: usize, _dim: usize) -> Self {
        Trajectory {
            times: Vec::with_capacity(samples),
            states: Vec::with_capacity(samples),
            derivatives: Vec::with_capacity(samples),
            ..Default::default()
        }
    }

    /// A trajectory of one tabulated series, without derivatives.
    pub fn from_series(times: Vec<f64>, values: Vec<f64>) -> Self {
        Trajectory {
            states: values.into_iter().map(|v| vec![v]).collect(),
            times,
            ..Default::default()
        }
    }

    pub fn push(&mut self, t: f64, state: Vec<f64>, derivative: Vec<f64>) {
        self.times.push(t);
        self.states.push(state);
        self.derivatives.push(derivative);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, index: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[index]).collect()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn observable(&self, name: &str) -> Option<&[f64]> {
        self.observables
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    /// Appends a continuation that starts where `self` ends; the shared
    /// sample is taken from `self`.
    pub fn append(&mut self, mut next: Trajectory) {
        if let (Some(&end), Some(&start)) = (self.times.last(), next.times.first()) {
            if (end - start).abs() <= 1e-9 * end.abs().max(1.0) {
                next.times.remove(0);
                next.states.remove(0);
                if !next.derivatives.is_empty() {
                    next.derivatives.remove(0);
                }
            }
        }
        self.times.extend(next.times);
        self.states.extend(next.states);
        self.derivatives.extend(next.derivatives);
        self.steps += next.steps;
    }

    /// Per-sample sum of the given compartments.
    pub fn compartment_sum(&self, columns: std::ops::Range<usize>) -> Vec<f64> {
        self.states.iter().map(|s| s[columns.clone()].iter().sum()).collect()
    }

    /// Samples at whole days, checked to be consecutive.
    pub fn daily_samples(&self) -> Result<Vec<usize>, PeakError> {
        let picks: Vec<usize> = self
            .times
            .iter()
            .enumerate()
            .filter(|(_, t)| (*t - t.round()).abs() < 1e-9)
            .map(|(i, _)| i)
            .collect();
        if picks.windows(2).any(|w| (self.times[w[1]] - self.times[w[0]] - 1.0).abs() > 1e-9) {
            return Err(PeakError::NotDaily);
        }
        Ok(picks)
    }

    /// Day-to-day increments of `column`: element `i` is `X(d0 + i + 1) - X(d0 + i)`.
    pub fn daily_increments(&self, column: usize) -> Result<Vec<f64>, PeakError> {
        if self.states.first().is_some_and(|s| column >= s.len()) {
            return Err(PeakError::InvalidCompartment(column));
        }
        let picks = self.daily_samples()?;
        Ok(picks
            .windows(2)
            .map(|w| self.states[w[1]][column] - self.states[w[0]][column])
            .collect())
    }

    /// CSV with `t`, one column per compartment, then observables.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend(self.labels.iter().cloned());
        header.extend(self.observables.iter().map(|(n, _)| n.clone()));
        writeln!(out, "{}", header.join(","))?;
        for (i, (t, s)) in self.times.iter().zip(&self.states).enumerate() {
            write!(out, "{t}")?;
            for v in s {
                write!(out, ",{v}")?;
            }
            for (_, series) in &self.observables {
                match series.get(i) {
                    Some(v) if v.is_finite() => write!(out, ",{v}")?,
                    _ => write!(out, ",")?,
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Time and height of a compartment's maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub time: f64,
    pub value: f64,
}

/// Locates the maximum of a compartment.
///
/// The largest sample is refined with cubic Hermite interpolation on the two
/// neighbouring intervals, using the stored derivatives when present and
/// central differences otherwise.
pub fn find_peak(traj: &Trajectory, compartment: usize) -> Result<Peak, PeakError> {
    let n = traj.len();
    if n < 3 {
        return Err(PeakError::TooShort);
    }
    if traj.states[0].len() <= compartment {
        return Err(PeakError::InvalidCompartment(compartment));
    }
    let y = traj.column(compartment);
    let j = y
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > y[best] { i } else { best });
    if j == 0 {
        return Err(PeakError::NeverTakesOff);
    }
    if j == n - 1 {
        return Err(PeakError::HorizonTooShort(traj.times[n - 1]));
    }

    let slope = |i: usize| -> f64 {
        if let Some(d) = traj.derivatives.get(i).filter(|d| d.len() > compartment) {
            return d[compartment];
        }
        if i == 0 {
            (y[1] - y[0]) / (traj.times[1] - traj.times[0])
        } else if i == n - 1 {
            (y[i] - y[i - 1]) / (traj.times[i] - traj.times[i - 1])
        } else {
            (y[i + 1] - y[i - 1]) / (traj.times[i + 1] - traj.times[i - 1])
        }
    };

    let mut best = Peak { time: traj.times[j], value: y[j] };
    for i in [j - 1, j] {
        let (t0, t1) = (traj.times[i], traj.times[i + 1]);
        let h = t1 - t0;
        let (y0, y1) = (y[i], y[i + 1]);
        let (m0, m1) = (h * slope(i), h * slope(i + 1));
        let a = 6.0 * y0 + 3.0 * m0 - 6.0 * y1 + 3.0 * m1;
        let b = -6.0 * y0 - 4.0 * m0 + 6.0 * y1 - 2.0 * m1;
        let c = m0;
        for theta in quadratic_roots(a, b, c) {
            if (0.0..=1.0).contains(&theta) {
                let value = hermite_value(y0, m0, y1, m1, theta);
                if value > best.value {
                    best = Peak { time: t0 + theta * h, value };
                }
            }
        }
    }
    Ok(best)
}

fn hermite_value(y0: f64, m0: f64, y1: f64, m1: f64, s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * m1
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return vec![];
    }
    if a.abs() <= 1e-12 * scale {
        return if b != 0.0 { vec![-c / b] } else { vec![] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let q = -0.5 * (b + disc.sqrt().copysign(b));
    let mut roots = vec![q / a];
    if q != 0.0 {
        roots.push(c / q);
    }
    roots
}
