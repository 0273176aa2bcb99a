//! End-to-end runs: the SEIR peak study, the superspreader fit, its
//! uncertainty propagation, and the quadrature self-check.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{
    fit_stage_one, fit_stage_two, AdmissionsSeries, CalibrationError, FitResult, FitSettings, StageOneWeights,
};
use crate::distributions::{fit_lognormal_from_moments, truncated_normal_interval, DistributionError, DistributionSpec};
use crate::epimodels::{
    daily_admissions, find_peak, simulate_seir, simulate_superspreader, IntegratorControls, ModelError, PeakError,
    SeirParams, SuperspreaderParams, Trajectory,
};
use crate::orthopoly::{exactness_error, gauss_rule, orthonormality_error, recurrence_coefficients, FamilyKind, OrthoError};
use crate::pce::{build_tensor_grid, evaluate_ensemble, project, MultiIndexSet, PceError, PceExpansion, TensorGrid};
use crate::sobol::{sobol_indices, sobol_over_outputs, SobolError, SobolIndices};

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("model failed at grid node {node} (parameters {coordinates:?}): {message}")]
    NodeFailure { node: usize, coordinates: Vec<f64>, message: String },
    #[error(transparent)]
    Pce(#[from] PceError),
    #[error(transparent)]
    Sobol(#[from] SobolError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Peak(#[from] PeakError),
    #[error(transparent)]
    Ortho(#[from] OrthoError),
}

fn node_failure(grid: &TensorGrid, node: usize, message: impl ToString) -> CaseError {
    CaseError::NodeFailure { node, coordinates: grid.parameter_nodes[node].clone(), message: message.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case1Config {
    /// Priors of `(R0, tau_inc, tau_inf)`.
    pub priors: [DistributionSpec; 3],
    pub population: f64,
    pub initial_infected: f64,
    pub horizon: f64,
    pub order: usize,
}

impl Default for Case1Config {
    fn default() -> Self {
        let ln = |m: f64, sd: f64| DistributionSpec::log_normal(m, sd * sd).expect("valid prior");
        Case1Config {
            priors: [ln(1.4, 0.025), ln(4.2, 0.7), ln(3.3, 0.7)],
            population: 5.8e6,
            initial_infected: 1.0,
            horizon: 4000.0,
            order: 3,
        }
    }
}

pub const CASE1_PARAMETERS: [&str; 3] = ["R0", "tau_inc", "tau_inf"];
pub const CASE1_OUTPUTS: [&str; 2] = ["t_peak", "I_peak"];

#[derive(Debug, Clone)]
pub struct Case1Report {
    pub grid: TensorGrid,
    /// `(t_peak, I_peak)` per grid node.
    pub outputs: Vec<Vec<f64>>,
    pub solves: usize,
    pub expansion: PceExpansion,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// Log-normal laws with the projected moments of each output.
    pub fitted: Vec<DistributionSpec>,
    pub sobol: Vec<SobolIndices>,
}

/// Peak time and height of the infectious compartment for `(R0, tau_inc, tau_inf)`.
pub fn seir_peak(x: &[f64], config: &Case1Config) -> Result<[f64; 2], CaseError> {
    let n = config.population;
    let params = SeirParams::from_reproduction(x[0], x[1], x[2], n)?;
    let i0 = config.initial_infected;
    let traj = simulate_seir(&params, [n - i0, 0.0, i0, 0.0], config.horizon, &IntegratorControls::for_population(n))?;
    let peak = find_peak(&traj, 2)?;
    Ok([peak.time, peak.value])
}

pub fn run_case1(config: &Case1Config) -> Result<Case1Report, CaseError> {
    let grid = build_tensor_grid(&config.priors, config.order)?;
    let solves = AtomicUsize::new(0);
    let outputs = evaluate_ensemble(&grid, |x| {
        solves.fetch_add(1, Ordering::Relaxed);
        seir_peak(x, config).map(|p| p.to_vec())
    })
    .map_err(|(node, e)| node_failure(&grid, node, e))?;

    let labels: Vec<String> = CASE1_OUTPUTS.iter().map(|s| s.to_string()).collect();
    let set = MultiIndexSet::tensor_box(3, config.order - 1);
    let expansion = project(&outputs, &grid, &set, &labels)?;
    let mean = expansion.mean();
    let variance = expansion.variance();
    let fitted = mean
        .iter()
        .zip(&variance)
        .map(|(&m, &v)| fit_lognormal_from_moments(m, v))
        .collect::<Result<_, _>>()?;
    let sobol = (0..2).map(|o| sobol_indices(&expansion, o)).collect::<Result<_, _>>()?;
    Ok(Case1Report {
        covariance: expansion.covariance_matrix(),
        solves: solves.into_inner(),
        grid,
        outputs,
        expansion,
        mean,
        variance,
        fitted,
        sobol,
    })
}

#[derive(Debug, Clone)]
pub struct Case2Fit {
    pub stage_one: FitResult,
    pub stage_two: FitResult,
    /// Template with the fitted values substituted.
    pub fitted: SuperspreaderParams,
    pub trajectory: Trajectory,
    /// Model admissions on the data days.
    pub model_admissions: Vec<f64>,
}

/// Stage one then stage two on `data`.
pub fn run_case2_fit(
    template: &SuperspreaderParams,
    data: &AdmissionsSeries,
    weights: &StageOneWeights,
    settings: &FitSettings,
) -> Result<Case2Fit, CaseError> {
    let controls = IntegratorControls::for_population(template.population);
    let stage_one = fit_stage_one(template, data, weights, settings, &controls)?;
    let stage_two = fit_stage_two(template, data, &stage_one, settings, &controls)?;
    let mut fitted = *template;
    fitted.profile.s = stage_one.get("s")?;
    fitted.initial_infected = stage_one.get("I0")?;
    fitted.schedule.levels = [stage_two.get("c1")?, stage_two.get("c2")?, stage_two.get("c3")?];
    let trajectory = simulate_superspreader(&fitted, (data.last_day() + 1) as f64, &controls)?;
    let all = daily_admissions(&trajectory)?;
    let model_admissions = data.days.iter().map(|&d| all[d]).collect();
    Ok(Case2Fit { stage_one, stage_two, fitted, trajectory, model_admissions })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UqSettings {
    pub order: usize,
    /// Prior standard deviation relative to each restriction level.
    pub relative_sd: f64,
    pub coverage: f64,
    pub horizon: usize,
}

impl Default for UqSettings {
    fn default() -> Self {
        UqSettings { order: 5, relative_sd: 0.1, coverage: 0.95, horizon: 180 }
    }
}

pub const UQ_PARAMETERS: [&str; 3] = ["c1", "c2", "c3"];
pub const UQ_QUANTITIES: [&str; 3] = ["H", "C", "admissions"];

/// Per-day statistics of one quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyStatistics {
    pub name: String,
    pub days: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Model output at the prior means.
    pub nominal: Vec<f64>,
    pub sobol: Vec<SobolIndices>,
}

#[derive(Debug, Clone)]
pub struct Case2Uq {
    pub grid: TensorGrid,
    pub solves: usize,
    pub expansion: PceExpansion,
    pub quantities: Vec<DailyStatistics>,
    /// Restriction level as plotted, per day.
    pub restriction: Vec<f64>,
}

fn uq_outputs(params: &SuperspreaderParams, horizon: usize) -> Result<Vec<f64>, CaseError> {
    let controls = IntegratorControls::for_population(params.population);
    let traj = simulate_superspreader(params, horizon as f64, &controls)?;
    let picks = traj.daily_samples()?;
    let mut out: Vec<f64> = picks.iter().map(|&i| traj.states[i][5]).collect();
    out.extend(picks.iter().map(|&i| traj.states[i][6]));
    out.extend(daily_admissions(&traj)?);
    Ok(out)
}

/// Places normal priors on the restriction levels of `fitted` and
/// propagates them to `H`, `C` and daily admissions.
pub fn run_case2_uq(fitted: &SuperspreaderParams, settings: &UqSettings) -> Result<Case2Uq, CaseError> {
    let priors = fitted
        .schedule
        .levels
        .iter()
        .map(|&c| DistributionSpec::normal(c, (settings.relative_sd * c).powi(2)))
        .collect::<Result<Vec<_>, _>>()?;
    let grid = build_tensor_grid(&priors, settings.order)?;
    let solves = AtomicUsize::new(0);
    let outputs = evaluate_ensemble(&grid, |c| {
        solves.fetch_add(1, Ordering::Relaxed);
        let mut p = *fitted;
        p.schedule.levels = [c[0], c[1], c[2]];
        uq_outputs(&p, settings.horizon)
    })
    .map_err(|(node, e)| node_failure(&grid, node, e))?;
    let nominal = uq_outputs(fitted, settings.horizon)?;

    let h = settings.horizon;
    let ranges = [(0, h + 1), (h + 1, 2 * h + 2), (2 * h + 2, 3 * h + 2)];
    let mut labels = Vec::with_capacity(3 * h + 2);
    for (name, &(a, b)) in UQ_QUANTITIES.iter().zip(&ranges) {
        labels.extend((0..b - a).map(|d| format!("{name}@{d}")));
    }
    let set = MultiIndexSet::tensor_box(3, settings.order - 1);
    let expansion = project(&outputs, &grid, &set, &labels)?;
    let mean = expansion.mean();
    let variance = expansion.variance();

    let mut quantities = Vec::with_capacity(3);
    for (name, &(a, b)) in UQ_QUANTITIES.iter().zip(&ranges) {
        let mut lower = Vec::with_capacity(b - a);
        let mut upper = Vec::with_capacity(b - a);
        for k in a..b {
            let (lo, hi) = band(mean[k], variance[k], settings.coverage)?;
            lower.push(lo);
            upper.push(hi);
        }
        let outputs: Vec<usize> = (a..b).collect();
        quantities.push(DailyStatistics {
            name: name.to_string(),
            days: (0..b - a).map(|d| d as f64).collect(),
            mean: mean[a..b].to_vec(),
            variance: variance[a..b].to_vec(),
            lower,
            upper,
            nominal: nominal[a..b].to_vec(),
            sobol: sobol_over_outputs(&expansion, &outputs)?,
        });
    }
    let restriction = (0..=h).map(|d| fitted.schedule.plotted_level(d as f64)).collect();
    Ok(Case2Uq { solves: solves.into_inner(), grid, expansion, quantities, restriction })
}

/// Truncated-normal (at zero) central interval; collapses when there is no spread.
fn band(mean: f64, variance: f64, coverage: f64) -> Result<(f64, f64), CaseError> {
    if !(variance > 1e-24 * mean * mean) || variance <= 0.0 {
        return Ok((mean, mean));
    }
    let spec = DistributionSpec::truncated_normal(mean, variance, None, None)?;
    Ok(truncated_normal_interval(&spec, coverage)?)
}

/// Index of the parameter with the largest first-order index at each
/// non-degenerate point, with repeats removed.
pub fn dominance_sequence(series: &[SobolIndices]) -> Vec<usize> {
    let mut seq: Vec<usize> = Vec::new();
    for s in series.iter().filter(|s| !s.degenerate) {
        if let Some(d) = s.dominant_parameter() {
            if seq.last() != Some(&d) {
                seq.push(d);
            }
        }
    }
    seq
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadCheckRow {
    pub family: FamilyKind,
    pub points: usize,
    pub exactness: f64,
    pub orthonormality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadCheckReport {
    pub rows: Vec<QuadCheckRow>,
    pub max_exactness: f64,
    pub max_orthonormality: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Moment exactness and discrete orthonormality of every rule with
/// `1..=max_points` nodes. `perturb` scales the first weight by `1 + perturb`.
pub fn run_quad_check(max_points: usize, perturb: Option<f64>) -> Result<QuadCheckReport, CaseError> {
    const TOLERANCE: f64 = 1e-9;
    let mut rows = Vec::new();
    for kind in [FamilyKind::HermiteProbabilists, FamilyKind::Legendre] {
        for n in 1..=max_points {
            let family = recurrence_coefficients(kind, n)?;
            let mut rule = gauss_rule(&family, n)?;
            if let Some(eps) = perturb {
                rule.weights[0] *= 1.0 + eps;
            }
            rows.push(QuadCheckRow {
                family: kind,
                points: n,
                exactness: exactness_error(&rule),
                orthonormality: orthonormality_error(&rule),
            });
        }
    }
    let max_exactness = rows.iter().map(|r| r.exactness).fold(0.0, f64::max);
    let max_orthonormality = rows.iter().map(|r| r.orthonormality).fold(0.0, f64::max);
    let passed = max_exactness < TOLERANCE && max_orthonormality < TOLERANCE;
    Ok(QuadCheckReport { rows, max_exactness, max_orthonormality, tolerance: TOLERANCE, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quad_check_passes_and_detects_perturbation() {
        let ok = run_quad_check(64, None).unwrap();
        assert!(ok.passed, "{} {}", ok.max_exactness, ok.max_orthonormality);
        assert_eq!(ok.rows.len(), 128);
        assert!(run_quad_check(1, None).unwrap().passed);
        assert!(!run_quad_check(8, Some(1e-6)).unwrap().passed);
    }

    #[test]
    fn case1_small_grid() {
        let r = run_case1(&Case1Config::default()).unwrap();
        assert_eq!(r.solves, 27);
        assert_eq!(r.outputs.len(), 27);
        assert!(r.mean[0] > 0.0 && r.mean[1] > 0.0);
        for s in &r.sobol {
            assert!((s.sum() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn failing_node_is_reported_with_coordinates() {
        let config = Case1Config { horizon: 20.0, ..Default::default() };
        match run_case1(&config) {
            Err(CaseError::NodeFailure { coordinates, message, .. }) => {
                assert_eq!(coordinates.len(), 3);
                assert!(message.contains("horizon"), "{message}");
            }
            other => panic!("expected node failure, got {other:?}"),
        }
    }

    #[test]
    fn dominance_collapses_repeats() {
        let mk = |first: [f64; 3], degenerate: bool| {
            let mut indices = vec![0.0; 8];
            indices[1] = first[0];
            indices[2] = first[1];
            indices[4] = first[2];
            SobolIndices { dim: 3, total_variance: 1.0, partial_variances: indices.clone(), indices, degenerate }
        };
        let series = vec![
            mk([0.0, 0.0, 0.0], true),
            mk([0.9, 0.1, 0.0], false),
            mk([0.8, 0.2, 0.0], false),
            mk([0.3, 0.6, 0.1], false),
            mk([0.1, 0.2, 0.7], false),
        ];
        assert_eq!(dominance_sequence(&series), vec![0, 1, 2]);
    }

    #[test]
    fn band_collapses_without_variance() {
        assert_eq!(band(5.0, 0.0, 0.95).unwrap(), (5.0, 5.0));
        let (lo, hi) = band(100.0, 25.0, 0.95).unwrap();
        assert!((lo - (100.0 - 1.959963984540054 * 5.0)).abs() < 1e-9);
        assert!((hi - (100.0 + 1.959963984540054 * 5.0)).abs() < 1e-9);
    }
}
