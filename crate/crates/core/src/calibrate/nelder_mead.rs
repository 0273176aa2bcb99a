//! Derivative-free simplex minimization.

use serde::{Deserialize, Serialize};

use super::{CalibrationError, FitResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadConfig {
    pub max_iterations: usize,
    /// The run stops once both the relative simplex diameter and the
    /// objective spread fall below their tolerances.
    pub x_tolerance: f64,
    pub f_tolerance: f64,
    /// Relative size of the initial simplex edges.
    pub initial_step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        NelderMeadConfig { max_iterations: 5000, x_tolerance: 1e-8, f_tolerance: 1e-10, initial_step: 0.1 }
    }
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

struct Counted<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> Result<f64, CalibrationError> {
        self.evaluations += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            return Err(CalibrationError::NonFiniteObjective { point: x.to_vec() });
        }
        Ok(v)
    }
}

/// Minimizes `objective` from `start`.
///
/// `+inf` marks infeasible points; NaN aborts the run. Hitting the iteration
/// cap returns the best vertex with `converged = false`.
pub fn nelder_mead<F>(objective: F, start: &[f64], config: &NelderMeadConfig) -> Result<FitResult, CalibrationError>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = start.len();
    if n == 0 || start.iter().any(|v| !v.is_finite()) {
        return Err(CalibrationError::InfeasibleStart { point: start.to_vec() });
    }
    let mut f = Counted { f: objective, evaluations: 0 };
    let f0 = f.eval(start)?;
    if !f0.is_finite() {
        return Err(CalibrationError::InfeasibleStart { point: start.to_vec() });
    }

    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(start.to_vec(), f0)];
    for i in 0..n {
        let mut x = start.to_vec();
        x[i] = if x[i] != 0.0 { x[i] * (1.0 + config.initial_step) } else { 0.00025 };
        let v = f.eval(&x)?;
        simplex.push((x, v));
    }

    let mut iterations = 0;
    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0];
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| {
                x.iter().zip(&best.0).map(|(a, b)| (a - b).abs() / (b.abs() + config.x_tolerance))
            })
            .fold(0.0f64, f64::max);
        let spread = simplex[n].1 - simplex[0].1;
        if diameter < config.x_tolerance && spread < config.f_tolerance {
            converged = true;
            break;
        }
        if iterations >= config.max_iterations {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64, worst: &[f64]| -> Vec<f64> {
            centroid.iter().zip(worst).map(|(c, w)| c + t * (c - w)).collect()
        };
        let worst = simplex[n].0.clone();
        let (f_best, f_second, f_worst) = (simplex[0].1, simplex[n - 1].1, simplex[n].1);

        let xr = along(REFLECT, &worst);
        let fr = f.eval(&xr)?;
        let replacement = if fr < f_best {
            let xe = along(REFLECT * EXPAND, &worst);
            let fe = f.eval(&xe)?;
            Some(if fe < fr { (xe, fe) } else { (xr, fr) })
        } else if fr < f_second {
            Some((xr, fr))
        } else if fr < f_worst {
            let xc = along(REFLECT * CONTRACT, &worst);
            let fc = f.eval(&xc)?;
            (fc <= fr).then_some((xc, fc))
        } else {
            let xcc = along(-CONTRACT, &worst);
            let fcc = f.eval(&xcc)?;
            (fcc < f_worst).then_some((xcc, fcc))
        };

        match replacement {
            Some(v) => simplex[n] = v,
            None => {
                let anchor = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = anchor.iter().zip(&vertex.0).map(|(a, v)| a + SHRINK * (v - a)).collect();
                    let v = f.eval(&x)?;
                    *vertex = (x, v);
                }
            }
        }
    }

    let (x, value) = simplex.swap_remove(0);
    Ok(FitResult {
        names: (0..n).map(|i| format!("x{i}")).collect(),
        values: x,
        objective: value,
        iterations,
        evaluations: f.evaluations,
        converged,
        diagnostics: Default::default(),
        flags: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_quadratic() {
        let r = nelder_mead(|x| (x[0] - 3.0).powi(2), &[0.0], &NelderMeadConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.values[0] - 3.0).abs() < 1e-6, "{:?}", r.values);
    }

    #[test]
    fn rosenbrock() {
        let rosen = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let r = nelder_mead(rosen, &[-1.2, 1.0], &NelderMeadConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.values[0] - 1.0).abs() < 1e-4 && (r.values[1] - 1.0).abs() < 1e-4, "{:?}", r.values);
    }

    #[test]
    fn nan_region_is_an_error() {
        let f = |x: &[f64]| if x[0] > 1.5 { f64::NAN } else { (x[0] - 3.0).powi(2) };
        assert!(matches!(
            nelder_mead(f, &[1.0], &NelderMeadConfig::default()),
            Err(CalibrationError::NonFiniteObjective { .. })
        ));
    }

    #[test]
    fn infeasible_region_is_avoided() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::INFINITY } else { (x[0] + 1.0).powi(2) };
        let r = nelder_mead(f, &[2.0], &NelderMeadConfig::default()).unwrap();
        assert!(r.values[0] >= 0.0 && r.values[0] < 1e-6);
        assert!(nelder_mead(f, &[-1.0], &NelderMeadConfig::default()).is_err());
    }

    #[test]
    fn never_worse_than_start_and_reports_cap() {
        let rosen = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let cfg = NelderMeadConfig { max_iterations: 5, ..Default::default() };
        let r = nelder_mead(rosen, &[-1.2, 1.0], &cfg).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 5);
        assert!(r.objective <= rosen(&[-1.2, 1.0]));
    }
}
