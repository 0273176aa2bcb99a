//! Adaptive Dormand-Prince 5(4) integrator with dense output.
//!
//! Solutions are sampled on a regular grid (one day by default) using the
//! method's fourth-order continuous extension, so sample times never
//! constrain the step size.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Trajectory;

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("time span must satisfy t0 < t1 (got [{0}, {1}])")]
    InvalidSpan(f64, f64),
    #[error("tolerances and sample interval must be positive")]
    InvalidControls,
    #[error("step size underflow at t = {t} (h = {h:e}); system is stiff or blowing up")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error("step limit of {0} reached")]
    TooManySteps(usize),
}

/// Tolerances and sampling for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorControls {
    pub rtol: f64,
    pub atol: f64,
    /// Spacing of stored samples, starting at `t0`.
    pub sample_interval: f64,
    pub max_steps: usize,
    /// Disables adaptivity and uses this step (shortened to land on `t1`).
    pub fixed_step: Option<f64>,
}

impl Default for IntegratorControls {
    fn default() -> Self {
        IntegratorControls {
            rtol: 1e-8,
            atol: 1e-10,
            sample_interval: 1.0,
            max_steps: 1_000_000,
            fixed_step: None,
        }
    }
}

impl IntegratorControls {
    /// Defaults with the absolute tolerance scaled to a population size.
    pub fn for_population(n: f64) -> Self {
        IntegratorControls { atol: 1e-10 * n, ..Default::default() }
    }
}

/// Integrates `dy/dt = rhs(t, y)` over `t_span`.
///
/// `rhs(t, y, dydt)` writes the derivative into `dydt`. The returned
/// trajectory holds samples at `t0, t0 + dt, ...` and at `t1`, together
/// with the derivative at each sample.
pub fn integrate<F>(
    rhs: F,
    initial: &[f64],
    t_span: (f64, f64),
    controls: &IntegratorControls,
) -> Result<Trajectory, OdeError>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let (t0, t1) = t_span;
    if !(t0 < t1) || !t0.is_finite() || !t1.is_finite() {
        return Err(OdeError::InvalidSpan(t0, t1));
    }
    if !(controls.rtol > 0.0 && controls.atol > 0.0 && controls.sample_interval > 0.0) {
        return Err(OdeError::InvalidControls);
    }
    if matches!(controls.fixed_step, Some(h) if !(h > 0.0)) {
        return Err(OdeError::InvalidControls);
    }
    let dim = initial.len();
    let span = t1 - t0;

    let mut sample_times: Vec<f64> = Vec::new();
    let mut k = 0usize;
    loop {
        let t = t0 + k as f64 * controls.sample_interval;
        if t >= t1 - 1e-12 * span.max(1.0) {
            break;
        }
        sample_times.push(t);
        k += 1;
    }
    sample_times.push(t1);

    let mut traj = Trajectory::with_capacity(sample_times.len(), dim);
    let mut y = initial.to_vec();
    let mut k_stages = vec![vec![0.0; dim]; 7];
    rhs(t0, &y, &mut k_stages[0]);
    traj.push(t0, y.clone(), k_stages[0].clone());
    let mut next_sample = 1;

    let mut t = t0;
    let mut h = match controls.fixed_step {
        Some(h) => h,
        None => initial_step(&rhs, t0, &y, &k_stages[0], controls, span),
    };
    let h_min = 1e-14 * span.max(t0.abs()).max(1.0);
    let mut y_stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut err_old = 1e-4_f64;
    let mut steps = 0usize;

    while next_sample < sample_times.len() {
        steps += 1;
        if steps > controls.max_steps {
            return Err(OdeError::TooManySteps(controls.max_steps));
        }
        let last = t + h >= t1 - 1e-12 * span;
        if last {
            h = t1 - t;
        }

        for s in 1..7 {
            for i in 0..dim {
                let mut acc = y[i];
                for j in 0..s {
                    acc += h * A[s][j] * k_stages[j][i];
                }
                y_stage[i] = acc;
            }
            rhs(t + C[s] * h, &y_stage, &mut k_stages[s]);
        }
        // Stage 7 is evaluated at the 5th-order solution (FSAL).
        y_new.copy_from_slice(&y_stage);

        if y_new.iter().any(|v| !v.is_finite()) {
            if controls.fixed_step.is_some() {
                return Err(OdeError::NonFinite(t + h));
            }
            h *= 0.25;
            if h < h_min {
                return Err(OdeError::NonFinite(t));
            }
            continue;
        }

        let err = if controls.fixed_step.is_some() {
            0.0
        } else {
            let mut sum = 0.0;
            for i in 0..dim {
                let mut e = 0.0;
                for s in 0..7 {
                    e += E[s] * k_stages[s][i];
                }
                let sc = controls.atol + controls.rtol * y[i].abs().max(y_new[i].abs());
                let r = h * e / sc;
                sum += r * r;
            }
            (sum / dim.max(1) as f64).sqrt()
        };

        if err <= 1.0 {
            let t_new = if last { t1 } else { t + h };
            // Dense output for samples inside (t, t_new].
            while next_sample < sample_times.len() && sample_times[next_sample] <= t_new + 1e-12 * span {
                let ts = sample_times[next_sample];
                let (ys, dys) = if (ts - t_new).abs() <= 1e-12 * span {
                    (y_new.clone(), k_stages[6].clone())
                } else {
                    let theta = (ts - t) / h;
                    let ys = dense_state(&y, &y_new, &k_stages, h, theta);
                    let mut dys = vec![0.0; dim];
                    rhs(ts, &ys, &mut dys);
                    (ys, dys)
                };
                traj.push(ts, ys, dys);
                next_sample += 1;
            }
            t = t_new;
            y.copy_from_slice(&y_new);
            let first = k_stages[6].clone();
            k_stages[0] = first;
            traj.steps += 1;

            if controls.fixed_step.is_none() {
                // PI step-size control.
                let fac = 0.9 * err.max(1e-10).powf(-0.17) * err_old.powf(0.04);
                h *= fac.clamp(0.2, 10.0);
                err_old = err.max(1e-4);
            }
        } else {
            h *= (0.9 * err.powf(-0.2)).max(0.2);
        }
        if h < h_min {
            return Err(OdeError::StepSizeUnderflow { t, h });
        }
    }
    Ok(traj)
}

fn dense_state(y: &[f64], y_new: &[f64], k: &[Vec<f64>], h: f64, theta: f64) -> Vec<f64> {
    let theta1 = 1.0 - theta;
    (0..y.len())
        .map(|i| {
            let diff = y_new[i] - y[i];
            let bspl = h * k[0][i] - diff;
            let c3 = diff - h * k[6][i] - bspl;
            let c4 = h * D.iter().zip(k).map(|(d, ks)| d * ks[i]).sum::<f64>();
            y[i] + theta * (diff + theta1 * (bspl + theta * (c3 + theta1 * c4)))
        })
        .collect()
}

fn initial_step<F>(rhs: &F, t0: f64, y0: &[f64], f0: &[f64], c: &IntegratorControls, span: f64) -> f64
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let dim = y0.len().max(1) as f64;
    let norm = |v: &[f64]| -> f64 {
        (v.iter()
            .zip(y0)
            .map(|(x, y)| {
                let sc = c.atol + c.rtol * y.abs();
                (x / sc).powi(2)
            })
            .sum::<f64>()
            / dim)
            .sqrt()
    };
    let d0 = norm(y0);
    let d1 = norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; y0.len()];
    rhs(t0 + h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = norm(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let traj = integrate(
            |_, y, dy| dy[0] = -y[0],
            &[1.0],
            (0.0, 1.0),
            &IntegratorControls::default(),
        )
        .unwrap();
        assert_eq!(traj.times, vec![0.0, 1.0]);
        assert!((traj.states[1][0] - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn dense_samples_are_accurate() {
        let controls = IntegratorControls { sample_interval: 0.1, ..Default::default() };
        let traj = integrate(|_, y, dy| dy[0] = y[0], &[1.0], (0.0, 3.0), &controls).unwrap();
        assert_eq!(traj.len(), 31);
        for (t, y) in traj.times.iter().zip(&traj.states) {
            assert!((y[0] - t.exp()).abs() < 1e-7 * t.exp(), "t = {t}");
        }
        // Derivatives are stored alongside the states.
        assert!((traj.derivatives[10][0] - traj.states[10][0]).abs() < 1e-12);
    }

    #[test]
    fn harmonic_oscillator_fixed_step_order() {
        let rhs = |_: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        };
        let error = |h: f64| {
            let c = IntegratorControls { fixed_step: Some(h), ..Default::default() };
            let traj = integrate(rhs, &[1.0, 0.0], (0.0, 5.0), &c).unwrap();
            let y = traj.final_state();
            (y[0] - 5f64.cos()).hypot(y[1] + 5f64.sin())
        };
        let order = (error(0.1) / error(0.05)).log2();
        assert!(order > 4.5, "observed order {order}");
    }

    #[test]
    fn rejects_bad_input() {
        let c = IntegratorControls::default();
        assert_eq!(
            integrate(|_, _, _| {}, &[1.0], (1.0, 1.0), &c).unwrap_err(),
            OdeError::InvalidSpan(1.0, 1.0)
        );
        let bad = IntegratorControls { rtol: 0.0, ..c };
        assert_eq!(
            integrate(|_, _, _| {}, &[1.0], (0.0, 1.0), &bad).unwrap_err(),
            OdeError::InvalidControls
        );
    }

    #[test]
    fn blow_up_is_reported() {
        // y' = y^2 with y(0) = 1 explodes at t = 1.
        let err = integrate(|_, y, dy| dy[0] = y[0] * y[0], &[1.0], (0.0, 2.0), &IntegratorControls::default())
            .unwrap_err();
        assert!(matches!(err, OdeError::StepSizeUnderflow { .. } | OdeError::NonFinite(_)), "{err:?}");
    }
}
