//! Four-compartment SEIR model.

use serde::{Deserialize, Serialize};

use super::{integrate, IntegratorControls, ModelError, Trajectory};

pub const SEIR_LABELS: [&str; 4] = ["S", "E", "I", "R"];

/// Transition rates (per day) and population size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeirParams {
    pub beta: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub population: f64,
}

impl SeirParams {
    pub fn new(beta: f64, sigma: f64, gamma: f64, population: f64) -> Result<Self, ModelError> {
        let p = SeirParams { beta, sigma, gamma, population };
        p.validate()?;
        Ok(p)
    }

    /// From the reproduction number and mean incubation/infectious durations (days).
    pub fn from_reproduction(
        r0: f64,
        incubation_days: f64,
        infectious_days: f64,
        population: f64,
    ) -> Result<Self, ModelError> {
        for (name, value) in [
            ("R0", r0),
            ("tau_inc", incubation_days),
            ("tau_inf", infectious_days),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ModelError::InvalidParameter { name, value, reason: "must be positive" });
            }
        }
        let gamma = 1.0 / infectious_days;
        Self::new(r0 * gamma, 1.0 / incubation_days, gamma, population)
    }

    /// Checks positivity. `beta = 0` is allowed (no transmission).
    pub fn validate(&self) -> Result<(), ModelError> {
        let checks = [
            ("beta", self.beta, self.beta >= 0.0),
            ("sigma", self.sigma, self.sigma > 0.0),
            ("gamma", self.gamma, self.gamma > 0.0),
            ("N", self.population, self.population > 0.0),
        ];
        for (name, value, ok) in checks {
            if !ok || !value.is_finite() {
                return Err(ModelError::InvalidParameter { name, value, reason: "must be positive" });
            }
        }
        Ok(())
    }

    pub fn reproduction_number(&self) -> f64 {
        self.beta / self.gamma
    }
}

/// Derivatives `(dS, dE, dI, dR)` of the SEIR system.
pub fn seir_rhs(state: &[f64; 4], _t: f64, params: &SeirParams) -> [f64; 4] {
    let [s, e, i, _] = *state;
    let infection = params.beta * i * s / params.population;
    let onset = params.sigma * e;
    let recovery = params.gamma * i;
    [-infection, infection - onset, onset - recovery, recovery]
}

/// Integrates the SEIR model from `initial` over `[0, horizon]`.
pub fn simulate_seir(
    params: &SeirParams,
    initial: [f64; 4],
    horizon: f64,
    controls: &IntegratorControls,
) -> Result<Trajectory, ModelError> {
    params.validate()?;
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let d = seir_rhs(&[y[0], y[1], y[2], y[3]], t, params);
        dy.copy_from_slice(&d);
    };
    let mut traj = integrate(rhs, &initial, (0.0, horizon), controls)?;
    traj.labels = SEIR_LABELS.iter().map(|s| s.to_string()).collect();
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epimodels::find_peak;

    #[test]
    fn disease_free_equilibrium() {
        let p = SeirParams::new(0.5, 0.2, 0.1, 100.0).unwrap();
        assert_eq!(seir_rhs(&[100.0, 0.0, 0.0, 0.0], 0.0, &p), [0.0; 4]);
        let d = seir_rhs(&[90.0, 10.0, 0.0, 0.0], 0.0, &p);
        assert_eq!(d, [0.0, -2.0, 2.0, 0.0]);
    }

    #[test]
    fn direct_substitution() {
        let p = SeirParams::new(0.5, 0.2, 0.1, 100.0).unwrap();
        let d = seir_rhs(&[100.0, 0.0, 1.0, 0.0], 0.0, &p);
        assert_eq!(d[0], -0.5);
        assert!(d.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn reproduction_constructor() {
        let p = SeirParams::from_reproduction(2.0, 5.0, 4.0, 1e6).unwrap();
        assert!((p.gamma - 0.25).abs() < 1e-15);
        assert!((p.sigma - 0.2).abs() < 1e-15);
        assert!((p.beta - 0.5).abs() < 1e-15);
        assert!((p.reproduction_number() - 2.0).abs() < 1e-15);
        assert!(SeirParams::from_reproduction(-1.0, 5.0, 4.0, 1e6).is_err());
        assert!(SeirParams::new(0.1, 0.1, 0.1, 0.0).is_err());
    }

    #[test]
    fn conservation_over_long_run() {
        let n = 5.8e6;
        let p = SeirParams::from_reproduction(1.4, 4.2, 3.3, n).unwrap();
        let traj = simulate_seir(&p, [n - 1.0, 0.0, 1.0, 0.0], 1500.0, &IntegratorControls::for_population(n))
            .unwrap();
        for s in &traj.states {
            assert!((s.iter().sum::<f64>() - n).abs() < 1e-6 * n);
            assert!(s.iter().all(|&v| v >= -1e-9 * n));
        }
        let peak = find_peak(&traj, 2).unwrap();
        assert!(peak.time > 50.0 && peak.time < 1500.0);
    }

    #[test]
    fn no_transmission_has_no_peak() {
        let p = SeirParams::new(0.0, 0.2, 0.1, 1000.0).unwrap();
        let traj =
            simulate_seir(&p, [990.0, 0.0, 10.0, 0.0], 100.0, &IntegratorControls::for_population(1000.0)).unwrap();
        assert_eq!(find_peak(&traj, 2), Err(crate::epimodels::PeakError::NeverTakesOff));
    }
}
