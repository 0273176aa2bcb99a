//! SIR-type model with superspreaders and a time-dependent infectivity cap.
//!
//! Compartments: S, E, I1 (asymptomatic), I2 (symptomatic), W (waiting),
//! H (hospital), C (critical care), R, plus a ninth bookkeeping state that
//! accumulates hospital admissions.
//!
//! Individual infectivity is piecewise constant: a fraction `p` of the
//! population infects at rate `sA`, the rest at rate `s`. A restriction caps
//! every individual's rate at `c(t)`, so the population mean becomes
//! `p min(sA, c) + (1 - p) min(s, c)`.

use serde::{Deserialize, Serialize};

use super::{integrate, IntegratorControls, ModelError, PeakError, Trajectory};

pub const SUPERSPREADER_LABELS: [&str; 9] = ["S", "E", "I1", "I2", "W", "H", "C", "R", "H_cum"];
pub const CUMULATIVE_ADMISSIONS: usize = 8;

/// One age band: population share `d`, hospitalization probability `h`,
/// and probability `kappa` of moving on to critical care (all fractions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeGroup {
    pub d: f64,
    pub h: f64,
    pub kappa: f64,
}

const fn pct(d: f64, h: f64, kappa: f64) -> AgeGroup {
    AgeGroup { d: d / 100.0, h: h / 100.0, kappa: kappa / 100.0 }
}

/// Age bands 0-9, 10-19, ..., 80+. Shares sum to one.
pub const AGE_TABLE: [AgeGroup; 9] = [
    pct(10.9, 0.001, 5.0),
    pct(11.9, 0.013, 5.0),
    pct(13.3, 0.37, 5.0),
    pct(11.7, 1.1, 5.0),
    pct(13.6, 1.4, 6.3),
    pct(13.6, 2.7, 12.2),
    pct(11.7, 3.9, 27.4),
    pct(8.9, 5.5, 43.2),
    pct(4.4, 5.5, 70.9),
];

/// Branch probabilities `(z1, z2)`: `z1 = sum d_i h_i` and
/// `z2 = sum (d_i h_i / z1) kappa_i`.
pub fn hospitalization_split(table: &[AgeGroup]) -> Result<(f64, f64), ModelError> {
    if let Some(bad) = table.iter().find(|g| !(g.d >= 0.0 && g.h >= 0.0 && g.kappa >= 0.0)) {
        return Err(ModelError::InvalidParameter {
            name: "age table",
            value: bad.d.min(bad.h).min(bad.kappa),
            reason: "entries must be non-negative",
        });
    }
    let share: f64 = table.iter().map(|g| g.d).sum();
    if (share - 1.0).abs() > 1e-6 {
        return Err(ModelError::InvalidParameter {
            name: "sum of d",
            value: share,
            reason: "population shares must sum to 1",
        });
    }
    let z1: f64 = table.iter().map(|g| g.d * g.h).sum();
    if !(z1 > 0.0) {
        return Err(ModelError::InvalidParameter {
            name: "z1",
            value: z1,
            reason: "no hospitalizations in table",
        });
    }
    let z2 = table.iter().map(|g| g.d * g.h / z1 * g.kappa).sum();
    Ok((z1, z2))
}

/// Piecewise-constant infectivity: `sA` for the top fraction `p`, `s` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfectivityProfile {
    /// Fraction of superspreaders.
    pub p: f64,
    /// Fraction of all infections caused by the superspreaders.
    pub cp: f64,
    /// Base infection rate (1/day).
    pub s: f64,
}

impl InfectivityProfile {
    pub fn new(p: f64, cp: f64, s: f64) -> Result<Self, ModelError> {
        let profile = InfectivityProfile { p, cp, s };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(ModelError::InvalidParameter { name: "p", value: self.p, reason: "must lie in (0, 1)" });
        }
        if !(self.cp > self.p && self.cp < 1.0) {
            return Err(ModelError::InvalidParameter { name: "C_p", value: self.cp, reason: "must lie in (p, 1)" });
        }
        if !(self.s > 0.0) || !self.s.is_finite() {
            return Err(ModelError::InvalidParameter { name: "s", value: self.s, reason: "must be positive" });
        }
        Ok(())
    }

    /// Superspreader multiplier A solving `pA / (pA + 1 - p) = C_p`.
    pub fn multiplier(&self) -> f64 {
        self.cp * (1.0 - self.p) / (self.p * (1.0 - self.cp))
    }

    /// Mean infectivity without restrictions, `s (pA + 1 - p)`.
    pub fn unrestricted_mean(&self) -> f64 {
        self.s * (self.p * self.multiplier() + 1.0 - self.p)
    }

    /// Share of infections caused by the top fraction `p` (recovers `C_p`).
    pub fn superspreader_share(&self) -> f64 {
        let a = self.multiplier();
        self.p * a / (self.p * a + 1.0 - self.p)
    }
}

/// Cap on individual infectivity at a point in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapLevel {
    Unrestricted,
    Cap(f64),
}

/// Population-mean infectivity under a cap.
pub fn effective_beta(profile: &InfectivityProfile, cap: CapLevel) -> f64 {
    match cap {
        CapLevel::Unrestricted => profile.unrestricted_mean(),
        CapLevel::Cap(c) => {
            let high = profile.s * profile.multiplier();
            profile.p * high.min(c) + (1.0 - profile.p) * profile.s.min(c)
        }
    }
}

/// Restriction levels switching at three breakpoints.
///
/// `c(t)` is `pre_lockdown` for `t <= t1`, `c1` on `(t1, t2]`, `c2` on
/// `(t2, t3]` and `c3` afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestrictionSchedule {
    pub breakpoints: [f64; 3],
    pub levels: [f64; 3],
    pub pre_lockdown: CapLevel,
}

impl RestrictionSchedule {
    pub fn new(breakpoints: [f64; 3], levels: [f64; 3], pre_lockdown: CapLevel) -> Result<Self, ModelError> {
        let s = RestrictionSchedule { breakpoints, levels, pre_lockdown };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let [t1, t2, t3] = self.breakpoints;
        if !(t1 < t2 && t2 < t3) {
            return Err(ModelError::InvalidParameter {
                name: "breakpoints",
                value: t2,
                reason: "must satisfy t1 < t2 < t3",
            });
        }
        for c in self.levels {
            if !(c > 0.0) || !c.is_finite() {
                return Err(ModelError::InvalidParameter { name: "restriction level", value: c, reason: "must be positive" });
            }
        }
        if let CapLevel::Cap(c) = self.pre_lockdown {
            if !(c > 0.0) {
                return Err(ModelError::InvalidParameter { name: "pre-lockdown cap", value: c, reason: "must be positive" });
            }
        }
        Ok(())
    }

    pub fn level_at(&self, t: f64) -> CapLevel {
        let [t1, t2, t3] = self.breakpoints;
        if t <= t1 {
            self.pre_lockdown
        } else if t <= t2 {
            CapLevel::Cap(self.levels[0])
        } else if t <= t3 {
            CapLevel::Cap(self.levels[1])
        } else {
            CapLevel::Cap(self.levels[2])
        }
    }

    /// `c(t)` as a number; the no-restriction sentinel reads as 1.
    pub fn plotted_level(&self, t: f64) -> f64 {
        match self.level_at(t) {
            CapLevel::Unrestricted => 1.0,
            CapLevel::Cap(c) => c,
        }
    }
}

/// Everything needed to run the superspreader model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperspreaderParams {
    pub sigma: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub alpha: f64,
    pub zeta: f64,
    pub z1: f64,
    pub z2: f64,
    pub profile: InfectivityProfile,
    pub schedule: RestrictionSchedule,
    pub population: f64,
    pub initial_infected: f64,
}

impl SuperspreaderParams {
    /// Published rates (in days: 1.2, 1.2, 3, 2, 5, 12), the age-table
    /// branch probabilities, `(p, C_p) = (0.1, 0.8)` and the fitted values
    /// `s = 0.602`, `I0 = 473.572`, `c = (0.130, 0.187, 0.188)` with
    /// breakpoints `(16, 46, 86)` and `N = 5.8e6`.
    pub fn reference() -> Self {
        let (z1, z2) = hospitalization_split(&AGE_TABLE).expect("age table is valid");
        SuperspreaderParams {
            sigma: 1.0 / 1.2,
            gamma1: 1.0 / 1.2,
            gamma2: 1.0 / 3.0,
            gamma3: 1.0 / 2.0,
            alpha: 1.0 / 5.0,
            zeta: 1.0 / 12.0,
            z1,
            z2,
            profile: InfectivityProfile { p: 0.1, cp: 0.8, s: 0.602 },
            schedule: RestrictionSchedule {
                breakpoints: [16.0, 46.0, 86.0],
                levels: [0.130, 0.187, 0.188],
                pre_lockdown: CapLevel::Cap(1.0),
            },
            population: 5.8e6,
            initial_infected: 473.572,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, value) in [
            ("sigma", self.sigma),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("gamma3", self.gamma3),
            ("alpha", self.alpha),
            ("zeta", self.zeta),
            ("N", self.population),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ModelError::InvalidParameter { name, value, reason: "must be positive" });
            }
        }
        for (name, value) in [("z1", self.z1), ("z2", self.z2)] {
            if !(value > 0.0 && value < 1.0) {
                return Err(ModelError::InvalidParameter { name, value, reason: "must lie in (0, 1)" });
            }
        }
        if !(self.initial_infected >= 0.0) || self.initial_infected > self.population {
            return Err(ModelError::InvalidParameter {
                name: "I0",
                value: self.initial_infected,
                reason: "must lie in [0, N]",
            });
        }
        self.profile.validate()?;
        self.schedule.validate()
    }

    /// `S = N - I0`, `E = I0/2`, `I1 = I0/3`, `I2 = I0/6`, everything else 0.
    pub fn initial_state(&self) -> [f64; 9] {
        let i0 = self.initial_infected;
        [self.population - i0, i0 / 2.0, i0 / 3.0, i0 / 6.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    }
}

fn rhs_with_cap(y: &[f64], p: &SuperspreaderParams, cap: CapLevel) -> [f64; 9] {
    let (s, e, i1, i2, w, h, c) = (y[0], y[1], y[2], y[3], y[4], y[5], y[6]);
    let infection = effective_beta(&p.profile, cap) * (i1 + i2) * s / p.population;
    let onset = p.sigma * e;
    let progress = p.gamma1 * i1;
    let isolate = p.gamma2 * i2;
    let leave_w = p.gamma3 * w;
    let admit = p.z1 * leave_w;
    let leave_h = p.alpha * h;
    let critical = p.z2 * leave_h;
    let leave_c = p.zeta * c;
    [
        -infection,
        infection - onset,
        onset - progress,
        progress - isolate,
        isolate - leave_w,
        admit - leave_h,
        critical - leave_c,
        (leave_w - admit) + (leave_h - critical) + leave_c,
        admit,
    ]
}

/// Derivatives of the nine model states at time `t`.
pub fn superspreader_rhs(state: &[f64; 9], t: f64, params: &SuperspreaderParams) -> [f64; 9] {
    rhs_with_cap(state, params, params.schedule.level_at(t))
}

/// Integrates the model over `[0, horizon]`, restarting the integrator at
/// each restriction breakpoint so no step straddles a jump in `c(t)`.
///
/// Observables: `beta_bar` and `restriction` at every sample.
pub fn simulate_superspreader(
    params: &SuperspreaderParams,
    horizon: f64,
    controls: &IntegratorControls,
) -> Result<Trajectory, ModelError> {
    params.validate()?;
    let mut edges = vec![0.0];
    edges.extend(params.schedule.breakpoints.iter().copied().filter(|&b| b > 0.0 && b < horizon));
    edges.push(horizon);

    let mut traj: Option<Trajectory> = None;
    let mut state: Vec<f64> = params.initial_state().to_vec();
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let cap = params.schedule.level_at(0.5 * (a + b));
        let rhs = |_: f64, y: &[f64], dy: &mut [f64]| dy.copy_from_slice(&rhs_with_cap(y, params, cap));
        let piece = integrate(rhs, &state, (a, b), controls)?;
        state = piece.final_state().to_vec();
        match traj.as_mut() {
            Some(t) => t.append(piece),
            None => traj = Some(piece),
        }
    }
    let mut traj = traj.expect("at least one segment");
    traj.labels = SUPERSPREADER_LABELS.iter().map(|s| s.to_string()).collect();
    let beta: Vec<f64> = traj
        .times
        .iter()
        .map(|&t| effective_beta(&params.profile, params.schedule.level_at(t)))
        .collect();
    let level: Vec<f64> = traj.times.iter().map(|&t| params.schedule.plotted_level(t)).collect();
    traj.observables.push(("beta_bar".into(), beta));
    traj.observables.push(("restriction".into(), level));
    Ok(traj)
}

/// New hospital admissions per day: element `d` counts admissions during `[d, d + 1)`.
pub fn daily_admissions(traj: &Trajectory) -> Result<Vec<f64>, PeakError> {
    traj.daily_increments(CUMULATIVE_ADMISSIONS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_with_sentinel() -> SuperspreaderParams {
        let mut p = SuperspreaderParams::reference();
        p.schedule.pre_lockdown = CapLevel::Unrestricted;
        p
    }

    #[test]
    fn multiplier_from_share() {
        let profile = InfectivityProfile::new(0.1, 0.8, 0.602).unwrap();
        assert!((profile.multiplier() - 36.0).abs() < 1e-12);
        assert!((profile.superspreader_share() - 0.8).abs() < 1e-12);
        assert!((profile.unrestricted_mean() - 2.709).abs() < 1e-12);
        assert!((effective_beta(&profile, CapLevel::Unrestricted) - 4.5 * 0.602).abs() < 1e-12);
    }

    #[test]
    fn capped_mean() {
        let profile = InfectivityProfile::new(0.1, 0.8, 0.602).unwrap();
        assert!((effective_beta(&profile, CapLevel::Cap(0.130)) - 0.130).abs() < 1e-15);
        // Only superspreaders are capped.
        let mid = effective_beta(&profile, CapLevel::Cap(1.0));
        assert!((mid - (0.1 + 0.9 * 0.602)).abs() < 1e-15);
        // A cap above sA changes nothing.
        let loose = effective_beta(&profile, CapLevel::Cap(100.0));
        assert!((loose - profile.unrestricted_mean()).abs() < 1e-12);
    }

    #[test]
    fn profile_validation() {
        assert!(InfectivityProfile::new(0.0, 0.8, 1.0).is_err());
        assert!(InfectivityProfile::new(0.3, 0.2, 1.0).is_err());
        assert!(InfectivityProfile::new(0.1, 0.8, 0.0).is_err());
    }

    #[test]
    fn split_examples() {
        let uniform: Vec<AgeGroup> = [0.2, 0.3, 0.5]
            .iter()
            .zip([0.1, 0.2, 0.3])
            .map(|(&d, k)| AgeGroup { d, h: 0.04, kappa: k })
            .collect();
        let (z1, z2) = hospitalization_split(&uniform).unwrap();
        assert!((z1 - 0.04).abs() < 1e-15);
        assert!((z2 - (0.02 + 0.06 + 0.15)).abs() < 1e-15);

        let single = [AgeGroup { d: 1.0, h: 0.3, kappa: 0.2 }];
        assert_eq!(hospitalization_split(&single).unwrap(), (0.3, 0.2));

        let none = [AgeGroup { d: 1.0, h: 0.0, kappa: 0.2 }];
        assert!(hospitalization_split(&none).is_err());
        let short = [AgeGroup { d: 0.5, h: 0.1, kappa: 0.2 }];
        assert!(hospitalization_split(&short).is_err());
    }

    #[test]
    fn schedule_levels() {
        let s = SuperspreaderParams::reference().schedule;
        assert_eq!(s.level_at(16.0), CapLevel::Cap(1.0));
        assert_eq!(s.level_at(16.5), CapLevel::Cap(0.130));
        assert_eq!(s.level_at(46.0), CapLevel::Cap(0.130));
        assert_eq!(s.level_at(50.0), CapLevel::Cap(0.187));
        assert_eq!(s.level_at(90.0), CapLevel::Cap(0.188));
        assert!(RestrictionSchedule::new([10.0, 5.0, 20.0], [0.1; 3], CapLevel::Unrestricted).is_err());
        assert_eq!(reference_with_sentinel().schedule.plotted_level(3.0), 1.0);
    }

    #[test]
    fn rhs_properties() {
        let p = SuperspreaderParams::reference();
        let mut quiet = [0.0; 9];
        quiet[0] = p.population;
        assert_eq!(superspreader_rhs(&quiet, 0.0, &p), [0.0; 9]);

        let state = [5e6, 1e3, 500.0, 300.0, 100.0, 50.0, 10.0, 1e5, 0.0];
        let d = superspreader_rhs(&state, 30.0, &p);
        assert!(d[..8].iter().sum::<f64>().abs() < 1e-9);

        let mut waiting = [0.0; 9];
        waiting[0] = p.population;
        waiting[4] = 100.0;
        let mut q = p;
        q.z1 = 0.02;
        let d = superspreader_rhs(&waiting, 0.0, &q);
        assert!((d[8] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simulation_conserves_population() {
        let p = SuperspreaderParams::reference();
        let traj = simulate_superspreader(&p, 200.0, &IntegratorControls::for_population(p.population)).unwrap();
        assert_eq!(traj.len(), 201);
        for s in &traj.states {
            assert!((s[..8].iter().sum::<f64>() - p.population).abs() < 1e-6 * p.population);
            assert!(s.iter().all(|&v| v >= -1e-9 * p.population));
        }
        let adm = daily_admissions(&traj).unwrap();
        assert_eq!(adm.len(), 200);
        let total: f64 = adm.iter().sum();
        assert!((total - traj.final_state()[8]).abs() < 1e-8 * total.max(1.0));
        assert_eq!(traj.observable("restriction").unwrap()[20], 0.130);
    }

    #[test]
    fn zero_epidemic_has_no_admissions() {
        let mut p = SuperspreaderParams::reference();
        p.initial_infected = 0.0;
        let traj = simulate_superspreader(&p, 60.0, &IntegratorControls::for_population(p.population)).unwrap();
        assert!(daily_admissions(&traj).unwrap().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn admissions_grow_with_cap() {
        let base = SuperspreaderParams::reference();
        let controls = IntegratorControls::for_population(base.population);
        let mut last = 0.0;
        for c in [0.10, 0.13, 0.16, 0.20] {
            let mut p = base;
            p.schedule.levels = [c, 0.187, 0.188];
            let traj = simulate_superspreader(&p, 120.0, &controls).unwrap();
            let total = traj.final_state()[CUMULATIVE_ADMISSIONS];
            assert!(total >= last);
            last = total;
        }
    }
}
