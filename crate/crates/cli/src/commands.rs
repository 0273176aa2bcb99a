use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use epichaos::calibrate::{
    growth_rate, synthesize_data, AdmissionsSeries, FitResult, StageOneWeights, FLAG_NOT_CONVERGED,
    FLAG_ORDERING_VIOLATED,
};
use epichaos::cases::{
    dominance_sequence, run_case1, run_case2_fit, run_case2_uq, run_quad_check, DailyStatistics, CASE1_OUTPUTS,
    CASE1_PARAMETERS, UQ_PARAMETERS,
};
use epichaos::epimodels::{effective_beta, simulate_superspreader, CapLevel, IntegratorControls, SuperspreaderParams};
use epichaos::sobol::{ordered_subsets, subset_label, write_series_csv, SobolIndices};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::output::OutputDir;

/// Marks an error as a numerical failure (exit code 2) rather than a usage error.
#[derive(Debug)]
pub struct NumericalFailure;

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("numerical failure")
    }
}

trait Numerical<T> {
    fn numerical(self) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> Numerical<T> for std::result::Result<T, E> {
    fn numerical(self) -> Result<T> {
        self.map_err(|e| e.into().context(NumericalFailure))
    }
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn sobol_json(s: &SobolIndices, params: &[String]) -> Value {
    let subsets: serde_json::Map<String, Value> =
        ordered_subsets(s.dim).into_iter().map(|m| (subset_label(m, params), json!(s.indices[m]))).collect();
    let first_total: serde_json::Map<String, Value> = (0..s.dim)
        .map(|i| {
            let (first, total) = s.first_order_and_total(i).expect("parameter in range");
            (params[i].clone(), json!({"first_order": first, "total": total}))
        })
        .collect();
    json!({
        "total_variance": s.total_variance,
        "degenerate": s.degenerate,
        "subsets": subsets,
        "parameters": first_total,
    })
}

pub fn quad_check(config: &RunConfig, out: Option<&mut OutputDir>) -> Result<i32> {
    let q = &config.quad_check;
    let report = run_quad_check(q.max_points, q.perturb).numerical()?;
    println!(
        "quadrature sweep 1..={} points: max exactness error {:.3e}, max orthonormality error {:.3e} (tolerance {:.0e})",
        q.max_points, report.max_exactness, report.max_orthonormality, report.tolerance
    );
    if let Some(out) = out {
        let mut body = String::from("family,points,exactness,orthonormality\n");
        for r in &report.rows {
            writeln!(body, "{},{},{},{}", r.family, r.points, r.exactness, r.orthonormality)?;
        }
        out.csv("quad_check.csv", &body)?;
        out.json("quad_check.json", json!({
            "max_exactness": report.max_exactness,
            "max_orthonormality": report.max_orthonormality,
            "tolerance": report.tolerance,
            "passed": report.passed,
        }))?;
    }
    if report.passed {
        println!("PASS");
        Ok(0)
    } else {
        println!("FAIL");
        Ok(2)
    }
}

pub fn case1(config: &RunConfig, out: &mut OutputDir) -> Result<i32> {
    let cfg = config.case1.to_config()?;
    let report = run_case1(&cfg).numerical()?;
    let params = names(&CASE1_PARAMETERS);

    let mut samples = String::from("node,R0,tau_inc,tau_inf,weight,t_peak,I_peak\n");
    for (j, (x, y)) in report.grid.parameter_nodes.iter().zip(&report.outputs).enumerate() {
        writeln!(samples, "{j},{},{},{},{},{},{}", x[0], x[1], x[2], report.grid.weights[j], y[0], y[1])?;
    }
    out.csv("case1_samples.csv", &samples)?;

    let mut densities = String::from("output,x,pdf\n");
    for (name, spec) in CASE1_OUTPUTS.iter().zip(&report.fitted) {
        let sd = spec.std_dev();
        let lo = (spec.mean - 4.0 * sd).max(spec.mean * 1e-3);
        let hi = spec.mean + 4.0 * sd;
        for k in 0..=200 {
            let x = lo + (hi - lo) * k as f64 / 200.0;
            writeln!(densities, "{name},{x},{}", spec.pdf(x))?;
        }
    }
    out.csv("case1_densities.csv", &densities)?;

    let mut sobol = String::from("subset,t_peak,I_peak\n");
    for m in ordered_subsets(3) {
        writeln!(sobol, "{},{},{}", subset_label(m, &params), report.sobol[0].indices[m], report.sobol[1].indices[m])?;
    }
    out.csv("case1_sobol.csv", &sobol)?;

    let fitted: Vec<Value> = report
        .fitted
        .iter()
        .map(|s| {
            let (mu, sigma) = s.underlying_normal();
            json!({"mean": s.mean, "variance": s.variance, "log_mean": mu, "log_sd": sigma})
        })
        .collect();
    out.json("case1_summary.json", json!({
        "order": cfg.order,
        "solves": report.solves,
        "outputs": CASE1_OUTPUTS,
        "parameters": CASE1_PARAMETERS,
        "mean": report.mean,
        "variance": report.variance,
        "covariance": report.covariance,
        "lognormal_fit": fitted,
        "sobol": {
            "t_peak": sobol_json(&report.sobol[0], &params),
            "I_peak": sobol_json(&report.sobol[1], &params),
        },
        "expansion": serde_json::to_value(&report.expansion)?,
    }))?;

    println!("case1: q = {}, {} model solves", cfg.order, report.solves);
    for (k, name) in CASE1_OUTPUTS.iter().enumerate() {
        let s = &report.sobol[k];
        println!(
            "  {name}: mean {:.6e}, variance {:.6e}, first-order S = ({:.4}, {:.4}, {:.4})",
            report.mean[k], report.variance[k], s.indices[1], s.indices[2], s.indices[4]
        );
    }
    Ok(0)
}

fn read_data(path: &Path) -> Result<AdmissionsSeries> {
    let file = fs::File::open(path).with_context(|| format!("cannot open data file {}", path.display()))?;
    AdmissionsSeries::read_csv(file).with_context(|| format!("cannot read data file {}", path.display()))
}

fn derived_constants(p: &SuperspreaderParams) -> Value {
    json!({
        "A": p.profile.multiplier(),
        "beta_bar_unrestricted": p.profile.unrestricted_mean(),
        "beta_bar_pre_lockdown": effective_beta(&p.profile, p.schedule.pre_lockdown),
        "z1": p.z1,
        "z2": p.z2,
    })
}

fn parameters_json(p: &SuperspreaderParams) -> Value {
    let pre = match p.schedule.pre_lockdown {
        CapLevel::Unrestricted => json!("unrestricted"),
        CapLevel::Cap(c) => json!(c),
    };
    json!({
        "s": p.profile.s,
        "I0": p.initial_infected,
        "c1": p.schedule.levels[0],
        "c2": p.schedule.levels[1],
        "c3": p.schedule.levels[2],
        "p": p.profile.p,
        "cp": p.profile.cp,
        "breakpoints": p.schedule.breakpoints,
        "pre_lockdown": pre,
    })
}

pub fn case2_fit(config: &RunConfig, data_path: &Path, out: &mut OutputDir) -> Result<i32> {
    let template = config.model.to_params()?;
    let data = read_data(data_path)?;
    let weights = config.fit.weights(StageOneWeights::for_data(&data));
    let settings = config.fit.settings(config.seed);
    let fit = run_case2_fit(&template, &data, &weights, &settings).numerical()?;

    let mut traj = Vec::new();
    fit.trajectory.write_csv(&mut traj)?;
    out.csv("case2_trajectory.csv", std::str::from_utf8(&traj)?)?;

    let mut residuals = String::from("date,day,data,model,residual\n");
    for (i, &d) in data.days.iter().enumerate() {
        let (h, m) = (data.admissions[i], fit.model_admissions[i]);
        writeln!(residuals, "{},{d},{h},{m},{}", data.dates[i], m - h)?;
    }
    out.csv("case2_residuals.csv", &residuals)?;

    let flags: Vec<&String> = fit.stage_one.flags.iter().chain(&fit.stage_two.flags).collect();
    out.json("case2_fit.json", json!({
        "parameters": parameters_json(&fit.fitted),
        "derived": derived_constants(&fit.fitted),
        "weights": serde_json::to_value(weights)?,
        "stage_one": fit.stage_one.to_json(),
        "stage_two": fit.stage_two.to_json(),
        "flags": flags,
    }))?;

    let p = &fit.fitted;
    println!("case2 fit: A = {}, s = {:.6}, I0 = {:.6}", p.profile.multiplier(), p.profile.s, p.initial_infected);
    println!(
        "  c = ({:.6}, {:.6}, {:.6}), stage-two objective {:.6e}",
        p.schedule.levels[0], p.schedule.levels[1], p.schedule.levels[2], fit.stage_two.objective
    );
    let hard = [FLAG_NOT_CONVERGED, FLAG_ORDERING_VIOLATED];
    let bad: Vec<&&String> = flags.iter().filter(|f| hard.contains(&f.as_str())).collect();
    for f in &flags {
        eprintln!("warning: fit flagged {f}");
    }
    Ok(if bad.is_empty() { 0 } else { 2 })
}

/// Restriction levels, `s` and `I0` from a fit summary written by `case2 fit`.
fn apply_fit(params: &mut SuperspreaderParams, path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot open fit file {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    let stage = |key: &str| -> Result<FitResult> {
        FitResult::from_json(&value[key]).with_context(|| format!("{} has no valid {key}", path.display()))
    };
    let (one, two) = (stage("stage_one")?, stage("stage_two")?);
    params.profile.s = one.get("s")?;
    params.initial_infected = one.get("I0")?;
    params.schedule.levels = [two.get("c1")?, two.get("c2")?, two.get("c3")?];
    params.validate()?;
    Ok(())
}

fn bands_csv(stats: &[DailyStatistics], restriction: &[f64]) -> Result<String> {
    let mut body = String::from("day,restriction");
    for q in stats {
        for col in ["nominal", "mean", "variance", "lower", "upper"] {
            write!(body, ",{}_{col}", q.name)?;
        }
    }
    body.push('\n');
    for (d, level) in restriction.iter().enumerate() {
        write!(body, "{d},{level}")?;
        for q in stats {
            match q.mean.get(d) {
                Some(_) => write!(
                    body,
                    ",{},{},{},{},{}",
                    q.nominal[d], q.mean[d], q.variance[d], q.lower[d], q.upper[d]
                )?,
                None => body.push_str(",,,,,"),
            }
        }
        body.push('\n');
    }
    Ok(body)
}

pub fn case2_uq(config: &RunConfig, fit_path: Option<&Path>, out: &mut OutputDir) -> Result<i32> {
    let mut params = config.model.to_params()?;
    if let Some(path) = fit_path {
        apply_fit(&mut params, path)?;
    }
    let uq = run_case2_uq(&params, &config.uq).numerical()?;
    let labels = names(&UQ_PARAMETERS);

    out.csv("case2_uq_bands.csv", &bands_csv(&uq.quantities, &uq.restriction)?)?;
    let mut summary = serde_json::Map::new();
    for q in &uq.quantities {
        let mut body = Vec::new();
        write_series_csv(&mut body, &q.days, &q.sobol, &labels)?;
        out.csv(&format!("case2_uq_sobol_{}.csv", q.name), std::str::from_utf8(&body)?)?;
        let dominance: Vec<&str> = dominance_sequence(&q.sobol).into_iter().map(|i| UQ_PARAMETERS[i]).collect();
        let non_degenerate = q.sobol.iter().filter(|s| !s.degenerate).count();
        let max_sum_error =
            q.sobol.iter().filter(|s| !s.degenerate).map(|s| (s.sum() - 1.0).abs()).fold(0.0, f64::max);
        println!("  {}: dominance {}, max |sum S - 1| = {:.2e}", q.name, dominance.join(" -> "), max_sum_error);
        summary.insert(q.name.clone(), json!({
            "dominance": dominance,
            "non_degenerate_days": non_degenerate,
            "max_sum_error": max_sum_error,
        }));
    }
    out.json("case2_uq_summary.json", json!({
        "order": config.uq.order,
        "solves": uq.solves,
        "relative_sd": config.uq.relative_sd,
        "coverage": config.uq.coverage,
        "horizon": config.uq.horizon,
        "parameters": parameters_json(&params),
        "quantities": summary,
    }))?;
    println!("case2 uq: q = {}, {} model solves", config.uq.order, uq.solves);
    Ok(0)
}

pub fn synth(config: &RunConfig, out: &mut OutputDir) -> Result<i32> {
    let truth = config.model.to_params()?;
    let controls = IntegratorControls::for_population(truth.population);
    let data = synthesize_data(&truth, config.synth.noise, config.seed, config.synth.days, &controls).numerical()?;
    let t1 = truth.schedule.breakpoints[0] as usize;
    let pre = simulate_superspreader(&truth, t1 as f64, &controls).numerical()?;
    let growth = growth_rate(&pre, t1).numerical()?;

    let mut body = Vec::new();
    data.write_csv(&mut body)?;
    out.csv("synthetic_admissions.csv", std::str::from_utf8(&body)?)?;
    out.json("synthetic_truth.json", json!({
        "parameters": parameters_json(&truth),
        "derived": derived_constants(&truth),
        "growth_rate": growth,
        "noise": config.synth.noise,
        "seed": config.seed,
        "days": config.synth.days,
    }))?;
    println!("synth: {} days, noise {}, pre-lockdown growth rate {growth:.6}", data.len(), config.synth.noise);
    Ok(0)
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read config file {}", p.display()))?;
            RunConfig::from_toml(&text).with_context(|| format!("invalid config file {}", p.display()))
        }
    }
}

pub fn thread_count() -> Result<Option<usize>> {
    match std::env::var("EPICHAOS_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(anyhow!("EPICHAOS_THREADS must be a positive integer, got {v:?}")),
        },
    }
}
