use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use rclf_core::certify::{
    synthesize_rclf_constants, verify_input_limited_conditions, verify_rclf_derivative,
    verify_relaxed_clf_conditions, verify_relaxed_conditions, CertificateReport, CertifyError,
    InputLimitedProblem, RclfConstants, RelaxedClfProblem,
};
use rclf_core::chemostat::{check_s2, ChemostatScenario};
use rclf_core::config::FeedbackSection;
use rclf_core::dynamics::{
    integrate_observed, norm, sample_disturbance, CompactBox, DisturbanceSignal, Stage, Trajectory,
};
use rclf_core::feedback::FeedbackLaw;
use rclf_core::harness::{
    backstepping_setup, chemostat_closed_loop, run_backstepping_suite, run_planar_suite,
    run_urgas_suite, simulate_backstepping, simulate_classical_physical, trial_seed,
    uncertainty_sweep, validate_absorbing_entry, washout_counterexample, HarnessError,
};
use rclf_core::report::{fmt17, to_json_string};
use rclf_core::{ConfigError, DisturbanceMode, ScenarioConfig};

use crate::svg::stacked_plot;

/// Seed stream for single runs, distinct from the suite streams.
const SINGLE_RUN_STREAM: u64 = 0;
const EQUILIBRIUM_REL_TOL: f64 = 0.01;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("operating point rejected: {0}")]
    Hypothesis(String),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Usage(_) => 2,
            Self::Harness(HarnessError::Dynamics(_)) => 3,
            Self::Hypothesis(_) | Self::Certify(_) | Self::Harness(_) => 4,
            Self::Io { .. } => 1,
        }
    }
}

/// What a command found, before it is mapped to an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Diverged,
    Failed,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Ok => 0,
            Self::Diverged => 3,
            Self::Failed => 4,
        }
    }
}

pub struct Ctx {
    pub cfg: ScenarioConfig,
    pub out: PathBuf,
    pub quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out).map_err(|source| CliError::Io {
            path: self.out.clone(),
            source,
        })?;
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        self.say(format!("wrote {}", path.display()));
        Ok(path)
    }

    fn write_json<T: Serialize + ?Sized>(
        &self,
        name: &str,
        value: &T,
    ) -> Result<PathBuf, CliError> {
        let s = to_json_string(value).map_err(|e| CliError::Io {
            path: self.out.join(name),
            source: std::io::Error::other(e),
        })?;
        self.write(name, &(s + "\n"))
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn chemostat_scenario(cfg: &ScenarioConfig) -> Result<ChemostatScenario, CliError> {
    Ok(cfg.scenario()?)
}

fn constants(sc: &ChemostatScenario) -> Result<RclfConstants, CliError> {
    let s2 = check_s2(sc).map_err(|e| CliError::Hypothesis(e.to_string()))?;
    Ok(synthesize_rclf_constants(sc, &s2)?)
}

/// Chemostat law of the configured family, synthesizing constants for `rclf`.
fn chemostat_law(cfg: &ScenarioConfig, sc: &ChemostatScenario) -> Result<FeedbackLaw, CliError> {
    if let Some(law) = cfg.chemostat_law()? {
        return Ok(law);
    }
    match cfg.feedback {
        FeedbackSection::Rclf { w_weight } => {
            Ok(FeedbackLaw::Rclf(constants(sc)?.rclf_params(w_weight)?))
        }
        _ => Err(usage("this command needs a chemostat feedback family")),
    }
}

fn single_run_disturbance(
    cfg: &ScenarioConfig,
    bx: &CompactBox,
    horizon: f64,
) -> Result<DisturbanceSignal, CliError> {
    let d = match cfg.integrator.disturbance {
        DisturbanceMode::Zero => DisturbanceSignal::constant(vec![0.0; bx.dim()], horizon),
        DisturbanceMode::Sampled => sample_disturbance(
            bx,
            cfg.integrator.switch_dt,
            horizon,
            trial_seed(cfg.master_seed, SINGLE_RUN_STREAM, 0),
        ),
    };
    d.map_err(|e| CliError::Harness(e.into()))
}

fn trajectory_csv(traj: &Trajectory, names: &[&str]) -> String {
    let mut buf = Vec::new();
    traj.write_csv_named(&mut buf, names)
        .expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("CSV is ASCII")
}

fn column(traj: &Trajectory, i: usize) -> Vec<f64> {
    traj.states().map(|x| x[i]).collect()
}

#[derive(Serialize)]
struct ChemostatSimSummary {
    family: &'static str,
    master_seed: u64,
    initial_transformed: [f64; 2],
    final_transformed: [f64; 2],
    final_biomass: f64,
    final_substrate: f64,
    equilibrium_biomass: f64,
    equilibrium_substrate: f64,
    within_one_percent: bool,
    diverged: bool,
}

#[derive(Serialize)]
struct StateSimSummary {
    family: &'static str,
    master_seed: u64,
    initial: Vec<f64>,
    final_state: Vec<f64>,
    final_norm: f64,
    min_input: f64,
    max_abs_input: f64,
    diverged: bool,
}

pub fn simulate(ctx: &Ctx) -> Result<Status, CliError> {
    match ctx.cfg.feedback {
        FeedbackSection::Constrained { .. } => simulate_planar(ctx),
        FeedbackSection::Backstepping { .. } => simulate_backstep_single(ctx),
        _ => simulate_chemostat(ctx),
    }
}

fn simulate_chemostat(ctx: &Ctx) -> Result<Status, CliError> {
    let cfg = &ctx.cfg;
    let sc = chemostat_scenario(cfg)?;
    let law = chemostat_law(cfg, &sc)?;
    let x0 = cfg.initial_state(&sc)?;
    let ucfg = cfg.urgas_config();
    ucfg.validate()?;
    let sys = chemostat_closed_loop(&sc, &law)?;
    let d = single_run_disturbance(cfg, &sys.disturbance, ucfg.horizon)?;
    let traj = integrate_observed(
        |t, x: &[f64], d: &[f64], out: &mut [f64]| (sys.rhs)(t, x, d, out),
        &x0,
        &d,
        &ucfg.stages(),
        cfg.integrator.record_stride,
        |_, _| {},
    )
    .map_err(|e| CliError::Harness(e.into()))?
    .with_inputs(|_, x| law.eval(&sc, x[0], x[1]));

    ctx.write(
        "trajectory_transformed.csv",
        &trajectory_csv(&traj, &["x1", "x2"]),
    )?;
    let inputs = traj.inputs.clone().unwrap_or_default();
    let mut phys = String::from("t,X,S,D\n");
    let (mut xs, mut ss, mut ds) = (Vec::new(), Vec::new(), Vec::new());
    for ((&t, x), &u) in traj.times.iter().zip(traj.states()).zip(&inputs) {
        let (xb, s) = sc.from_transformed(x[0], x[1]);
        let dil = sc.d_s + u;
        phys.push_str(&format!(
            "{},{},{},{}\n",
            fmt17(t),
            fmt17(xb),
            fmt17(s),
            fmt17(dil)
        ));
        xs.push(xb);
        ss.push(s);
        ds.push(dil);
    }
    ctx.write("trajectory_physical.csv", &phys)?;
    ctx.write(
        "trajectory.svg",
        &stacked_plot(
            &format!("chemostat, {} feedback", law.name()),
            &traj.times,
            &[("S", ss), ("X", xs), ("D", ds)],
        ),
    )?;

    let fin = traj.final_state();
    let (xb, s) = sc.from_transformed(fin[0], fin[1]);
    let within = ((xb - sc.x_s) / sc.x_s).abs() <= EQUILIBRIUM_REL_TOL
        && ((s - sc.s_s) / sc.s_s).abs() <= EQUILIBRIUM_REL_TOL;
    let summary = ChemostatSimSummary {
        family: law.name(),
        master_seed: cfg.master_seed,
        initial_transformed: x0,
        final_transformed: [fin[0], fin[1]],
        final_biomass: xb,
        final_substrate: s,
        equilibrium_biomass: sc.x_s,
        equilibrium_substrate: sc.s_s,
        within_one_percent: within,
        diverged: traj.diverged,
    };
    ctx.write_json("simulate.json", &summary)?;
    ctx.say(format!(
        "final (S, X) = ({s:.6}, {xb:.6}), equilibrium ({:.6}, {:.6}), within 1%: {within}",
        sc.s_s, sc.x_s
    ));
    Ok(if traj.diverged {
        Status::Diverged
    } else {
        Status::Ok
    })
}

fn state_summary(
    family: &'static str,
    cfg: &ScenarioConfig,
    traj: &Trajectory,
    x0: &[f64],
    min_u: f64,
    max_abs_u: f64,
) -> StateSimSummary {
    StateSimSummary {
        family,
        master_seed: cfg.master_seed,
        initial: x0.to_vec(),
        final_state: traj.final_state().to_vec(),
        final_norm: norm(traj.final_state()),
        min_input: min_u,
        max_abs_input: max_abs_u,
        diverged: traj.diverged,
    }
}

fn write_state_run(
    ctx: &Ctx,
    title: &str,
    traj: &Trajectory,
    summary: &StateSimSummary,
) -> Result<Status, CliError> {
    let names: Vec<String> = (1..=traj.dim()).map(|i| format!("x{i}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    ctx.write("trajectory.csv", &trajectory_csv(traj, &names))?;
    let mut series: Vec<(&str, Vec<f64>)> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (*n, column(traj, i)))
        .collect();
    series.push(("u", traj.inputs.clone().unwrap_or_default()));
    ctx.write("trajectory.svg", &stacked_plot(title, &traj.times, &series))?;
    ctx.write_json("simulate.json", summary)?;
    ctx.say(format!(
        "final |x| = {:.3e}, u in [{:.6}, {:.6}]",
        summary.final_norm, summary.min_input, summary.max_abs_input
    ));
    Ok(if traj.diverged {
        Status::Diverged
    } else {
        Status::Ok
    })
}

fn simulate_planar(ctx: &Ctx) -> Result<Status, CliError> {
    let cfg = &ctx.cfg;
    let ex = cfg.planar_example()?;
    let x0 = match &cfg.integrator.x0 {
        Some(v) if v.len() == 2 => v.clone(),
        Some(_) => return Err(usage("[integrator] x0 needs two entries")),
        None => vec![5.0, 5.0],
    };
    let horizon = cfg.integrator.horizon;
    let d =
        DisturbanceSignal::constant(vec![0.0], horizon).map_err(|e| CliError::Harness(e.into()))?;
    let stages = [Stage {
        until: horizon,
        step: cfg.integrator.step,
    }];
    let (mut min_u, mut max_u) = (f64::INFINITY, 0.0f64);
    let traj = integrate_observed(
        |_, x: &[f64], _: &[f64], out: &mut [f64]| ex.rhs(x, ex.law(x), out),
        &x0,
        &d,
        &stages,
        cfg.integrator.record_stride,
        |_, x| {
            let u = ex.law(x);
            min_u = min_u.min(u);
            max_u = max_u.max(u.abs());
        },
    )
    .map_err(|e| CliError::Harness(e.into()))?
    .with_inputs(|_, x| ex.law(x));
    let summary = state_summary("constrained", cfg, &traj, &x0, min_u, max_u);
    write_state_run(
        ctx,
        "planar example, input-limited feedback",
        &traj,
        &summary,
    )
}

fn simulate_backstep_single(ctx: &Ctx) -> Result<Status, CliError> {
    let cfg = &ctx.cfg;
    let bcfg = cfg.backstep_config()?;
    let (sys, gains) = backstepping_setup(&bcfg)?;
    let x0 = match &cfg.integrator.x0 {
        Some(v) if v.len() == bcfg.n => v.clone(),
        Some(_) => return Err(usage(format!("[integrator] x0 needs {} entries", bcfg.n))),
        None => vec![bcfg.init_radius / (bcfg.n as f64).sqrt(); bcfg.n],
    };
    let d = single_run_disturbance(cfg, &sys.disturbance, bcfg.horizon)?;
    let (mut min_u, mut max_u) = (f64::INFINITY, 0.0f64);
    let traj = simulate_backstepping(&sys, &gains, &x0, &d, &bcfg, |_, _, u| {
        min_u = min_u.min(u);
        max_u = max_u.max(u.abs());
    })?;
    let summary = state_summary("backstepping", cfg, &traj, &x0, min_u, max_u);
    let status = write_state_run(
        ctx,
        "triangular benchmark, saturated backstepping",
        &traj,
        &summary,
    )?;
    if max_u > gains.input_bound() {
        return Ok(Status::Failed);
    }
    Ok(status)
}

#[derive(Serialize)]
struct VerifySummary<'a> {
    family: &'a str,
    passed: bool,
    reports: &'a [CertificateReport],
}

pub fn verify(ctx: &Ctx) -> Result<Status, CliError> {
    let cfg = &ctx.cfg;
    let (family, reports) = match cfg.feedback {
        FeedbackSection::Constrained { .. } => ("constrained", verify_planar(cfg)?),
        FeedbackSection::Backstepping { .. } => {
            return Err(usage(
                "gain checks for backstepping run under the `backstep` command",
            ))
        }
        _ => {
            let sc = chemostat_scenario(cfg)?;
            let k = constants(&sc)?;
            k.resubstitute(&sc)?;
            ctx.write_json("constants.json", &k)?;
            let grid = cfg.harness.grid;
            match cfg.feedback {
                FeedbackSection::Relaxed { .. } => {
                    let Some(FeedbackLaw::Relaxed { psi, l }) = cfg.chemostat_law()? else {
                        unreachable!("relaxed family yields the relaxed law")
                    };
                    (
                        "relaxed",
                        verify_relaxed_conditions(&sc, &k, &psi, &l, grid),
                    )
                }
                _ => {
                    let law = chemostat_law(cfg, &sc)?;
                    (law.name(), verify_rclf_derivative(&sc, &k, &law, grid))
                }
            }
        }
    };
    let passed = reports.iter().all(|r| r.passed);
    for r in &reports {
        ctx.say(format!(
            "{:<10} {:<28} worst {:>12.4e}  {}",
            r.region,
            r.check,
            r.worst_margin,
            if r.passed { "pass" } else { "FAIL" }
        ));
    }
    ctx.write_json(
        "certificates.json",
        &VerifySummary {
            family,
            passed,
            reports: &reports,
        },
    )?;
    Ok(if passed { Status::Ok } else { Status::Failed })
}

fn verify_planar(cfg: &ScenarioConfig) -> Result<Vec<CertificateReport>, CliError> {
    let ex = cfg.planar_example()?;
    let field = move |x: &[f64], _d: &[f64], u: f64, out: &mut [f64]| ex.rhs(x, u, out);
    let gv = |x: &[f64]| x.to_vec();
    let h = move |x: &[f64]| ex.h(x);
    let gh = move |x: &[f64]| ex.grad_h(x).to_vec();
    let w = move |x: &[f64]| ex.v(x);
    let law = move |x: &[f64]| ex.law(x);
    let delta = move |_: f64| ex.delta;
    let f = move |x: &[f64]| ex.drift(x).to_vec();
    let g = move |x: &[f64]| ex.input_field(x).to_vec();
    let window = vec![[-5.0, 5.0], [-5.0, 5.0]];
    let mut reports = verify_relaxed_clf_conditions(&RelaxedClfProblem {
        field: &field,
        disturbance: CompactBox::zero(1),
        grad_v: &gv,
        h: &h,
        grad_h: &gh,
        w: &w,
        grad_w: &gv,
        delta_fn: &delta,
        k: ex.k,
        eps: ex.eps,
        law: &law,
        window: window.clone(),
        grid: cfg.harness.grid,
    })?;
    reports.extend(verify_input_limited_conditions(&InputLimitedProblem {
        f: &f,
        g: &g,
        grad_v: &gv,
        gamma: &|_| 1.0,
        w: &w,
        grad_w: &gv,
        grad_h: &gh,
        a_limit: ex.a_limit,
        eps: ex.eps,
        delta: ex.delta,
        k: ex.k,
        window,
        grid: cfg.harness.grid,
    })?);
    Ok(reports)
}

pub fn urgas(ctx: &Ctx) -> Result<Status, CliError> {
    let cfg = &ctx.cfg;
    if let FeedbackSection::Constrained { .. } = cfg.feedback {
        let r = run_planar_suite(&cfg.planar_example()?, &cfg.planar_config())?;
        ctx.write_json("planar.json", &r)?;
        ctx.say(format!(
            "{}/{} initial conditions converged, min u = {}",
            r.converged, r.initial_conditions, r.min_input
        ));
        return Ok(if r.passed { Status::Ok } else { Status::Failed });
    }
    let sc = chemostat_scenario(cfg)?;
    let law = chemostat_law(cfg, &sc)?;
    let ucfg = cfg.urgas_config();
    let sys = chemostat_closed_loop(&sc, &law)?;
    let r = run_urgas_suite(&sys, &ucfg)?;
    ctx.write_json("urgas.json", &r)?;
    ctx.say(format!(
        "{} trials: converged fraction {}, Lagrange sup {:.4}, diverged {}",
        r.trials, r.converged_fraction, r.lagrange_sup, r.diverged
    ));
    let mut passed = r.passed;
    if let FeedbackLaw::Relaxed { psi, l } = law {
        let k = constants(&sc)?;
        let e =
            validate_absorbing_entry(&sc, &psi, &l, k.x1_star, cfg.harness.entry_trials, &ucfg)?;
        ctx.write_json("entry.json", &e)?;
        ctx.say(format!(
            "absorbing-set entry: {} trials, {} bound violations, {} re-exits",
            e.trials, e.bound_violations, e.reexit_events
        ));
        passed &= e.passed;
    }
    Ok(if r.diverged > 0 {
        Status::Diverged
    } else if passed {
        Status::Ok
    } else {
        Status::Failed
    })
}

pub fn sweep(ctx: &Ctx) -> Result<Status, CliError> {
    let cfg = &ctx.cfg;
    if cfg.uncertainty.sweep.is_empty() {
        return Err(usage("[uncertainty] sweep lists no values"));
    }
    let sc = chemostat_scenario(cfg)?;
    let law = chemostat_law(cfg, &sc)?;
    let r = uncertainty_sweep(&sc, &cfg.uncertainty.sweep, &law, &cfg.urgas_config())?;
    ctx.write_json("sweep.json", &r)?;
    for e in &r.entries {
        ctx.say(format!(
            "a = {}: converged fraction {}, passed {}",
            e.a, e.report.converged_fraction, e.report.passed
        ));
    }
    ctx.say(format!("law identical across a: {}", r.law_identical));
    let diverged = r.entries.iter().any(|e| e.report.diverged > 0);
    Ok(if diverged {
        Status::Diverged
    } else if r.passed {
        Status::Ok
    } else {
        Status::Failed
    })
}

pub fn counterexample(ctx: &Ctx) -> Result<Status, CliError> {
    let cfg = &ctx.cfg;
    let sc = chemostat_scenario(cfg)?;
    let wcfg = cfg.washout_config();
    let r = washout_counterexample(&sc, &wcfg)?;
    ctx.write_json("counterexample.json", &r)?;
    let traj = simulate_classical_physical(&sc, sc.x_s, 0.5 * r.s1, &wcfg)?;
    let dil: Vec<f64> = traj.states().map(|y| sc.mu(y[1]) * y[0] / sc.x_s).collect();
    ctx.write("washout.csv", &trajectory_csv(&traj, &["X", "S"]))?;
    ctx.write(
        "washout.svg",
        &stacked_plot(
            "classical feedback from S(0) = S1/2",
            &traj.times,
            &[("S", column(&traj, 1)), ("X", column(&traj, 0)), ("D", dil)],
        ),
    )?;
    ctx.say(format!(
        "S1 = {:.6}, S2 = {:.6}, washout = {} (t = {:?}), relaxed repair converged = {}",
        r.s1, r.s2, r.washout, r.washout_time, r.repair_converged
    ));
    Ok(if r.passed { Status::Ok } else { Status::Failed })
}

pub fn backstep(ctx: &Ctx) -> Result<Status, CliError> {
    let cfg = &ctx.cfg;
    if cfg.integrator.x0.is_some() {
        return simulate_backstep_single(ctx);
    }
    let bcfg = cfg.backstep_config()?;
    let r = run_backstepping_suite(&bcfg)?;
    ctx.write_json("backstep.json", &r)?;
    ctx.say(format!(
        "n = {}: {}/{} converged, max |u| = {:.6} <= a_n = {:.6}: {}, gain margin {:.4}",
        r.n,
        r.converged,
        r.trials,
        r.max_abs_input,
        r.input_bound,
        r.input_respected,
        r.gain_margin
    ));
    Ok(if r.max_final_norm.is_infinite() {
        Status::Diverged
    } else if r.passed {
        Status::Ok
    } else {
        Status::Failed
    })
}

pub fn output_dir(cli_out: Option<&Path>, cfg: &ScenarioConfig) -> PathBuf {
    cli_out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}
