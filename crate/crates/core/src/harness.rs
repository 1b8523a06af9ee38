//! Monte-Carlo robustness experiments: empirical URGAS statistics, absorbing
//! set entry against the analytic reach-time bound, uncertainty sweeps and
//! the washout counterexample.
//!
//! All statistics are empirical over seeded piecewise-constant disturbances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::CertifyError;
use crate::certify::{escape_w, reach_time_bound, relaxed_delta0, relaxed_eps_hat, relaxed_h};
use crate::chemostat::{ChemostatError, ChemostatScenario};
use crate::dynamics::{
    first_entry_time, integrate_staged, norm, sample_disturbance, CompactBox, DisturbanceSignal,
    DynamicsError, Stage, Trajectory,
};
use crate::feedback::{
    compute_backstepping_gains, saturated_backstepping, FeedbackError, FeedbackLaw, LSpec,
    PlanarExample, PsiSpec, SaturatedGains, TriangularSystem,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Chemostat(#[from] ChemostatError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error("invalid harness config: {0}")]
    Config(String),
    #[error("expected two equilibria on the X = X_s slice, found {count}: {roots:?}")]
    RootCount { count: usize, roots: Vec<f64> },
    #[error("the washout scenario needs Haldane-type kinetics, m < 0 and a = b = 0")]
    NotWashoutRegime,
}

/// Settings of a Monte-Carlo suite. Integration uses the `warmup` stages
/// first and then `step` up to `horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UrgasConfig {
    pub trials: usize,
    pub init_radius: f64,
    pub horizon: f64,
    pub step: f64,
    pub switch_dt: f64,
    pub master_seed: u64,
    pub eps_levels: Vec<f64>,
    pub warmup: Vec<Stage>,
    pub delta_probe_trials: usize,
    pub delta_bisection_iters: usize,
    pub converge_tol: f64,
}

impl Default for UrgasConfig {
    fn default() -> Self {
        Self {
            trials: 200,
            init_radius: 3.0,
            horizon: 60.0,
            step: 1e-3,
            switch_dt: 0.5,
            master_seed: 42,
            eps_levels: vec![0.01, 0.1, 1.0],
            warmup: vec![
                Stage {
                    until: 0.01,
                    step: 1e-6,
                },
                Stage {
                    until: 0.1,
                    step: 1e-5,
                },
                Stage {
                    until: 1.0,
                    step: 1e-4,
                },
            ],
            delta_probe_trials: 8,
            delta_bisection_iters: 6,
            converge_tol: 1e-2,
        }
    }
}

impl UrgasConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        for (name, v) in [
            ("init_radius", self.init_radius),
            ("horizon", self.horizon),
            ("step", self.step),
            ("switch_dt", self.switch_dt),
            ("converge_tol", self.converge_tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        let divides = |step: f64| {
            let r = self.switch_dt / step;
            (r - r.round()).abs() <= 1e-6 * r.max(1.0)
        };
        if !divides(self.step) {
            return bad(format!(
                "step {} does not divide switch_dt {}",
                self.step, self.switch_dt
            ));
        }
        let mut prev = 0.0;
        for s in &self.warmup {
            if !(s.until > prev) || !(s.step > 0.0) || !divides(s.step) {
                return bad(format!("invalid warmup stage {s:?}"));
            }
            prev = s.until;
        }
        if prev >= self.horizon {
            return bad(format!(
                "warmup ends at {prev}, past the horizon {}",
                self.horizon
            ));
        }
        if self.eps_levels.iter().any(|e| !(*e > 0.0)) {
            return bad("eps_levels must be positive".into());
        }
        Ok(())
    }

    /// Warm-up stages followed by the main stage.
    pub fn stages(&self) -> Vec<Stage> {
        let mut v = self.warmup.clone();
        v.push(Stage {
            until: self.horizon,
            step: self.step,
        });
        v
    }
}

/// A closed-loop field `ẋ = rhs(t, x, d)` with its disturbance box.
pub struct ClosedLoop<F> {
    pub dim: usize,
    pub disturbance: CompactBox,
    pub rhs: F,
}

/// Chemostat closed loop in log coordinates with `d ∈ [0, a]²`.
pub fn chemostat_closed_loop<'a>(
    sc: &'a ChemostatScenario,
    law: &'a FeedbackLaw,
) -> Result<ClosedLoop<impl Fn(f64, &[f64], &[f64], &mut [f64]) + 'a>, HarnessError> {
    Ok(ClosedLoop {
        dim: 2,
        disturbance: CompactBox::cube(2, 0.0, sc.a)?,
        rhs: law.closed_loop(sc),
    })
}

/// SplitMix64 finalizer over `(master_seed, stream, index)`.
pub fn trial_seed(master_seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = master_seed
        ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 1;
const STREAM_DISTURBANCE: u64 = 2;
const STREAM_PROBE: u64 = 3;

/// Uniform point in the closed ball of radius `radius` (rejection sampling).
pub fn sample_ball(rng: &mut impl Rng, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let n = norm(&v);
        if n <= 1.0 {
            return v.into_iter().map(|x| x * radius).collect();
        }
    }
}

/// Uniform point on the sphere of radius `radius`.
pub fn sample_sphere(rng: &mut impl Rng, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let n = norm(&v);
        if n <= 1.0 && n > 1e-3 {
            return v.into_iter().map(|x| x * radius / n).collect();
        }
    }
}

fn run_trial<F>(
    sys: &ClosedLoop<F>,
    cfg: &UrgasConfig,
    x0: &[f64],
    seed: u64,
) -> Result<Trajectory, HarnessError>
where
    F: Fn(f64, &[f64], &[f64], &mut [f64]),
{
    let d = sample_disturbance(&sys.disturbance, cfg.switch_dt, cfg.horizon, seed)?;
    Ok(integrate_staged(&sys.rhs, x0, &d, &cfg.stages())?)
}

/// Last sample time at which `|x| > eps`, or 0 if never.
fn last_exit_time(traj: &Trajectory, eps: f64) -> f64 {
    let n = traj.len();
    for i in (0..n).rev() {
        if norm(traj.state(i)) > eps {
            return if i + 1 < n {
                traj.times[i + 1]
            } else {
                traj.times[i]
            };
        }
    }
    0.0
}

/// A statistic tabulated per tolerance level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsValue {
    pub eps: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrgasReport {
    pub trials: usize,
    pub init_radius: f64,
    pub horizon: f64,
    /// Largest `|x(t)|` over all trials.
    pub lagrange_sup: f64,
    /// Empirical `δ(ε)`.
    pub lyapunov_delta_per_eps: Vec<EpsValue>,
    /// Empirical `τ(ε, s)`.
    pub attractivity_tau_per_eps: Vec<EpsValue>,
    /// Trials that diverged or ended outside the tolerance ball.
    pub entry_violations: usize,
    pub diverged: usize,
    pub converged_fraction: f64,
    pub max_final_norm: f64,
    pub tau_monotone: bool,
    pub delta_monotone: bool,
    pub passed: bool,
}

/// Empirical URGAS statistics. Initial states are uniform in the ball of
/// radius `init_radius`; each trial draws its own disturbance.
pub fn run_urgas_suite<F>(
    sys: &ClosedLoop<F>,
    cfg: &UrgasConfig,
) -> Result<UrgasReport, HarnessError>
where
    F: Fn(f64, &[f64], &[f64], &mut [f64]),
{
    cfg.validate()?;
    let mut levels = cfg.eps_levels.clone();
    levels.sort_by(f64::total_cmp);

    let mut sup: f64 = 0.0;
    let mut tau = vec![0.0f64; levels.len()];
    let (mut converged, mut diverged) = (0usize, 0usize);
    let mut max_final: f64 = 0.0;
    for i in 0..cfg.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.master_seed, STREAM_INIT, i as u64));
        let x0 = sample_ball(&mut rng, sys.dim, cfg.init_radius);
        let traj = run_trial(
            sys,
            cfg,
            &x0,
            trial_seed(cfg.master_seed, STREAM_DISTURBANCE, i as u64),
        )?;
        sup = sup.max(traj.sup_norm());
        let fin = norm(traj.final_state());
        if traj.diverged {
            diverged += 1;
            max_final = f64::INFINITY;
        } else {
            max_final = max_final.max(fin);
            if fin <= cfg.converge_tol {
                converged += 1;
            }
        }
        for (k, &e) in levels.iter().enumerate() {
            let t = if traj.diverged {
                cfg.horizon
            } else {
                last_exit_time(&traj, e)
            };
            tau[k] = tau[k].max(t);
        }
    }
    if diverged > 0 {
        sup = f64::INFINITY;
    }

    // δ(ε): largest probed radius whose trajectories all stay in the ε-ball,
    // then a running max since any δ valid for ε is valid for larger ε.
    let mut delta = Vec::with_capacity(levels.len());
    let mut running: f64 = 0.0;
    for (k, &e) in levels.iter().enumerate() {
        let est = probe_delta(sys, cfg, e, k as u64)?;
        running = running.max(est);
        delta.push(running);
    }

    let tau_monotone = tau.windows(2).all(|w| w[1] <= w[0]);
    let delta_monotone = delta.windows(2).all(|w| w[1] >= w[0]);
    let fraction = converged as f64 / cfg.trials as f64;
    let passed = converged == cfg.trials && sup.is_finite() && tau_monotone && delta_monotone;
    Ok(UrgasReport {
        trials: cfg.trials,
        init_radius: cfg.init_radius,
        horizon: cfg.horizon,
        lagrange_sup: sup,
        lyapunov_delta_per_eps: zip_levels(&levels, &delta),
        attractivity_tau_per_eps: zip_levels(&levels, &tau),
        entry_violations: cfg.trials - converged,
        diverged,
        converged_fraction: fraction,
        max_final_norm: max_final,
        tau_monotone,
        delta_monotone,
        passed,
    })
}

fn zip_levels(levels: &[f64], vals: &[f64]) -> Vec<EpsValue> {
    levels
        .iter()
        .zip(vals)
        .map(|(&eps, &value)| EpsValue { eps, value })
        .collect()
}

fn probe_delta<F>(
    sys: &ClosedLoop<F>,
    cfg: &UrgasConfig,
    eps: f64,
    level: u64,
) -> Result<f64, HarnessError>
where
    F: Fn(f64, &[f64], &[f64], &mut [f64]),
{
    let stays = |radius: f64| -> Result<bool, HarnessError> {
        for j in 0..cfg.delta_probe_trials as u64 {
            let idx = (level << 32) | j;
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.master_seed, STREAM_PROBE, idx));
            let x0 = sample_sphere(&mut rng, sys.dim, radius);
            let traj = run_trial(sys, cfg, &x0, rng.random())?;
            if traj.diverged || traj.sup_norm() > eps {
                return Ok(false);
            }
        }
        Ok(true)
    };
    let hi = eps.min(cfg.init_radius);
    if stays(hi)? {
        return Ok(hi);
    }
    let (mut lo, mut up) = (0.0, hi);
    for _ in 0..cfg.delta_bisection_iters {
        let mid = 0.5 * (lo + up);
        if stays(mid)? {
            lo = mid;
        } else {
            up = mid;
        }
    }
    Ok(lo)
}

/// Per-trial record of an absorbing-set experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryRecord {
    pub x0: [f64; 2],
    pub h0: f64,
    pub bound: f64,
    /// `None` if the trajectory never entered within the horizon.
    pub entry_time: Option<f64>,
    pub reexit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryReport {
    pub trials: usize,
    pub eps_hat: f64,
    pub delta0: f64,
    pub bound_violations: usize,
    pub reexit_events: usize,
    /// Largest `entry_time / bound` over trials with a positive bound.
    pub worst_ratio: f64,
    pub records: Vec<EntryRecord>,
    pub passed: bool,
}

/// Slack allowed on `h ≤ ε̂` after entry.
pub const REEXIT_SLACK: f64 = 1e-6;

/// Starts the relaxed closed loop from `h(x0) ∈ (0, 5]`, `x2 ∈ [−3, 3]`
/// and compares the entry time into `{h ≤ ε̂}` with the reach-time bound.
pub fn validate_absorbing_entry(
    sc: &ChemostatScenario,
    psi: &PsiSpec,
    l: &LSpec,
    x1_star: f64,
    trials: usize,
    cfg: &UrgasConfig,
) -> Result<EntryReport, HarnessError> {
    cfg.validate()?;
    let law = FeedbackLaw::Relaxed { psi: *psi, l: *l };
    let sys = chemostat_closed_loop(sc, &law)?;
    let eps_hat = relaxed_eps_hat(x1_star);
    let delta0 = relaxed_delta0(sc, psi, l, x1_star);
    let h = |x: &[f64]| relaxed_h(x1_star, x[0]);

    let mut records = Vec::with_capacity(trials);
    let (mut violations, mut reexits) = (0, 0);
    let mut worst: f64 = 0.0;
    for i in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.master_seed, STREAM_INIT, i as u64));
        // (0, 5]
        let h0 = 5.0 * (1.0 - rng.random::<f64>());
        let x0 = [0.5 * x1_star - h0, rng.random_range(-3.0..=3.0)];
        let bound =
            reach_time_bound(sc.c, h0, eps_hat, delta0, 0.0, escape_w(sc.c, x0[0], x0[1]))?.t;
        let traj = run_trial(
            &sys,
            cfg,
            &x0,
            trial_seed(cfg.master_seed, STREAM_DISTURBANCE, i as u64),
        )?;
        let entry = first_entry_time(&traj, h, eps_hat);
        let reexit = match entry {
            Some(t) => traj
                .times
                .iter()
                .zip(traj.states())
                .any(|(&s, x)| s > t && h(x) > eps_hat + REEXIT_SLACK),
            None => false,
        };
        let late = match entry {
            Some(t) => t > bound,
            None => cfg.horizon >= bound,
        };
        if late || traj.diverged {
            violations += 1;
        }
        if reexit {
            reexits += 1;
        }
        if let Some(t) = entry {
            if bound > 0.0 {
                worst = worst.max(t / bound);
            }
        }
        records.push(EntryRecord {
            x0,
            h0,
            bound,
            entry_time: entry,
            reexit,
        });
    }
    Ok(EntryReport {
        trials,
        eps_hat,
        delta0,
        bound_violations: violations,
        reexit_events: reexits,
        worst_ratio: worst,
        passed: violations == 0 && reexits == 0,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub a: f64,
    pub report: UrgasReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub law: FeedbackLaw,
    pub entries: Vec<SweepEntry>,
    /// Feedback outputs bit-identical across all `a` at the probe states.
    pub law_identical: bool,
    pub probe_states: usize,
    pub passed: bool,
}

const SWEEP_PROBES: usize = 100;

/// Runs the suite for each uncertainty magnitude with one fixed law.
pub fn uncertainty_sweep(
    template: &ChemostatScenario,
    a_values: &[f64],
    law: &FeedbackLaw,
    cfg: &UrgasConfig,
) -> Result<SweepReport, HarnessError> {
    let scenarios: Vec<ChemostatScenario> = a_values
        .iter()
        .map(|&a| template.with_uncertainty(a))
        .collect();
    for sc in &scenarios {
        sc.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.master_seed, STREAM_PROBE, u64::MAX));
    let probes: Vec<[f64; 2]> = (0..SWEEP_PROBES)
        .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
        .collect();
    let law_identical = probes.iter().all(|x| {
        let reference = law.eval(template, x[0], x[1]).to_bits();
        scenarios
            .iter()
            .all(|sc| law.eval(sc, x[0], x[1]).to_bits() == reference)
    });

    let mut entries = Vec::with_capacity(scenarios.len());
    for sc in &scenarios {
        let sys = chemostat_closed_loop(sc, law)?;
        entries.push(SweepEntry {
            a: sc.a,
            report: run_urgas_suite(&sys, cfg)?,
        });
    }
    let passed = law_identical && entries.iter().all(|e| e.report.passed);
    Ok(SweepReport {
        law: *law,
        entries,
        law_identical,
        probe_states: SWEEP_PROBES,
        passed,
    })
}

/// Integration settings of the washout experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WashoutConfig {
    pub horizon: f64,
    /// Stages for the physical runs; the last one is extended to `horizon`.
    pub physical_stages: Vec<Stage>,
    /// Stages for the repaired run in log coordinates, which starts far out
    /// in `x1 < 0` where the field is stiff.
    pub repair_stages: Vec<Stage>,
    pub relaxed_lambda: f64,
    pub relaxed_l0: f64,
}

impl Default for WashoutConfig {
    fn default() -> Self {
        Self {
            horizon: 60.0,
            physical_stages: vec![Stage {
                until: 60.0,
                step: 1e-4,
            }],
            repair_stages: vec![
                Stage {
                    until: 1e-3,
                    step: 1e-7,
                },
                Stage {
                    until: 1e-2,
                    step: 1e-6,
                },
                Stage {
                    until: 0.1,
                    step: 1e-5,
                },
                Stage {
                    until: 1.0,
                    step: 1e-4,
                },
                Stage {
                    until: 60.0,
                    step: 1e-3,
                },
            ],
            relaxed_lambda: 1.0,
            relaxed_l0: 1.0,
        }
    }
}

/// Relative substrate level below which the reactor counts as washed out.
pub const WASHOUT_FRACTION: f64 = 1e-6;
/// Relative tolerance for "converges to an equilibrium".
pub const EQUILIBRIUM_TOL: f64 = 0.01;
const ROOT_GRID: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WashoutReport {
    pub s1: f64,
    pub s2: f64,
    pub x_s: f64,
    pub s_s: f64,
    pub washout: bool,
    pub washout_time: Option<f64>,
    pub middle_final: [f64; 2],
    pub middle_converged: bool,
    pub repair_final: [f64; 2],
    pub repair_converged: bool,
    pub passed: bool,
}

/// Roots of `μ(S)(S_i − S − K·X_s) + m·X_s` on `(0, S_i)`, found by sign
/// changes on a uniform grid and refined by bisection.
pub fn slice_equilibria(sc: &ChemostatScenario) -> Vec<f64> {
    let f = |s: f64| sc.mu(s) * (sc.s_i - s - sc.k * sc.x_s) + sc.m * sc.x_s;
    // closed grid: the low root can sit below the first interior node
    let grid: Vec<f64> = (0..=ROOT_GRID)
        .map(|k| sc.s_i * k as f64 / ROOT_GRID as f64)
        .collect();
    let mut roots = Vec::new();
    for w in grid.windows(2) {
        let (fa, fb) = (f(w[0]), f(w[1]));
        if fa == 0.0 {
            // the endpoints are outside the open interval
            if w[0] > 0.0 {
                roots.push(w[0]);
            }
            continue;
        }
        if fa * fb < 0.0 {
            let (mut lo, mut hi) = (w[0], w[1]);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if (f(mid) < 0.0) == (fa < 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
    }
    roots
}

fn extend_stages(stages: &[Stage], horizon: f64) -> Vec<Stage> {
    let mut v: Vec<Stage> = stages
        .iter()
        .copied()
        .filter(|s| s.until < horizon)
        .collect();
    let step = stages.last().map_or(1e-3, |s| s.step);
    v.push(Stage {
        until: horizon,
        step,
    });
    v
}

/// Simulates the physical model under `D = μ(S)X/X_s`.
pub fn simulate_classical_physical(
    sc: &ChemostatScenario,
    x0: f64,
    s0: f64,
    cfg: &WashoutConfig,
) -> Result<Trajectory, HarnessError> {
    let d = DisturbanceSignal::constant(vec![0.0, 0.0], cfg.horizon)?;
    let rhs = |_t: f64, y: &[f64], _d: &[f64], out: &mut [f64]| {
        let (x, s) = (y[0], y[1]);
        let dil = sc.mu(s) * x / sc.x_s;
        let (dx, ds) = sc.physical_rates(x, s, dil, 0.0, 0.0);
        out[0] = dx;
        out[1] = ds;
    };
    Ok(integrate_staged(
        rhs,
        &[x0, s0],
        &d,
        &extend_stages(&cfg.physical_stages, cfg.horizon),
    )?)
}

fn close(v: f64, target: f64) -> bool {
    (v - target).abs() <= EQUILIBRIUM_TOL * target.abs()
}

/// The classical law with maintenance `m < 0` has a second equilibrium `S1`
/// below the operating point; starting under it washes out, while the
/// relaxed law recovers from the same state.
pub fn washout_counterexample(
    sc: &ChemostatScenario,
    cfg: &WashoutConfig,
) -> Result<WashoutReport, HarnessError> {
    if !(sc.m < 0.0) || sc.a != 0.0 || sc.b != 0.0 || sc.growth.peak().is_none() {
        return Err(HarnessError::NotWashoutRegime);
    }
    let roots = slice_equilibria(sc);
    if roots.len() != 2 {
        return Err(HarnessError::RootCount {
            count: roots.len(),
            roots,
        });
    }
    let (s1, s2) = (roots[0], roots[1]);
    let threshold = WASHOUT_FRACTION * sc.s_i;

    let low = simulate_classical_physical(sc, sc.x_s, 0.5 * s1, cfg)?;
    let washout_time = first_entry_time(&low, |y| y[1], threshold);

    let mid = simulate_classical_physical(sc, sc.x_s, 0.5 * (s1 + s2), cfg)?;
    let mf = mid.final_state();
    let middle_final = [mf[0], mf[1]];
    let middle_converged = !mid.diverged && close(mf[0], sc.x_s) && close(mf[1], s2);

    let law =
        FeedbackLaw::relaxed(cfg.relaxed_lambda, cfg.relaxed_l0).map_err(CertifyError::from)?;
    let (x1, x2) = sc.to_transformed(sc.x_s, 0.5 * s1)?;
    let d = DisturbanceSignal::constant(vec![0.0, 0.0], cfg.horizon)?;
    let rep = integrate_staged(
        law.closed_loop(sc),
        &[x1, x2],
        &d,
        &extend_stages(&cfg.repair_stages, cfg.horizon),
    )?;
    let rf = rep.final_state();
    let (xr, sr) = sc.from_transformed(rf[0], rf[1]);
    let repair_converged = !rep.diverged && close(xr, sc.x_s) && close(sr, sc.s_s);

    let washout = washout_time.is_some();
    Ok(WashoutReport {
        s1,
        s2,
        x_s: sc.x_s,
        s_s: sc.s_s,
        washout,
        washout_time,
        middle_final,
        middle_converged,
        repair_final: [xr, sr],
        repair_converged,
        passed: s1 < s2 && washout && middle_converged && repair_converged,
    })
}

/// Settings of the bounded backstepping experiment on the benchmark
/// triangular system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackstepConfig {
    pub n: usize,
    /// Half-width `w` of the disturbance box `[−w, w] × [0, 2w]`.
    pub disturbance_width: f64,
    pub eta_factor: f64,
    pub trials: usize,
    pub init_radius: f64,
    pub horizon: f64,
    /// Must resolve the last stage's linear gain `a_n p_n`.
    pub step: f64,
    pub switch_dt: f64,
    pub master_seed: u64,
    pub converge_tol: f64,
    /// Keep every `record_stride`-th sample of stored trajectories.
    pub record_stride: usize,
}

impl Default for BackstepConfig {
    fn default() -> Self {
        Self {
            n: 2,
            disturbance_width: 0.1,
            eta_factor: 2.0,
            trials: 50,
            init_radius: 1.0,
            horizon: 40.0,
            step: 1e-5,
            switch_dt: 0.5,
            master_seed: 42,
            converge_tol: 1e-2,
            record_stride: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackstepReport {
    pub n: usize,
    pub gains: SaturatedGains,
    /// Smallest recomputed `p_i / lower bound` (at least 1.1 when valid).
    pub gain_margin: f64,
    pub trials: usize,
    pub converged: usize,
    pub max_final_norm: f64,
    pub max_abs_input: f64,
    pub input_bound: f64,
    pub input_respected: bool,
    pub passed: bool,
}

/// Benchmark system and gains for a config.
pub fn backstepping_setup(
    cfg: &BackstepConfig,
) -> Result<(TriangularSystem, SaturatedGains), HarnessError> {
    let sys = TriangularSystem::benchmark(cfg.n, cfg.disturbance_width)?;
    let gains = compute_backstepping_gains(&sys.bounds, cfg.n, cfg.eta_factor)?;
    Ok((sys, gains))
}

/// One closed-loop run; `observer(t, x, u)` sees every step.
pub fn simulate_backstepping(
    sys: &TriangularSystem,
    gains: &SaturatedGains,
    x0: &[f64],
    d: &DisturbanceSignal,
    cfg: &BackstepConfig,
    mut observer: impl FnMut(f64, &[f64], f64),
) -> Result<Trajectory, HarnessError> {
    let rhs = |_t: f64, x: &[f64], d: &[f64], out: &mut [f64]| {
        sys.rhs(d, x, saturated_backstepping(gains, x), out)
    };
    let stages = [Stage {
        until: cfg.horizon,
        step: cfg.step,
    }];
    let traj =
        crate::dynamics::integrate_observed(rhs, x0, d, &stages, cfg.record_stride, |t, x| {
            observer(t, x, saturated_backstepping(gains, x))
        })?;
    Ok(traj.with_inputs(|_, x| saturated_backstepping(gains, x)))
}

/// Seeded trials from the ball of radius `init_radius`; checks convergence
/// and `|u| ≤ a_n` at every integration step.
pub fn run_backstepping_suite(cfg: &BackstepConfig) -> Result<BackstepReport, HarnessError> {
    if cfg.trials == 0 || cfg.n == 0 {
        return Err(HarnessError::Config(
            "n and trials must be at least 1".into(),
        ));
    }
    let (sys, gains) = backstepping_setup(cfg)?;
    let bound = gains.input_bound();
    let (mut converged, mut max_final, mut max_u) = (0usize, 0.0f64, 0.0f64);
    for i in 0..cfg.trials as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.master_seed, STREAM_INIT, i));
        let x0 = sample_ball(&mut rng, cfg.n, cfg.init_radius);
        let d = sample_disturbance(
            &sys.disturbance,
            cfg.switch_dt,
            cfg.horizon,
            trial_seed(cfg.master_seed, STREAM_DISTURBANCE, i),
        )?;
        let traj = simulate_backstepping(&sys, &gains, &x0, &d, cfg, |_, _, u| {
            max_u = max_u.max(u.abs())
        })?;
        let fin = norm(traj.final_state());
        if traj.diverged {
            max_final = f64::INFINITY;
        } else {
            max_final = max_final.max(fin);
            if fin <= cfg.converge_tol {
                converged += 1;
            }
        }
    }
    let gain_margin = gains.min_margin(&sys.bounds);
    let input_respected = max_u <= bound;
    Ok(BackstepReport {
        n: cfg.n,
        gain_margin,
        trials: cfg.trials,
        converged,
        max_final_norm: max_final,
        max_abs_input: max_u,
        input_bound: bound,
        input_respected,
        passed: converged == cfg.trials
            && input_respected
            && gain_margin >= crate::feedback::GAIN_MARGIN * (1.0 - 1e-12),
        gains,
    })
}

/// Grid experiment for the input-limited planar example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanarConfig {
    /// Initial conditions per axis on `[−half_width, half_width]²`.
    pub grid_side: usize,
    pub half_width: f64,
    pub horizon: f64,
    pub step: f64,
    pub converge_tol: f64,
}

impl Default for PlanarConfig {
    fn default() -> Self {
        Self {
            grid_side: 5,
            half_width: 5.0,
            horizon: 50.0,
            step: 1e-3,
            converge_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarReport {
    pub initial_conditions: usize,
    pub converged: usize,
    pub max_final_norm: f64,
    /// Smallest input seen over all steps.
    pub min_input: f64,
    pub input_respected: bool,
    pub passed: bool,
}

pub fn run_planar_suite(
    ex: &PlanarExample,
    cfg: &PlanarConfig,
) -> Result<PlanarReport, HarnessError> {
    if cfg.grid_side < 2 {
        return Err(HarnessError::Config("grid_side must be at least 2".into()));
    }
    let axis: Vec<f64> = (0..cfg.grid_side)
        .map(|i| -cfg.half_width + 2.0 * cfg.half_width * i as f64 / (cfg.grid_side - 1) as f64)
        .collect();
    let d = DisturbanceSignal::constant(vec![0.0], cfg.horizon)?;
    let stages = [Stage {
        until: cfg.horizon,
        step: cfg.step,
    }];
    let (mut converged, mut max_final, mut min_u) = (0usize, 0.0f64, f64::INFINITY);
    for &x1 in &axis {
        for &x2 in &axis {
            let rhs = |_t: f64, x: &[f64], _d: &[f64], out: &mut [f64]| ex.rhs(x, ex.law(x), out);
            let traj =
                crate::dynamics::integrate_observed(rhs, &[x1, x2], &d, &stages, 100, |_, x| {
                    min_u = min_u.min(ex.law(x))
                })?;
            let fin = if traj.diverged {
                f64::INFINITY
            } else {
                norm(traj.final_state())
            };
            max_final = max_final.max(fin);
            if fin <= cfg.converge_tol {
                converged += 1;
            }
        }
    }
    let n = cfg.grid_side * cfg.grid_side;
    let input_respected = min_u >= -ex.a_limit;
    Ok(PlanarReport {
        initial_conditions: n,
        converged,
        max_final_norm: max_final,
        min_input: min_u,
        input_respected,
        passed: converged == n && input_respected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemostat::{ChemostatParams, GrowthModel};

    fn quick_cfg() -> UrgasConfig {
        UrgasConfig {
            trials: 6,
            horizon: 20.0,
            delta_probe_trials: 2,
            delta_bisection_iters: 3,
            ..UrgasConfig::default()
        }
    }

    fn demo(a: f64) -> ChemostatScenario {
        let params = ChemostatParams {
            s_i: 1000.0,
            k: 2.0,
            b: 0.1,
            m: 0.2,
            a,
            growth: GrowthModel::haldane(75.0, 100.0, 0.025).unwrap(),
        };
        ChemostatScenario::from_substrate(&params, 506.72).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(UrgasConfig::default().validate().is_ok());
        let bad = UrgasConfig {
            trials: 0,
            ..UrgasConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = UrgasConfig {
            step: 0.3,
            ..UrgasConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = UrgasConfig {
            horizon: 0.5,
            ..UrgasConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a = trial_seed(42, 1, 0);
        assert_eq!(a, trial_seed(42, 1, 0));
        assert_ne!(a, trial_seed(42, 1, 1));
        assert_ne!(a, trial_seed(42, 2, 0));
        assert_ne!(a, trial_seed(43, 1, 0));
    }

    #[test]
    fn ball_and_sphere_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(norm(&sample_ball(&mut rng, 3, 2.0)) <= 2.0);
            assert!((norm(&sample_sphere(&mut rng, 2, 0.7)) - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn equilibrium_start_is_trivial() {
        let sys = ClosedLoop {
            dim: 2,
            disturbance: CompactBox::zero(2),
            rhs: |_t: f64, x: &[f64], _d: &[f64], out: &mut [f64]| {
                out[0] = -x[0];
                out[1] = -x[1];
            },
        };
        let cfg = UrgasConfig {
            init_radius: 1e-300,
            ..quick_cfg()
        };
        let rep = run_urgas_suite(&sys, &cfg).unwrap();
        assert!(rep.lagrange_sup <= 1e-300);
        assert_eq!(rep.converged_fraction, 1.0);
        assert!(rep.attractivity_tau_per_eps.iter().all(|e| e.value == 0.0));
    }

    #[test]
    fn suite_is_deterministic_and_monotone() {
        let sc = demo(0.05);
        let law = FeedbackLaw::relaxed(1.0, 1.0).unwrap();
        let sys = chemostat_closed_loop(&sc, &law).unwrap();
        let a = run_urgas_suite(&sys, &quick_cfg()).unwrap();
        let b = run_urgas_suite(&sys, &quick_cfg()).unwrap();
        assert_eq!(a, b);
        assert!(a.passed, "{a:?}");
        assert!(a.tau_monotone && a.delta_monotone);
    }

    #[test]
    fn entry_from_inside_is_immediate() {
        let sc = demo(0.05);
        let traj_h = |x1: f64| relaxed_h(-0.04, x1);
        assert!(traj_h(0.0) < relaxed_eps_hat(-0.04));
        let rb =
            reach_time_bound(sc.c, traj_h(0.0), relaxed_eps_hat(-0.04), 0.1, 0.0, 1.0).unwrap();
        assert_eq!(rb.t, 0.0);
    }

    #[test]
    fn single_root_without_maintenance() {
        let params = ChemostatParams {
            s_i: 1000.0,
            k: 2.0,
            b: 0.0,
            m: 0.0,
            a: 0.0,
            growth: GrowthModel::haldane(75.0, 100.0, 0.025).unwrap(),
        };
        let sc = ChemostatScenario::from_substrate(&params, 506.72).unwrap();
        assert!((sc.x_s - (sc.s_i - sc.s_s) / sc.k).abs() < 1e-9);
        let roots = slice_equilibria(&sc);
        assert_eq!(roots.len(), 1);
        assert!((roots[0] - sc.s_s).abs() < 1e-6);
    }

    #[test]
    fn backstepping_from_origin_stays_put() {
        let cfg = BackstepConfig {
            horizon: 1.0,
            step: 1e-3,
            ..BackstepConfig::default()
        };
        let (sys, gains) = backstepping_setup(&cfg).unwrap();
        let d = DisturbanceSignal::constant(vec![0.0, 0.0], 1.0).unwrap();
        let traj = simulate_backstepping(&sys, &gains, &[0.0, 0.0], &d, &cfg, |_, _, u| {
            assert_eq!(u, 0.0)
        })
        .unwrap();
        assert!(traj.states().all(|x| x == [0.0, 0.0]));
    }

    #[test]
    fn small_backstepping_suite() {
        let cfg = BackstepConfig {
            trials: 3,
            init_radius: 0.5,
            horizon: 40.0,
            step: 1e-3,
            ..BackstepConfig::default()
        };
        let rep = run_backstepping_suite(&cfg).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!(rep.max_abs_input <= rep.input_bound);
    }

    #[test]
    fn washout_rejects_wrong_regime() {
        assert!(matches!(
            washout_counterexample(&demo(0.05), &WashoutConfig::default()),
            Err(HarnessError::NotWashoutRegime)
        ));
    }

    #[test]
    fn planar_grid_converges_within_limit() {
        let cfg = PlanarConfig {
            grid_side: 3,
            horizon: 30.0,
            step: 1e-2,
            ..PlanarConfig::default()
        };
        let r = run_planar_suite(&PlanarExample::default(), &cfg).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.min_input, -1.0);
    }
}
