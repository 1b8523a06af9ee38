//! Disturbed ODE simulation: `ẋ = F(t, x, d)` with piecewise-constant
//! disturbance signals, integrated by classical fixed-step RK4.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::fmt17;

/// Any state coordinate whose magnitude exceeds this bound stops the
/// integration and flags the trajectory as diverged.
pub const BLOWUP_BOUND: f64 = 1e12;

/// Relative tolerance used when checking that the step divides switch times.
const GRID_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("integration step must be positive and finite, got {0}")]
    NonPositiveStep(f64),
    #[error("time horizon must be positive and finite, got {0}")]
    NonPositiveHorizon(f64),
    #[error("switch interval must be positive and finite, got {0}")]
    NonPositiveSwitch(f64),
    #[error("step {step} does not divide the disturbance switch time {switch_time}")]
    StepDoesNotDivideSwitch { step: f64, switch_time: f64 },
    #[error("box bound {index} is inverted: lower {lower} > upper {upper}")]
    InvertedBox {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid disturbance signal: {0}")]
    InvalidSignal(String),
    #[error("disturbance horizon {horizon} is shorter than the integration end time {t_end}")]
    HorizonTooShort { horizon: f64, t_end: f64 },
    #[error("initial state has a non-finite coordinate")]
    NonFiniteInitialState,
}

/// Saturation `sat(x) = clamp(x, -1, 1)`.
#[inline]
pub fn sat(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Euclidean norm.
#[inline]
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Axis-aligned compact box `D = [lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl CompactBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, DynamicsError> {
        if lower.len() != upper.len() {
            return Err(DynamicsError::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        for (index, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(DynamicsError::InvertedBox {
                    index,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    /// The box `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self, DynamicsError> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    /// The degenerate box `{0}^dim`.
    pub fn zero(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, d: &[f64]) -> bool {
        d.len() == self.dim()
            && d.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&lo, &hi))| lo <= v && v <= hi)
    }

    /// All `2^dim` vertices, in binary counting order (bit `i` selects the
    /// upper bound of coordinate `i`).
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                (0..n)
                    .map(|i| {
                        if mask & (1 << i) != 0 {
                            self.upper[i]
                        } else {
                            self.lower[i]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }
}

/// Piecewise-constant, right-continuous disturbance `t ↦ d(t)` on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSignal {
    switch_times: Vec<f64>,
    values: Vec<Vec<f64>>,
    horizon: f64,
}

impl DisturbanceSignal {
    pub fn new(
        switch_times: Vec<f64>,
        values: Vec<Vec<f64>>,
        horizon: f64,
    ) -> Result<Self, DynamicsError> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(DynamicsError::NonPositiveHorizon(horizon));
        }
        if switch_times.is_empty() || switch_times.len() != values.len() {
            return Err(DynamicsError::InvalidSignal(format!(
                "{} switch times for {} values",
                switch_times.len(),
                values.len()
            )));
        }
        if switch_times[0] != 0.0 {
            return Err(DynamicsError::InvalidSignal(
                "first switch time must be 0".into(),
            ));
        }
        if switch_times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(DynamicsError::InvalidSignal(
                "switch times must be strictly ascending".into(),
            ));
        }
        if *switch_times.last().unwrap() >= horizon {
            return Err(DynamicsError::InvalidSignal(
                "last switch time must precede the horizon".into(),
            ));
        }
        let dim = values[0].len();
        if let Some(v) = values.iter().find(|v| v.len() != dim) {
            return Err(DynamicsError::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        Ok(Self {
            switch_times,
            values,
            horizon,
        })
    }

    /// A signal that holds `value` on the whole horizon.
    pub fn constant(value: Vec<f64>, horizon: f64) -> Result<Self, DynamicsError> {
        Self::new(vec![0.0], vec![value], horizon)
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn switch_times(&self) -> &[f64] {
        &self.switch_times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Value of the interval containing `t`. Times past the horizon return the
    /// last value, negative times the first.
    pub fn eval(&self, t: f64) -> &[f64] {
        let idx = self.switch_times.partition_point(|&s| s <= t);
        &self.values[idx.saturating_sub(1)]
    }
}

/// Draws a piecewise-constant signal with `ceil(horizon / switch_dt)` intervals
/// whose values are i.i.d. uniform on `bx`.
pub fn sample_disturbance(
    bx: &CompactBox,
    switch_dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<DisturbanceSignal, DynamicsError> {
    if !(switch_dt > 0.0) || !switch_dt.is_finite() {
        return Err(DynamicsError::NonPositiveSwitch(switch_dt));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(DynamicsError::NonPositiveHorizon(horizon));
    }
    // Guard against 1.0 / 0.1 = 10.000000000000002.
    let count = ((horizon / switch_dt) - 1e-9).ceil().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut switch_times = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    for k in 0..count {
        switch_times.push(k as f64 * switch_dt);
        values.push(
            bx.lower
                .iter()
                .zip(&bx.upper)
                .map(|(&lo, &hi)| {
                    let u: f64 = rng.random();
                    lo + (hi - lo) * u
                })
                .collect(),
        );
    }
    DisturbanceSignal::new(switch_times, values, horizon)
}

/// Sampled solution `x(t; x0, d)`; states are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    dim: usize,
    states: Vec<f64>,
    pub inputs: Option<Vec<f64>>,
    pub diverged: bool,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    pub fn final_time(&self) -> f64 {
        *self
            .times
            .last()
            .expect("trajectory holds the initial state")
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// Largest Euclidean norm over all samples.
    pub fn sup_norm(&self) -> f64 {
        self.states().map(norm).fold(0.0, f64::max)
    }

    /// Records `u = law(t, x)` at every sample.
    pub fn with_inputs(mut self, mut law: impl FnMut(f64, &[f64]) -> f64) -> Self {
        let inputs = self
            .times
            .iter()
            .zip(self.states.chunks_exact(self.dim))
            .map(|(&t, x)| law(t, x))
            .collect();
        self.inputs = Some(inputs);
        self
    }

    /// Applies `map` to every state, producing a trajectory of dimension
    /// `out_dim` on the same time grid.
    pub fn map_states(&self, out_dim: usize, mut map: impl FnMut(&[f64], &mut [f64])) -> Self {
        let mut states = vec![0.0; self.len() * out_dim];
        for (x, y) in self.states().zip(states.chunks_exact_mut(out_dim)) {
            map(x, y);
        }
        Self {
            times: self.times.clone(),
            dim: out_dim,
            states,
            inputs: self.inputs.clone(),
            diverged: self.diverged,
        }
    }

    fn push(&mut self, t: f64, x: &[f64]) {
        self.times.push(t);
        self.states.extend_from_slice(x);
    }

    /// CSV with header `t,x1,...,xn[,u]` and 17-significant-digit values.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let names: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        self.write_csv_named(&mut w, &names)
    }

    /// Same as [`Trajectory::write_csv`] with custom state column names.
    pub fn write_csv_named<W: Write>(&self, mut w: W, names: &[&str]) -> io::Result<()> {
        assert_eq!(names.len(), self.dim, "one column name per coordinate");
        write!(w, "t")?;
        for n in names {
            write!(w, ",{n}")?;
        }
        if self.inputs.is_some() {
            write!(w, ",u")?;
        }
        writeln!(w)?;
        for (i, (&t, x)) in self.times.iter().zip(self.states()).enumerate() {
            write!(w, "{}", fmt17(t))?;
            for v in x {
                write!(w, ",{}", fmt17(*v))?;
            }
            if let Some(u) = &self.inputs {
                write!(w, ",{}", fmt17(u[i]))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// One fixed-step segment of a staged integration: integrate up to `until`
/// with step `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub until: f64,
    pub step: f64,
}

fn check_step_grid(d: &DisturbanceSignal, step: f64) -> Result<(), DynamicsError> {
    for &s in &d.switch_times[1..] {
        let ratio = s / step;
        if (ratio - ratio.round()).abs() > GRID_TOL * ratio.max(1.0) {
            return Err(DynamicsError::StepDoesNotDivideSwitch {
                step,
                switch_time: s,
            });
        }
    }
    Ok(())
}

fn diverging(x: &[f64]) -> bool {
    x.iter().any(|v| !(v.abs() <= BLOWUP_BOUND))
}

/// Integrates `ẋ = rhs(t, x, d(t))` from `(t0, x0)` to `t_end` and appends the
/// samples after `t0` to `traj`. Returns false if the trajectory diverged.
#[allow(clippy::too_many_arguments)]
fn integrate_segment<F, O>(
    rhs: &mut F,
    traj: &mut Trajectory,
    d: &DisturbanceSignal,
    t0: f64,
    t_end: f64,
    step: f64,
    stride: usize,
    observer: &mut O,
) -> bool
where
    F: FnMut(f64, &[f64], &[f64], &mut [f64]),
    O: FnMut(f64, &[f64]),
{
    let n = traj.dim;
    let mut x = traj.final_state().to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    let span = t_end - t0;
    let full = ((span / step) * (1.0 + 1e-12)).floor() as usize;
    let remainder = span - full as f64 * step;
    let last = if remainder > GRID_TOL * step {
        full + 1
    } else {
        full
    };

    for i in 0..last {
        let t = t0 + i as f64 * step;
        let h = if i == full { remainder } else { step };
        let di = d.eval(t + 0.5 * h);

        rhs(t, &x, di, &mut k1);
        for j in 0..n {
            tmp[j] = x[j] + 0.5 * h * k1[j];
        }
        rhs(t + 0.5 * h, &tmp, di, &mut k2);
        for j in 0..n {
            tmp[j] = x[j] + 0.5 * h * k2[j];
        }
        rhs(t + 0.5 * h, &tmp, di, &mut k3);
        for j in 0..n {
            tmp[j] = x[j] + h * k3[j];
        }
        rhs(t + h, &tmp, di, &mut k4);
        for j in 0..n {
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }

        if diverging(&x) {
            traj.diverged = true;
            if x.iter().all(|v| v.is_finite()) {
                traj.push(t + h, &x);
            }
            return false;
        }
        let t_next = if i + 1 == last {
            t_end
        } else {
            t0 + (i + 1) as f64 * step
        };
        observer(t_next, &x);
        if i + 1 == last || (i + 1) % stride == 0 {
            traj.push(t_next, &x);
        }
    }
    true
}

fn validate_run(
    x0: &[f64],
    d: &DisturbanceSignal,
    t_end: f64,
    step: f64,
) -> Result<(), DynamicsError> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(DynamicsError::NonPositiveStep(step));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(DynamicsError::NonPositiveHorizon(t_end));
    }
    if t_end > d.horizon * (1.0 + 1e-12) {
        return Err(DynamicsError::HorizonTooShort {
            horizon: d.horizon,
            t_end,
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFiniteInitialState);
    }
    check_step_grid(d, step)
}

/// Classical RK4 with a fixed step. The disturbance is frozen over each step
/// at its value at the step midpoint, so `step` must divide every switch time
/// of `d`. A final partial step lands exactly on `t_end`.
pub fn integrate_rk4<F>(
    mut rhs: F,
    x0: &[f64],
    d: &DisturbanceSignal,
    t_end: f64,
    step: f64,
) -> Result<Trajectory, DynamicsError>
where
    F: FnMut(f64, &[f64], &[f64], &mut [f64]),
{
    validate_run(x0, d, t_end, step)?;
    let mut traj = Trajectory {
        times: Vec::with_capacity((t_end / step) as usize + 2),
        dim: x0.len(),
        states: Vec::with_capacity(x0.len() * ((t_end / step) as usize + 2)),
        inputs: None,
        diverged: false,
    };
    traj.push(0.0, x0);
    integrate_segment(&mut rhs, &mut traj, d, 0.0, t_end, step, 1, &mut |_, _| {});
    Ok(traj)
}

/// Chains fixed-step RK4 segments with different steps, e.g. a fine step over
/// a stiff initial transient followed by a coarse one.
pub fn integrate_staged<F>(
    rhs: F,
    x0: &[f64],
    d: &DisturbanceSignal,
    stages: &[Stage],
) -> Result<Trajectory, DynamicsError>
where
    F: FnMut(f64, &[f64], &[f64], &mut [f64]),
{
    integrate_observed(rhs, x0, d, stages, 1, |_, _| {})
}

/// [`integrate_staged`] that calls `observer(t, x)` after every step but
/// stores only every `stride`-th step of each stage (plus stage ends).
/// Useful when tiny steps would otherwise make the stored trajectory huge.
pub fn integrate_observed<F, O>(
    mut rhs: F,
    x0: &[f64],
    d: &DisturbanceSignal,
    stages: &[Stage],
    stride: usize,
    mut observer: O,
) -> Result<Trajectory, DynamicsError>
where
    F: FnMut(f64, &[f64], &[f64], &mut [f64]),
    O: FnMut(f64, &[f64]),
{
    let stride = stride.max(1);
    let Some(last) = stages.last() else {
        return Err(DynamicsError::NonPositiveHorizon(0.0));
    };
    for (i, s) in stages.iter().enumerate() {
        let start = if i == 0 { 0.0 } else { stages[i - 1].until };
        if !(s.until > start) {
            return Err(DynamicsError::NonPositiveHorizon(s.until - start));
        }
        validate_run(x0, d, s.until, s.step)?;
    }
    let mut traj = Trajectory {
        times: Vec::new(),
        dim: x0.len(),
        states: Vec::new(),
        inputs: None,
        diverged: false,
    };
    traj.push(0.0, x0);
    observer(0.0, x0);
    let mut t0 = 0.0;
    for s in stages {
        if !integrate_segment(
            &mut rhs,
            &mut traj,
            d,
            t0,
            s.until,
            s.step,
            stride,
            &mut observer,
        ) {
            break;
        }
        t0 = s.until;
    }
    debug_assert!(traj.diverged || (traj.final_time() - last.until).abs() < 1e-9);
    Ok(traj)
}

/// Smallest stored time with `indicator(x(t)) <= threshold`, refined by linear
/// interpolation between the bracketing samples.
pub fn first_entry_time(
    traj: &Trajectory,
    indicator: impl Fn(&[f64]) -> f64,
    threshold: f64,
) -> Option<f64> {
    let mut prev: Option<(f64, f64)> = None;
    for (&t, x) in traj.times.iter().zip(traj.states()) {
        let v = indicator(x);
        if v <= threshold {
            return Some(match prev {
                None => t,
                Some((tp, vp)) => {
                    let frac = (vp - threshold) / (vp - v);
                    tp + frac * (t - tp)
                }
            });
        }
        prev = Some((t, v));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_disturbance(horizon: f64) -> DisturbanceSignal {
        DisturbanceSignal::constant(vec![], horizon).unwrap()
    }

    #[test]
    fn rk4_exponential_decay() {
        let d = no_disturbance(1.0);
        let traj = integrate_rk4(|_, x, _, dx| dx[0] = -x[0], &[1.0], &d, 1.0, 1e-3).unwrap();
        assert!((traj.final_state()[0] - (-1.0f64).exp()).abs() < 1e-9);
        assert_eq!(traj.len(), 1001);
        assert!((traj.final_time() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_field_is_constant() {
        let d = no_disturbance(2.0);
        let traj = integrate_rk4(|_, _, _, dx| dx.fill(0.0), &[0.3, -2.0], &d, 2.0, 0.1).unwrap();
        assert!(traj.states().all(|x| x == [0.3, -2.0]));
    }

    #[test]
    fn partial_final_step_lands_on_end_time() {
        let d = no_disturbance(1.0);
        let traj = integrate_rk4(|_, x, _, dx| dx[0] = -x[0], &[1.0], &d, 1.0, 0.3).unwrap();
        assert_eq!(traj.times.len(), 5);
        assert!((traj.final_time() - 1.0).abs() < 1e-15);
        // RK4 local error at h = 0.3 is tiny but nonzero
        assert!((traj.final_state()[0] - (-1.0f64).exp()).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_steps() {
        let d = no_disturbance(1.0);
        let f = |_: f64, x: &[f64], _: &[f64], dx: &mut [f64]| dx[0] = -x[0];
        assert_eq!(
            integrate_rk4(f, &[1.0], &d, 1.0, 0.0),
            Err(DynamicsError::NonPositiveStep(0.0))
        );
        assert!(integrate_rk4(f, &[1.0], &d, 1.0, -0.1).is_err());

        let bx = CompactBox::cube(1, 0.0, 1.0).unwrap();
        let sig = sample_disturbance(&bx, 0.1, 1.0, 3).unwrap();
        assert!(matches!(
            integrate_rk4(f, &[1.0], &sig, 1.0, 0.03),
            Err(DynamicsError::StepDoesNotDivideSwitch { .. })
        ));
        assert!(integrate_rk4(f, &[1.0], &sig, 1.0, 0.025).is_ok());
        assert!(matches!(
            integrate_rk4(f, &[1.0], &sig, 2.0, 0.025),
            Err(DynamicsError::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn divergence_is_flagged_not_raised() {
        let d = no_disturbance(10.0);
        let traj =
            integrate_rk4(|_, x, _, dx| dx[0] = x[0] * x[0], &[1.0], &d, 10.0, 1e-3).unwrap();
        assert!(traj.diverged);
        assert!(traj.final_time() < 1.0 + 1e-2);
        assert!(traj.states().all(|x| x[0].is_finite()));
    }

    #[test]
    fn disturbance_is_frozen_per_step() {
        // ẋ = d with d switching 1 -> -1 at t = 0.5: x(1) = 0 exactly.
        let d = DisturbanceSignal::new(vec![0.0, 0.5], vec![vec![1.0], vec![-1.0]], 1.0).unwrap();
        let traj = integrate_rk4(|_, _, d, dx| dx[0] = d[0], &[0.0], &d, 1.0, 0.1).unwrap();
        assert!((traj.state(5)[0] - 0.5).abs() < 1e-12);
        assert!(traj.final_state()[0].abs() < 1e-12);
    }

    #[test]
    fn staged_integration_concatenates() {
        let d = no_disturbance(1.0);
        let stages = [
            Stage {
                until: 0.1,
                step: 1e-4,
            },
            Stage {
                until: 1.0,
                step: 1e-3,
            },
        ];
        let traj = integrate_staged(|_, x, _, dx| dx[0] = -x[0], &[1.0], &d, &stages).unwrap();
        assert_eq!(traj.len(), 1 + 1000 + 900);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        assert!((traj.final_state()[0] - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn strided_storage_keeps_endpoint_and_observes_all() {
        let d = no_disturbance(1.0);
        let stages = [Stage {
            until: 1.0,
            step: 1e-3,
        }];
        let mut seen = 0usize;
        let full = integrate_staged(|_, x, _, dx| dx[0] = -x[0], &[1.0], &d, &stages).unwrap();
        let thin = integrate_observed(
            |_, x, _, dx| dx[0] = -x[0],
            &[1.0],
            &d,
            &stages,
            7,
            |_, _| seen += 1,
        )
        .unwrap();
        assert_eq!(seen, 1001);
        assert_eq!(thin.len(), 1 + 1000 / 7 + 1);
        assert_eq!(thin.final_state(), full.final_state());
        assert_eq!(thin.final_time(), 1.0);
    }

    #[test]
    fn sampled_disturbance_shape() {
        let bx = CompactBox::cube(2, 0.0, 0.05).unwrap();
        let sig = sample_disturbance(&bx, 0.1, 1.0, 11).unwrap();
        assert_eq!(sig.values().len(), 10);
        assert!(sig.values().iter().all(|v| bx.contains(v)));
        assert_eq!(sig, sample_disturbance(&bx, 0.1, 1.0, 11).unwrap());
        assert_ne!(sig, sample_disturbance(&bx, 0.1, 1.0, 12).unwrap());

        let zero = sample_disturbance(&CompactBox::zero(2), 0.1, 1.0, 5).unwrap();
        assert!(zero.values().iter().all(|v| v == &[0.0, 0.0]));
    }

    #[test]
    fn signal_is_right_continuous() {
        let sig = DisturbanceSignal::new(vec![0.0, 0.5], vec![vec![1.0], vec![2.0]], 1.0).unwrap();
        assert_eq!(sig.eval(0.4999), &[1.0]);
        assert_eq!(sig.eval(0.5), &[2.0]);
        assert_eq!(sig.eval(1.0), &[2.0]);
    }

    #[test]
    fn inverted_box_rejected() {
        assert!(matches!(
            CompactBox::new(vec![0.0, 1.0], vec![1.0, 0.5]),
            Err(DynamicsError::InvertedBox { index: 1, .. })
        ));
        let bx = CompactBox::cube(2, 0.0, 1.0).unwrap();
        assert_eq!(bx.corners().len(), 4);
        assert!(bx.corners().iter().all(|c| bx.contains(c)));
    }

    #[test]
    fn entry_time_cases() {
        let d = no_disturbance(1.0);
        // x(t) = 1 - t, sampled every 0.25
        let traj = integrate_rk4(|_, _, _, dx| dx[0] = -1.0, &[1.0], &d, 1.0, 0.25).unwrap();
        let t = first_entry_time(&traj, |x| x[0], 0.4).unwrap();
        // Brute-force oracle: scan the analytic solution on a fine grid.
        let oracle = (0..=1_000_000)
            .map(|k| k as f64 * 1e-6)
            .find(|t| 1.0 - t <= 0.4)
            .unwrap();
        assert!((t - oracle).abs() <= 0.25 * 0.25);
        assert_eq!(first_entry_time(&traj, |x| x[0], 1.0), Some(0.0));
        assert_eq!(first_entry_time(&traj, |x| x[0], -0.5), None);
    }

    #[test]
    fn sat_cases() {
        assert_eq!(sat(0.5), 0.5);
        assert_eq!(sat(2.0), 1.0);
        assert_eq!(sat(-3.0), -1.0);
    }

    #[test]
    fn csv_header_and_precision() {
        let d = no_disturbance(0.2);
        let traj = integrate_rk4(|_, x, _, dx| dx[0] = -x[0], &[1.0, 2.0], &d, 0.2, 0.1)
            .unwrap()
            .with_inputs(|_, x| -x[0]);
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x1,x2,u"));
        let row: Vec<f64> = lines
            .next()
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(row, vec![0.0, 1.0, 2.0, -1.0]);
        assert_eq!(text.lines().count(), 4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sat_is_odd_monotone_and_lipschitz(a in -10.0f64..10.0, b in -10.0f64..10.0) {
                prop_assert_eq!(sat(-a), -sat(a));
                prop_assert!((sat(a) - sat(b)).abs() <= (a - b).abs());
                if a <= b { prop_assert!(sat(a) <= sat(b)); }
                if a.abs() <= 1.0 { prop_assert_eq!(sat(a), a); }
            }

            #[test]
            fn sampled_values_stay_in_box(seed in any::<u64>(), t in 0.0f64..3.0) {
                let bx = CompactBox::new(vec![-1.0, 0.0], vec![2.0, 0.5]).unwrap();
                let sig = sample_disturbance(&bx, 0.1, 3.0, seed).unwrap();
                prop_assert!(bx.contains(sig.eval(t)));
            }

            #[test]
            fn integration_is_deterministic(x0 in -5.0f64..5.0, seed in any::<u64>()) {
                let bx = CompactBox::cube(1, -1.0, 1.0).unwrap();
                let sig = sample_disturbance(&bx, 0.1, 1.0, seed).unwrap();
                let f = |_: f64, x: &[f64], d: &[f64], dx: &mut [f64]| dx[0] = -x[0] + d[0];
                let a = integrate_rk4(f, &[x0], &sig, 1.0, 0.01).unwrap();
                let b = integrate_rk4(f, &[x0], &sig, 1.0, 0.01).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
