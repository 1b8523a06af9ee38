//! Bounded backstepping for triangular systems
//!
//! ```text
//! ẋ_i = f_i(d, x_1..x_i) + g_i(d, x_1..x_i)·x_{i+1},   i < n
//! ẋ_n = f_n(d, x) + g_n(d, x)·u
//! ```
//!
//! with nested saturations `φ_1 = −a_1 sat(p_1 x_1)`,
//! `φ_{i+1} = −a_{i+1} sat(p_{i+1}(x_{i+1} − φ_i))`, `u = φ_n`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{norm, sat, CompactBox};
use crate::feedback::FeedbackError;

/// Gain safety factor applied to every lower bound on `p`.
pub const GAIN_MARGIN: f64 = 1.1;

/// Uniform bounds `|f_i| ≤ min(q, L|x|)`, `r ≤ g_i` (all i), `g_i ≤ R` (i < n).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangularBounds {
    pub q: f64,
    pub l: f64,
    pub r: f64,
    pub big_r: f64,
}

type Component = Arc<dyn Fn(usize, &[f64], &[f64]) -> f64 + Send + Sync>;

/// Triangular system given by component closures `f(i, d, x)`, `g(i, d, x)`
/// (0-based `i`; only `x[..=i]` may be read).
#[derive(Clone)]
pub struct TriangularSystem {
    pub n: usize,
    pub bounds: TriangularBounds,
    pub disturbance: CompactBox,
    f: Component,
    g: Component,
}

impl fmt::Debug for TriangularSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TriangularSystem")
            .field("n", &self.n)
            .field("bounds", &self.bounds)
            .field("disturbance", &self.disturbance)
            .finish_non_exhaustive()
    }
}

impl TriangularSystem {
    pub fn new(
        n: usize,
        bounds: TriangularBounds,
        disturbance: CompactBox,
        f: impl Fn(usize, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
        g: impl Fn(usize, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self, FeedbackError> {
        if n == 0 {
            return Err(FeedbackError::InvalidSystem(
                "dimension must be at least 1".into(),
            ));
        }
        let TriangularBounds { q, l, r, big_r } = bounds;
        if !(q > 0.0 && l > 0.0 && r > 0.0 && big_r >= r) {
            return Err(FeedbackError::InvalidSystem(format!(
                "need q, L, r > 0 and R >= r, got q = {q}, L = {l}, r = {r}, R = {big_r}"
            )));
        }
        Ok(Self {
            n,
            bounds,
            disturbance,
            f: Arc::new(f),
            g: Arc::new(g),
        })
    }

    /// `f_i = d1·sat(x_1 + … + x_i)/√i`, `g_i = 1 + d2·x_i²/(1 + x_i²)` on
    /// `D = [−w, w] × [0, 2w]`; bounds `q = L = w`, `r = 1`, `R = 1 + 2w`.
    /// Since `|x_1 + … + x_i| ≤ √i·|x|`, `|f_i| ≤ w·min(1, |x|)`.
    pub fn benchmark(n: usize, w: f64) -> Result<Self, FeedbackError> {
        if !(w > 0.0) || !w.is_finite() {
            return Err(FeedbackError::InvalidParameter {
                name: "disturbance_width",
                value: w,
            });
        }
        let disturbance = CompactBox::new(vec![-w, 0.0], vec![w, 2.0 * w])
            .map_err(|e| FeedbackError::InvalidSystem(e.to_string()))?;
        Self::new(
            n,
            TriangularBounds {
                q: w,
                l: w,
                r: 1.0,
                big_r: 1.0 + 2.0 * w,
            },
            disturbance,
            |i, d, x| d[0] * sat(x[..=i].iter().sum::<f64>()) / ((i + 1) as f64).sqrt(),
            |i, d, x| {
                let s = x[i] * x[i];
                1.0 + d[1] * s / (1.0 + s)
            },
        )
    }

    pub fn f(&self, i: usize, d: &[f64], x: &[f64]) -> f64 {
        (self.f)(i, d, x)
    }

    pub fn g(&self, i: usize, d: &[f64], x: &[f64]) -> f64 {
        (self.g)(i, d, x)
    }

    /// Closed-loop right-hand side for input `u`.
    pub fn rhs(&self, d: &[f64], x: &[f64], u: f64, out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let next = if i + 1 < n { x[i + 1] } else { u };
            out[i] = self.f(i, d, x) + self.g(i, d, x) * next;
        }
    }

    /// Samples the bounds on a grid `[−half, half]^n` at every disturbance
    /// corner and reports the first violation.
    pub fn validate_on_grid(&self, half: f64, per_axis: usize) -> Result<(), FeedbackError> {
        let TriangularBounds { q, l, r, big_r } = self.bounds;
        let n = self.n;
        let per_axis = per_axis.max(2);
        let corners = self.disturbance.corners();
        let total = per_axis.pow(n as u32);
        let mut x = vec![0.0; n];
        for idx in 0..total {
            let mut rest = idx;
            for xi in x.iter_mut() {
                let k = rest % per_axis;
                rest /= per_axis;
                *xi = -half + 2.0 * half * k as f64 / (per_axis - 1) as f64;
            }
            for d in &corners {
                for i in 0..n {
                    let fi = self.f(i, d, &x);
                    let bound = q.min(l * norm(&x[..=i]));
                    if fi.abs() > bound * (1.0 + 1e-12) + 1e-15 {
                        return Err(FeedbackError::InvalidSystem(format!(
                            "|f_{}| = {} exceeds min(q, L|x|) = {bound} at x = {x:?}",
                            i + 1,
                            fi.abs()
                        )));
                    }
                    let gi = self.g(i, d, &x);
                    if gi < r || (i + 1 < n && gi > big_r) {
                        return Err(FeedbackError::InvalidSystem(format!(
                            "g_{} = {gi} outside [{r}, {big_r}] at x = {x:?}",
                            i + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Constants and gain choice of one recursion stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainStage {
    /// Cap `η` on this stage's amplitude.
    pub eta: f64,
    /// Tolerated perturbation `c̃` of this stage's output.
    pub c_tilde: f64,
    pub a: f64,
    pub p: f64,
    /// `1/c` of the previous stage (none for the first stage).
    pub lower_switch: Option<f64>,
    /// Right side of the gain inequality divided by `c̃r + q + b`.
    pub lower_growth: Option<f64>,
    /// Constants of the subsystem this stage extends.
    pub mu: f64,
    pub kappa: f64,
    pub p_norm: f64,
    pub k_norm: f64,
    pub big_c: f64,
    pub b: f64,
}

/// Amplitudes `a_i` and slopes `p_i` of the nested saturations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturatedGains {
    pub a: Vec<f64>,
    pub p: Vec<f64>,
    pub stages: Vec<GainStage>,
}

impl SaturatedGains {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// Bound on `|u|`.
    pub fn input_bound(&self) -> f64 {
        *self.a.last().expect("at least one stage")
    }

    /// Smallest ratio `p_i / max(lower bounds)` over stages `i ≥ 2`, with the
    /// lower bounds recomputed from the stored stage constants. Infinite for
    /// a single stage.
    pub fn min_margin(&self, bounds: &TriangularBounds) -> f64 {
        let TriangularBounds { q, l, r, .. } = *bounds;
        let mut worst = f64::INFINITY;
        for w in self.stages.windows(2) {
            let (prev, s) = (&w[0], &w[1]);
            let switch_lb = 1.0 / prev.c_tilde;
            let growth_lb = growth_bound_rhs(s.mu, l, s.big_c, s.p_norm, s.k_norm, s.kappa)
                / (s.c_tilde * r + q + s.b);
            worst = worst.min(s.p / switch_lb.max(growth_lb));
        }
        worst
    }
}

/// Evaluates the nested saturation law `u = φ_n(x)`.
pub fn saturated_backstepping(gains: &SaturatedGains, x: &[f64]) -> f64 {
    let mut phi = -gains.a[0] * sat(gains.p[0] * x[0]);
    for i in 1..gains.n() {
        phi = -gains.a[i] * sat(gains.p[i] * (x[i] - phi));
    }
    phi
}

fn spectral_bounds(p: &DMatrix<f64>) -> (f64, f64) {
    let eig = p.clone().symmetric_eigen().eigenvalues;
    (eig.min(), eig.max())
}

/// Right side of `p(c̃r + q + b) ≥ μ/2 + L + C|k| + (C|P| + C|k| + L + L|k|)²/(2μκ)`.
pub fn growth_bound_rhs(mu: f64, l: f64, big_c: f64, p_norm: f64, k_norm: f64, kappa: f64) -> f64 {
    let cross = big_c * p_norm + big_c * k_norm + l + l * k_norm;
    0.5 * mu + l + big_c * k_norm + cross * cross / (2.0 * mu * kappa)
}

/// Stage-by-stage gain selection. Stage `i` uses the cap
/// `η_i = eta_factor·(q + b_i)/r`; its amplitude is the midpoint of
/// `(c̃_i + (q + b_i)/r, η_i]` and its slope is `1.1×` the larger of the two
/// lower bounds. The tolerance `c̃_i` is the midpoint of `[0, η_i − (q + b_i)/r)`
/// except for the last stage, which is driven exactly (`c̃_n = 0`).
pub fn compute_backstepping_gains(
    bounds: &TriangularBounds,
    n: usize,
    eta_factor: f64,
) -> Result<SaturatedGains, FeedbackError> {
    if n == 0 {
        return Err(FeedbackError::InvalidSystem(
            "dimension must be at least 1".into(),
        ));
    }
    if !(eta_factor > 1.0) || !eta_factor.is_finite() {
        return Err(FeedbackError::InvalidParameter {
            name: "eta_factor",
            value: eta_factor,
        });
    }
    let TriangularBounds { q, l, r, big_r } = *bounds;

    // First stage: scalar subsystem ẋ1 = f1 + g1·y with P = [1].
    let eta = eta_factor * q / r;
    let lower = q / r;
    if !(eta > lower) {
        return Err(FeedbackError::EmptyGainInterval {
            stage: 1,
            lower,
            eta,
        });
    }
    let a1 = 0.5 * (lower + eta);
    // a1·p1·r − L ≥ 1.2 L keeps the linear region decaying with margin.
    let p1 = GAIN_MARGIN * 2.0 * l / (r * a1);
    let c1 = if n == 1 { 0.0 } else { 0.5 * (a1 - q / r) };
    let mut stages = vec![GainStage {
        eta,
        c_tilde: c1,
        a: a1,
        p: p1,
        lower_switch: None,
        lower_growth: None,
        mu: r * a1 * p1 - l,
        kappa: 1.0,
        p_norm: 1.0,
        k_norm: a1 * p1,
        big_c: big_r.max(q + big_r * a1),
        b: a1 * p1 * (q + big_r * (a1 + c1)),
    }];

    let mut mu = r * a1 * p1 - l;
    let mut pm = DMatrix::from_element(1, 1, 1.0);
    let mut k = DVector::from_element(1, -a1 * p1);
    let mut a_prev = a1;
    let mut c_prev = c1;
    let mut big_c = big_r.max(q + big_r * a1);
    let mut b = a1 * p1 * (q + big_r * (a1 + c1));

    for stage in 2..=n {
        let (kappa, p_norm) = spectral_bounds(&pm);
        let k_norm = k.norm();
        let lower = (q + b) / r;
        let eta = eta_factor * lower;
        let c_tilde = if stage < n { 0.5 * (eta - lower) } else { 0.0 };
        let a_lo = c_tilde + lower;
        if !(eta > a_lo) {
            return Err(FeedbackError::EmptyGainInterval {
                stage,
                lower: a_lo,
                eta,
            });
        }
        let a = 0.5 * (a_lo + eta);
        let lower_switch = 1.0 / c_prev;
        let lower_growth =
            growth_bound_rhs(mu, l, big_c, p_norm, k_norm, kappa) / (c_tilde * r + q + b);
        let p = GAIN_MARGIN * lower_switch.max(lower_growth);
        stages.push(GainStage {
            eta,
            c_tilde,
            a,
            p,
            lower_switch: Some(lower_switch),
            lower_growth: Some(lower_growth),
            mu,
            kappa,
            p_norm,
            k_norm,
            big_c,
            b,
        });

        // Extend (P, k, μ, C, b) to the augmented state (x, x_stage).
        let m = pm.nrows();
        let mut next = DMatrix::zeros(m + 1, m + 1);
        next.view_mut((0, 0), (m, m))
            .copy_from(&(&pm + &k * k.transpose()));
        for j in 0..m {
            next[(j, m)] = -k[j];
            next[(m, j)] = -k[j];
        }
        next[(m, m)] = 1.0;
        pm = next;
        let mut k_next = DVector::zeros(m + 1);
        for j in 0..m {
            k_next[j] = a * p * k[j];
        }
        k_next[m] = -a * p;
        k = k_next;
        mu *= 0.5;
        big_c = 2.0 * (big_c + l) + big_c * (a_prev + 1.0) + big_r * (a + 1.0);
        b = a * p * (q + big_r * a + big_r * c_tilde + b);
        a_prev = a;
        c_prev = c_tilde;
    }

    Ok(SaturatedGains {
        a: stages.iter().map(|s| s.a).collect(),
        p: stages.iter().map(|s| s.p).collect(),
        stages,
    })
}
