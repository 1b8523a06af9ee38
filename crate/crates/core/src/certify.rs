//! Constant synthesis and grid certificates for the chemostat Lyapunov
//! functions and for relaxed control Lyapunov conditions in general.
//!
//! Every vector field handled here is affine in the disturbance, so checking
//! the corners of the disturbance box bounds the whole box.
//!
//! Strict checks (`V̇ < 0` away from the origin) are reported as the worst
//! value of `V̇/|x|²`, which has the sign of `V̇` but does not collapse to
//! zero at the edge of the excluded origin ball. They pass when the worst
//! value is below `-STRICT_TOL`. Non-strict checks pass when the worst value
//! is `≤ 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chemostat::{ChemostatError, ChemostatScenario, S2Certificate};
use crate::dynamics::CompactBox;
use crate::feedback::{FeedbackError, FeedbackLaw, LSpec, PsiSpec, RclfFeedbackParams};

/// Safety factor applied to the synthesized `A` and `M`.
pub const CONSTANT_MARGIN: f64 = 1.1;
/// Shrink factor applied to `ε`.
pub const EPS_SHRINK: f64 = 0.99;
/// Safety factor applied to grid suprema (`r`, `L`).
pub const SUP_SAFETY: f64 = 1.05;
/// Strict checks must clear this threshold.
pub const STRICT_TOL: f64 = 1e-6;
/// Radius of the origin ball excluded from strict checks.
pub const ORIGIN_BALL: f64 = 1e-3;
/// Distance by which verification windows extend past region boundaries.
pub const WINDOW_PAD: f64 = 3.0;
/// Default points per axis.
pub const DEFAULT_GRID: usize = 400;

const SUP_GRID: usize = 20_000;
const BISECTION_ITERS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error(transparent)]
    Chemostat(#[from] ChemostatError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error("no delta in (0, {p}) gives beta_min < 0 < beta_max")]
    Infeasible { p: f64 },
    #[error("invalid argument {name} = {value}: {reason}")]
    InvalidArgument {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("decrease rate must be positive, got delta({h}) = {value}")]
    NonPositiveDelta { h: f64, value: f64 },
    #[error("constant {name} fails re-substitution: {detail}")]
    Inconsistent { name: &'static str, detail: String },
}

/// Constants of the robust Lyapunov function `V = γ(x1) + ½x2²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RclfConstants {
    pub delta: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub eps: f64,
    pub r: f64,
    /// `sup |μ(S) − μ(S_s)| / |S − S_s|`, inflated.
    #[serde(rename = "L")]
    pub l_mu: f64,
    #[serde(rename = "B")]
    pub big_b: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    #[serde(rename = "A")]
    pub big_a: f64,
    pub p: f64,
    pub x1_star: f64,
    pub mu_max: f64,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|k| {
                if k + 1 == n {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// `(β_min, β_max)` for a given `δ`.
fn betas(sc: &ChemostatScenario, p: f64, mu_max: f64, delta: f64) -> (f64, f64) {
    let bmin = ((p - delta) / ((sc.k * mu_max - sc.m) * sc.g)).ln();
    let bmax = ((mu_max + sc.a * (sc.c + 1.0) * sc.s_s - sc.b + delta) / (p * sc.g)).ln();
    (bmin, bmax)
}

/// `|Kb − m| / (K(D_s + b) − m)`.
fn kb_ratio(sc: &ChemostatScenario) -> f64 {
    (sc.k * sc.b - sc.m).abs() / sc.yield_term()
}

/// `1.05 · sup |e^x − 1| / ((c + e^x)|x|)` over `[x1*, −x1*]`, including
/// the limit `1/(c+1)` at zero.
fn r_constant(c: f64, x1_star: f64) -> f64 {
    let sup = linspace(x1_star, -x1_star, SUP_GRID + 1)
        .into_iter()
        .map(|x| {
            if x == 0.0 {
                1.0 / (c + 1.0)
            } else {
                x.exp_m1().abs() / ((c + x.exp()) * x.abs())
            }
        })
        .fold(1.0 / (c + 1.0), f64::max);
    SUP_SAFETY * sup
}

/// `1.05 · sup |μ(S) − μ(S_s)| / |S − S_s|` over a grid of `(0, S_i)`.
fn growth_lipschitz(sc: &ChemostatScenario) -> f64 {
    let mu_s = sc.mu(sc.s_s);
    let sup = (1..SUP_GRID)
        .map(|k| sc.s_i * k as f64 / SUP_GRID as f64)
        .filter(|&s| (s - sc.s_s).abs() > 1e-9 * sc.s_i)
        .map(|s| (sc.mu(s) - mu_s).abs() / (s - sc.s_s).abs())
        .fold(0.0, f64::max);
    SUP_SAFETY * sup
}

/// Picks `δ` as the midpoint of the feasible interval `(δ_lo, p)`, where
/// `δ_lo` is found by bisection, then derives the remaining constants.
pub fn synthesize_rclf_constants(
    sc: &ChemostatScenario,
    s2: &S2Certificate,
) -> Result<RclfConstants, CertifyError> {
    sc.validate()?;
    let p = s2.p;
    let x1_star = s2.x1_star;
    if !(p > 0.0) || !(x1_star < 0.0) {
        return Err(CertifyError::InvalidArgument {
            name: "p",
            value: p,
            reason: "certificate must have p > 0 and x1_star < 0",
        });
    }
    let mu_max = sc.growth.mu_max();
    let feasible = |d: f64| {
        let (lo, hi) = betas(sc, p, mu_max, d);
        lo < 0.0 && hi > 0.0
    };
    // Both conditions are monotone in δ, so feasibility is an up-set.
    let top = p * (1.0 - 1e-9);
    if !feasible(top) {
        return Err(CertifyError::Infeasible { p });
    }
    let (mut lo, mut hi) = (0.0, top);
    if feasible(0.0) {
        hi = 0.0;
    } else {
        for _ in 0..BISECTION_ITERS {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    let delta = 0.5 * (hi + p);
    let (beta_min, beta_max) = betas(sc, p, mu_max, delta);

    let eps = EPS_SHRINK * ((-x1_star.exp_m1()) / (-x1_star)).min(beta_min.exp_m1() / beta_min);
    let r = r_constant(sc.c, x1_star);
    let l_mu = growth_lipschitz(sc);
    let big_b = beta_min.abs().max(beta_max.abs());
    let kb = kb_ratio(sc);
    let c = sc.c;
    let g = sc.g;

    let big_a = CONSTANT_MARGIN * (big_b * sc.s_s * (l_mu * kb + sc.a) + 1.0)
        / (2.0 * c * p * g * beta_min.exp() * (2.0 * x1_star).exp());
    let decay = (-beta_min - x1_star).exp();
    let kappa = l_mu * kb + 2.0 * sc.a;
    let cross = sc.s_s * r / (eps * p * g);
    let m_quad = decay / (2.0 * c) + 0.5 * c * decay * cross * cross * kappa * kappa;
    let big_m = CONSTANT_MARGIN * (2.0 * big_a / (-x1_star)).max(m_quad);

    let k = RclfConstants {
        delta,
        beta_min,
        beta_max,
        eps,
        r,
        l_mu,
        big_b,
        big_m,
        big_a,
        p,
        x1_star,
        mu_max,
    };
    k.resubstitute(sc)?;
    Ok(k)
}

impl RclfConstants {
    /// Re-evaluates every defining inequality with the stored values.
    pub fn resubstitute(&self, sc: &ChemostatScenario) -> Result<(), CertifyError> {
        let fail = |name, detail: String| Err(CertifyError::Inconsistent { name, detail });
        if !(self.delta > 0.0 && self.delta < self.p) {
            return fail("delta", format!("{} not in (0, {})", self.delta, self.p));
        }
        let (bmin, bmax) = betas(sc, self.p, self.mu_max, self.delta);
        if bmin != self.beta_min || bmax != self.beta_max || !(bmin < 0.0 && bmax > 0.0) {
            return fail("beta", format!("[{bmin}, {bmax}]"));
        }
        if self.big_b != bmin.abs().max(bmax.abs()) {
            return fail("B", format!("{}", self.big_b));
        }
        let (c, p, g) = (sc.c, self.p, sc.g);
        let lhs_a = 2.0 * self.big_a * c * p * g * bmin.exp() * (2.0 * self.x1_star).exp();
        let rhs_a = self.big_b * sc.s_s * (self.l_mu * kb_ratio(sc) + sc.a) + 1.0;
        if !(lhs_a >= rhs_a) {
            return fail("A", format!("{lhs_a} < {rhs_a}"));
        }
        if !(self.big_m >= 2.0 * self.big_a / (-self.x1_star)) {
            return fail("M", "below 2A/(-x1_star)".into());
        }
        let decay = (-bmin - self.x1_star).exp();
        let kappa = self.l_mu * kb_ratio(sc) + 2.0 * sc.a;
        let cross = sc.s_s * self.r / (self.eps * p * g);
        if !(self.big_m >= decay / (2.0 * c) + 0.5 * c * decay * cross * cross * kappa * kappa) {
            return fail("M", "below the completing-the-square bound".into());
        }
        for x in linspace(self.x1_star, -self.x1_star, 2001) {
            if x * (-x).exp_m1() > -self.eps * x * x {
                return fail("eps", format!("x1 decay fails at {x}"));
            }
            let ratio = if x == 0.0 {
                1.0 / (c + 1.0)
            } else {
                x.exp_m1().abs() / ((c + x.exp()) * x.abs())
            };
            if ratio > self.r {
                return fail("r", format!("ratio {ratio} at {x}"));
            }
        }
        for x in linspace(bmin, bmax, 2001) {
            if x * (-x.exp_m1()) > -self.eps * x * x {
                return fail("eps", format!("x2 decay fails at {x}"));
            }
        }
        Ok(())
    }

    /// `γ(x1) = ½Mx1² + A[e^{2(x1+x1*)} − 1 − 2(x1+x1*)]` for `x1 ≥ −x1*`.
    pub fn gamma(&self, x1: f64) -> f64 {
        let s = x1 + self.x1_star;
        let tail = if x1 >= -self.x1_star {
            self.big_a * ((2.0 * s).exp_m1() - 2.0 * s)
        } else {
            0.0
        };
        0.5 * self.big_m * x1 * x1 + tail
    }

    pub fn gamma_prime(&self, x1: f64) -> f64 {
        let tail = if x1 >= -self.x1_star {
            2.0 * self.big_a * (2.0 * (x1 + self.x1_star)).exp_m1()
        } else {
            0.0
        };
        self.big_m * x1 + tail
    }

    pub fn lyapunov(&self, x1: f64, x2: f64) -> f64 {
        self.gamma(x1) + 0.5 * x2 * x2
    }

    /// Parameters of the full robust law built from these constants.
    pub fn rclf_params(&self, w_weight: f64) -> Result<RclfFeedbackParams, CertifyError> {
        Ok(RclfFeedbackParams::new(self.x1_star, self.big_m, w_weight)?)
    }
}

/// State and disturbance at which a worst margin was attained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub d: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Normalized by `|x|²`; passes below `-STRICT_TOL`.
    Strict,
    /// Passes at `≤ 0`.
    NonStrict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub region: String,
    pub check: String,
    pub kind: CheckKind,
    pub grid: Vec<usize>,
    /// `[lower, upper]` per axis.
    pub window: Vec<[f64; 2]>,
    pub points: usize,
    pub worst_margin: f64,
    pub witness: Option<Witness>,
    pub passed: bool,
    /// Fitted constant, when the check produces one.
    pub bound: Option<f64>,
}

impl CertificateReport {
    fn finish(mut self) -> Self {
        self.passed = self.worst_margin.is_finite()
            && match self.kind {
                CheckKind::Strict => self.worst_margin < -STRICT_TOL,
                CheckKind::NonStrict => self.worst_margin <= 0.0,
            };
        // an empty region is vacuous
        if self.points == 0 {
            self.passed = true;
        }
        self
    }
}

/// Running worst-margin reduction.
struct Worst {
    value: f64,
    witness: Option<Witness>,
    points: usize,
}

impl Worst {
    fn new() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            witness: None,
            points: 0,
        }
    }

    fn push(&mut self, margin: f64, x: &[f64], d: &[f64]) {
        self.points += 1;
        // NaN counts as a failure
        if margin.is_nan() || margin > self.value || self.witness.is_none() {
            if self.value.is_nan() {
                return;
            }
            self.value = margin;
            self.witness = Some(Witness {
                x: x.to_vec(),
                d: d.to_vec(),
            });
        }
    }

    fn report(
        self,
        region: &str,
        check: &str,
        kind: CheckKind,
        grid: Vec<usize>,
        window: Vec<[f64; 2]>,
        bound: Option<f64>,
    ) -> CertificateReport {
        CertificateReport {
            region: region.into(),
            check: check.into(),
            kind,
            grid,
            window,
            points: self.points,
            worst_margin: if self.points == 0 { 0.0 } else { self.value },
            witness: self.witness,
            passed: false,
            bound,
        }
        .finish()
    }
}

/// Disturbance corners `{0, a}²`.
fn corners(a: f64) -> [[f64; 2]; 4] {
    [[0.0, 0.0], [a, 0.0], [0.0, a], [a, a]]
}

fn outside_origin_ball(x1: f64, x2: f64) -> bool {
    x1 * x1 + x2 * x2 > ORIGIN_BALL * ORIGIN_BALL
}

/// `V̇ = γ'(x1)ẋ1 + x2ẋ2` under input `u`.
pub fn lyapunov_derivative(
    sc: &ChemostatScenario,
    k: &RclfConstants,
    u: f64,
    x1: f64,
    x2: f64,
    d: [f64; 2],
) -> f64 {
    let f = sc.field(x1, x2, u, d[0], d[1]);
    k.gamma_prime(x1) * f[0] + x2 * f[1]
}

/// A rectangle of the plane; case 1 uses two stacked rectangles.
struct Region {
    name: &'static str,
    x1: (f64, f64),
    x2: Vec<(f64, f64)>,
}

impl Region {
    fn window(&self) -> Vec<[f64; 2]> {
        let lo = self.x2.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
        let hi = self
            .x2
            .iter()
            .map(|r| r.1)
            .fold(f64::NEG_INFINITY, f64::max);
        vec![[self.x1.0, self.x1.1], [lo, hi]]
    }

    fn points(&self, n: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        let per = n / self.x2.len();
        let xs1 = linspace(self.x1.0, self.x1.1, n);
        let xs2: Vec<f64> = self
            .x2
            .iter()
            .flat_map(|&(lo, hi)| linspace(lo, hi, per))
            .collect();
        xs1.into_iter()
            .flat_map(move |a| xs2.clone().into_iter().map(move |b| (a, b)))
    }
}

fn case_regions(k: &RclfConstants) -> [Region; 4] {
    let (xs, bl, bh) = (k.x1_star, k.beta_min, k.beta_max);
    [
        Region {
            name: "case1",
            x1: (xs, -xs + WINDOW_PAD),
            x2: vec![(bl - WINDOW_PAD, bl), (bh, bh + WINDOW_PAD)],
        },
        Region {
            name: "case2",
            x1: (xs, -xs),
            x2: vec![(bl, bh)],
        },
        Region {
            name: "case3",
            x1: (-xs, -xs + WINDOW_PAD),
            x2: vec![(bl, bh)],
        },
        Region {
            name: "case4",
            x1: (xs - WINDOW_PAD, xs),
            x2: vec![(bl - WINDOW_PAD, bh + WINDOW_PAD)],
        },
    ]
}

fn strict_vdot_report(
    sc: &ChemostatScenario,
    k: &RclfConstants,
    law: &FeedbackLaw,
    region: &Region,
    label: &str,
    check: &str,
    grid: usize,
) -> CertificateReport {
    let mut worst = Worst::new();
    for (x1, x2) in region.points(grid) {
        if !outside_origin_ball(x1, x2) {
            continue;
        }
        let u = law.eval(sc, x1, x2);
        let n2 = x1 * x1 + x2 * x2;
        for d in corners(sc.a) {
            let v = lyapunov_derivative(sc, k, u, x1, x2, d);
            worst.push(v / n2, &[x1, x2], &d);
        }
    }
    worst.report(
        label,
        check,
        CheckKind::Strict,
        vec![grid, grid],
        region.window(),
        None,
    )
}

/// Checks `V̇ < 0` for `law` on each case region of the window
/// `[x1*−3, −x1*+3] × [β_min−3, β_max+3]` minus the origin ball.
pub fn verify_rclf_derivative(
    sc: &ChemostatScenario,
    k: &RclfConstants,
    law: &FeedbackLaw,
    grid: usize,
) -> Vec<CertificateReport> {
    case_regions(k)
        .iter()
        .map(|r| strict_vdot_report(sc, k, law, r, r.name, "lyapunov_decrease", grid))
        .collect()
}

/// `h(x) = ½x1* − x1`.
pub fn relaxed_h(x1_star: f64, x1: f64) -> f64 {
    0.5 * x1_star - x1
}

/// `ε̂ = −½x1*`.
pub fn relaxed_eps_hat(x1_star: f64) -> f64 {
    -0.5 * x1_star
}

/// `δ0 = l·(c·e^{−x1*/2} + 1)·ψ(x1*/2)`.
pub fn relaxed_delta0(sc: &ChemostatScenario, psi: &PsiSpec, l: &LSpec, x1_star: f64) -> f64 {
    l.inf() * (sc.c * (-0.5 * x1_star).exp() + 1.0) * psi.eval(0.5 * x1_star)
}

/// `W = ½x1² + ½min(0,x2)² + ½max(0, x2 − ln(c+e^{x1}))² + 1`.
pub fn escape_w(c: f64, x1: f64, x2: f64) -> f64 {
    let up = (x2 - (c + x1.exp()).ln()).max(0.0);
    let down = x2.min(0.0);
    0.5 * (x1 * x1 + down * down + up * up) + 1.0
}

pub fn escape_w_grad(c: f64, x1: f64, x2: f64) -> [f64; 2] {
    let e = x1.exp();
    let up = (x2 - (c + e).ln()).max(0.0);
    [x1 - up * e / (c + e), x2.min(0.0) + up]
}

/// Checks for the relaxed law: decrease of `V` on `Ω = {x1 ≥ x1*}`,
/// `ḣ ≤ −δ0` and `Ẇ ≤ K_W·W` on `{h ≥ 0}`.
pub fn verify_relaxed_conditions(
    sc: &ChemostatScenario,
    k: &RclfConstants,
    psi: &PsiSpec,
    l: &LSpec,
    grid: usize,
) -> Vec<CertificateReport> {
    let law = FeedbackLaw::Relaxed { psi: *psi, l: *l };
    let (xs, bl, bh) = (k.x1_star, k.beta_min, k.beta_max);
    let x2_win = (bl - WINDOW_PAD, bh + WINDOW_PAD);

    let omega = Region {
        name: "decrease_region",
        x1: (xs, -xs + WINDOW_PAD),
        x2: vec![x2_win],
    };
    let p2 = strict_vdot_report(sc, k, &law, &omega, omega.name, "lyapunov_decrease", grid);

    let reach = Region {
        name: "reach",
        x1: (xs - WINDOW_PAD, 0.5 * xs),
        x2: vec![x2_win],
    };
    let delta0 = relaxed_delta0(sc, psi, l, xs);
    let mut h_worst = Worst::new();
    let mut ratios = Vec::with_capacity(grid * grid);
    for (x1, x2) in reach.points(grid) {
        let u = law.eval(sc, x1, x2);
        let w = escape_w(sc.c, x1, x2);
        let gw = escape_w_grad(sc.c, x1, x2);
        for d in corners(sc.a) {
            let f = sc.field(x1, x2, u, d[0], d[1]);
            h_worst.push(-f[0] + delta0, &[x1, x2], &d);
            ratios.push(((gw[0] * f[0] + gw[1] * f[1]) / w, [x1, x2], d));
        }
    }
    let h_rep = h_worst.report(
        "escape_level",
        "level_decrease",
        CheckKind::NonStrict,
        vec![grid, grid],
        reach.window(),
        Some(delta0),
    );

    let k_w = ratios.iter().map(|r| r.0).fold(0.0, f64::max);
    let mut w_worst = Worst::new();
    for (ratio, x, d) in &ratios {
        w_worst.push(ratio - k_w, x, d);
    }
    let w_rep = w_worst.report(
        "escape_growth",
        "growth_bound",
        CheckKind::NonStrict,
        vec![grid, grid],
        reach.window(),
        Some(k_w),
    );
    vec![p2, h_rep, w_rep]
}

/// Reach-time and excursion bounds for the relaxed law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachBound {
    pub t: f64,
    pub g_bound: f64,
}

/// `max{|x| : W(x) ≤ s}` for the escape function with parameter `c`.
pub fn escape_level_radius(c: f64, s: f64) -> f64 {
    if !(s >= 1.0) {
        return 0.0;
    }
    let rho2 = 2.0 * (s - 1.0);
    let rho = rho2.sqrt();
    let n = 2000;
    linspace(-rho, rho, n + 1)
        .into_iter()
        .map(|x1| {
            let rem = (rho2 - x1 * x1).max(0.0).sqrt();
            let top = (c + x1.exp()).ln() + rem;
            let reach2 = rem.max(top.abs()).max((top - 2.0 * rem).min(0.0).abs());
            (x1 * x1 + reach2 * reach2).sqrt()
        })
        .fold(0.0, f64::max)
}

/// `T = max(0, h0 − ε̂)/δ0`, `B = e^{K_W T}·W0`, `G = ∫_B^{B+1} r(w) dw`.
pub fn reach_time_bound(
    c: f64,
    h0: f64,
    eps_hat: f64,
    delta0: f64,
    k_w: f64,
    w0: f64,
) -> Result<ReachBound, CertifyError> {
    let bad = |name, value, reason| {
        Err(CertifyError::InvalidArgument {
            name,
            value,
            reason,
        })
    };
    if !(delta0 > 0.0) {
        return bad("delta0", delta0, "must be positive");
    }
    if !(eps_hat > 0.0) {
        return bad("eps_hat", eps_hat, "must be positive");
    }
    if !(k_w >= 0.0) {
        return bad("K_W", k_w, "must be non-negative");
    }
    if !(w0 >= 1.0) {
        return bad("W(x0)", w0, "the escape function is at least 1");
    }
    let t = (h0 - eps_hat).max(0.0) / delta0;
    let b = (k_w * t).exp() * w0;
    let g_bound = if b.is_finite() {
        let n = 100;
        let nodes = linspace(b, b + 1.0, n + 1);
        let vals: Vec<f64> = nodes.iter().map(|&s| escape_level_radius(c, s)).collect();
        vals.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() / n as f64
    } else {
        f64::INFINITY
    };
    Ok(ReachBound { t, g_bound })
}

/// Data for checking relaxed control Lyapunov conditions of a scalar-input
/// system `ẋ = F(x, d, u)` on a tensor grid.
pub struct RelaxedClfProblem<'a> {
    pub field: &'a dyn Fn(&[f64], &[f64], f64, &mut [f64]),
    pub disturbance: CompactBox,
    pub grad_v: &'a dyn Fn(&[f64]) -> Vec<f64>,
    pub h: &'a dyn Fn(&[f64]) -> f64,
    pub grad_h: &'a dyn Fn(&[f64]) -> Vec<f64>,
    pub w: &'a dyn Fn(&[f64]) -> f64,
    pub grad_w: &'a dyn Fn(&[f64]) -> Vec<f64>,
    pub delta_fn: &'a dyn Fn(f64) -> f64,
    pub k: f64,
    pub eps: f64,
    /// Candidate control exhibiting the existence clauses.
    pub law: &'a dyn Fn(&[f64]) -> f64,
    pub window: Vec<[f64; 2]>,
    pub grid: usize,
}

fn tensor_grid(window: &[[f64; 2]], n: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = window.iter().map(|w| linspace(w[0], w[1], n)).collect();
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Grid checks of the three hypotheses: `ḣ ≤ −δ(h)` and `Ẇ ≤ K·W` on
/// `{h ≥ 0}` (R1), `V̇ < 0` on `{h ≤ ε, x ≠ 0}` (R2), and all of them on
/// `{0 ≤ h ≤ ε}` (R3). R3 folds the strict part in as `V̇/|x|² + STRICT_TOL`.
pub fn verify_relaxed_clf_conditions(
    prob: &RelaxedClfProblem<'_>,
) -> Result<Vec<CertificateReport>, CertifyError> {
    if !(prob.k >= 0.0) {
        return Err(CertifyError::InvalidArgument {
            name: "K",
            value: prob.k,
            reason: "must be non-negative",
        });
    }
    if !(prob.eps > 0.0) {
        return Err(CertifyError::InvalidArgument {
            name: "eps",
            value: prob.eps,
            reason: "must be positive",
        });
    }
    let pts = tensor_grid(&prob.window, prob.grid);
    let corners = prob.disturbance.corners();
    let dim = prob.window.len();
    let mut f = vec![0.0; dim];
    let (mut r1, mut r2, mut r3) = (Worst::new(), Worst::new(), Worst::new());
    for x in &pts {
        let h = (prob.h)(x);
        let n2 = dot(x, x);
        let in_r1 = h >= 0.0;
        let in_r2 = h <= prob.eps && n2.sqrt() > ORIGIN_BALL;
        if !in_r1 && !in_r2 {
            continue;
        }
        let delta = if in_r1 {
            let v = (prob.delta_fn)(h);
            if !(v > 0.0) {
                return Err(CertifyError::NonPositiveDelta { h, value: v });
            }
            v
        } else {
            0.0
        };
        let u = (prob.law)(x);
        let (gv, gh, gw, w) = (
            (prob.grad_v)(x),
            (prob.grad_h)(x),
            (prob.grad_w)(x),
            (prob.w)(x),
        );
        for d in &corners {
            (prob.field)(x, d, u, &mut f);
            let m_h = dot(&gh, &f) + delta;
            let m_w = dot(&gw, &f) - prob.k * w;
            let m_v = dot(&gv, &f) / n2;
            if in_r1 {
                r1.push(m_h.max(m_w), x, d);
            }
            if in_r2 {
                r2.push(m_v, x, d);
            }
            if in_r1 && in_r2 {
                r3.push(m_h.max(m_w).max(m_v + STRICT_TOL), x, d);
            }
        }
    }
    let grid = vec![prob.grid; dim];
    Ok(vec![
        r1.report(
            "R1",
            "level_decrease_and_growth",
            CheckKind::NonStrict,
            grid.clone(),
            prob.window.clone(),
            None,
        ),
        r2.report(
            "R2",
            "lyapunov_decrease",
            CheckKind::Strict,
            grid.clone(),
            prob.window.clone(),
            None,
        ),
        r3.report(
            "R3",
            "combined",
            CheckKind::NonStrict,
            grid,
            prob.window.clone(),
            None,
        ),
    ])
}

/// Control-affine scalar-input system `ẋ = f(x) + g(x)u`, `u ≥ −a`, with a
/// quadratic-gain law. Used for the input-limited conditions.
pub struct InputLimitedProblem<'a> {
    pub f: &'a dyn Fn(&[f64]) -> Vec<f64>,
    pub g: &'a dyn Fn(&[f64]) -> Vec<f64>,
    pub grad_v: &'a dyn Fn(&[f64]) -> Vec<f64>,
    pub gamma: &'a dyn Fn(&[f64]) -> f64,
    pub w: &'a dyn Fn(&[f64]) -> f64,
    pub grad_w: &'a dyn Fn(&[f64]) -> Vec<f64>,
    pub grad_h: &'a dyn Fn(&[f64]) -> Vec<f64>,
    pub a_limit: f64,
    pub eps: f64,
    pub delta: f64,
    pub k: f64,
    pub window: Vec<[f64; 2]>,
    pub grid: usize,
}

/// `sup_{u ≤ bound} (base + u·slope)`.
fn sup_below(base: f64, slope: f64, bound: f64) -> f64 {
    if slope > 0.0 {
        base + bound * slope
    } else if slope == 0.0 {
        base
    } else {
        f64::INFINITY
    }
}

/// Checks the unconstrained decrease `∇V·f − γ(∇V·g)² < 0` and the four
/// input-limited bounds on `W` and `h` in the saturation bands.
pub fn verify_input_limited_conditions(
    prob: &InputLimitedProblem<'_>,
) -> Result<Vec<CertificateReport>, CertifyError> {
    let (a, e) = (prob.a_limit, prob.eps);
    if !(a > 0.0) || !(e > 0.0 && e < a) {
        return Err(CertifyError::InvalidArgument {
            name: "eps",
            value: e,
            reason: "need 0 < eps < a",
        });
    }
    if !(prob.delta > 0.0) {
        return Err(CertifyError::NonPositiveDelta {
            h: 0.0,
            value: prob.delta,
        });
    }
    let (mut clf, mut sat) = (Worst::new(), Worst::new());
    for x in tensor_grid(&prob.window, prob.grid) {
        let (f, g, gv) = ((prob.f)(&x), (prob.g)(&x), (prob.grad_v)(&x));
        let lgv = dot(&gv, &g);
        let gain = (prob.gamma)(&x) * lgv;
        let n2 = dot(&x, &x);
        if n2.sqrt() > ORIGIN_BALL {
            clf.push((dot(&gv, &f) - (prob.gamma)(&x) * lgv * lgv) / n2, &x, &[]);
        }
        let (gw, gh) = ((prob.grad_w)(&x), (prob.grad_h)(&x));
        let (wf, wg, hf, hg) = (dot(&gw, &f), dot(&gw, &g), dot(&gh, &f), dot(&gh, &g));
        let kw = prob.k * prob.w(&x);
        if gain >= a - e && gain <= a {
            sat.push(sup_below(wf, wg, -a + e) - kw, &x, &[]);
            sat.push(sup_below(hf, hg, -a + e) + prob.delta, &x, &[]);
        }
        if gain >= a {
            sat.push(wf - a * wg - kw, &x, &[]);
            sat.push(hf - a * hg + prob.delta, &x, &[]);
        }
    }
    let grid = vec![prob.grid; prob.window.len()];
    Ok(vec![
        clf.report(
            "input_limited",
            "unconstrained_decrease",
            CheckKind::Strict,
            grid.clone(),
            prob.window.clone(),
            None,
        ),
        sat.report(
            "input_limited",
            "saturation_bands",
            CheckKind::NonStrict,
            grid,
            prob.window.clone(),
            None,
        ),
    ])
}

impl InputLimitedProblem<'_> {
    fn w(&self, x: &[f64]) -> f64 {
        (self.w)(x)
    }
}
