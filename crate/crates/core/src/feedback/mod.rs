//! Feedback laws. The chemostat laws act on the log coordinates `(x1, x2)`
//! and return the input deviation `u = D − D_s`.

mod backstepping;
mod constrained;
mod patch;

pub use backstepping::{
    compute_backstepping_gains, growth_bound_rhs, saturated_backstepping, GainStage,
    SaturatedGains, TriangularBounds, TriangularSystem, GAIN_MARGIN,
};
pub use constrained::{constrained_quadratic_feedback, PlanarExample};
pub use patch::{patch_feedbacks, smooth_step, PatchBand, PatchSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chemostat::ChemostatScenario;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeedbackError {
    #[error("invalid feedback parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error(
        "phi violates phi(0) = 1, phi < 1 on x > 0, phi > 1 on x < 0 at x = {x} (phi = {value})"
    )]
    PhiConstraint { x: f64, value: f64 },
    #[error("stage {stage}: admissible gain interval ({lower}, {eta}] is empty")]
    EmptyGainInterval { stage: usize, lower: f64, eta: f64 },
    #[error("invalid triangular system: {0}")]
    InvalidSystem(String),
    #[error("patching undefined at h = {h}, |x| = {norm}: the inner ball must lie in h < eps/5")]
    PatchDomain { h: f64, norm: f64 },
}

/// `ψ(s) = λ·max(0, −s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiSpec {
    pub lambda: f64,
}

impl PsiSpec {
    pub fn new(lambda: f64) -> Result<Self, FeedbackError> {
        if lambda > 0.0 && lambda.is_finite() {
            Ok(Self { lambda })
        } else {
            Err(FeedbackError::InvalidParameter {
                name: "lambda",
                value: lambda,
            })
        }
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        self.lambda * (-s).max(0.0)
    }
}

/// Constant gain `L(x) ≡ l0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LSpec {
    pub l0: f64,
}

impl LSpec {
    pub fn new(l0: f64) -> Result<Self, FeedbackError> {
        if l0 > 0.0 && l0.is_finite() {
            Ok(Self { l0 })
        } else {
            Err(FeedbackError::InvalidParameter {
                name: "l0",
                value: l0,
            })
        }
    }

    #[inline]
    pub fn eval(&self, _x1: f64, _x2: f64) -> f64 {
        self.l0
    }

    /// `inf L`.
    pub fn inf(&self) -> f64 {
        self.l0
    }
}

/// Parameters of the full robust law: threshold `x1_star < 0`, quadratic
/// weight `M` of the Lyapunov function and `W(x) = w·|x|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RclfFeedbackParams {
    pub x1_star: f64,
    pub m: f64,
    pub w_weight: f64,
}

impl RclfFeedbackParams {
    pub fn new(x1_star: f64, m: f64, w_weight: f64) -> Result<Self, FeedbackError> {
        let bad = |name, value| Err(FeedbackError::InvalidParameter { name, value });
        if !(x1_star < 0.0) || !x1_star.is_finite() {
            return bad("x1_star", x1_star);
        }
        if !(m > 0.0) || !m.is_finite() {
            return bad("M", m);
        }
        if !(w_weight > 0.0) || !w_weight.is_finite() {
            return bad("w_weight", w_weight);
        }
        Ok(Self {
            x1_star,
            m,
            w_weight,
        })
    }

    pub fn w(&self, x1: f64, x2: f64) -> f64 {
        self.w_weight * (x1 * x1 + x2 * x2)
    }
}

/// Shared first two terms: `−D_s + max(0, Kμ̃ − m)·G·e^{x2 − x1}`.
#[inline]
fn uptake_compensation(sc: &ChemostatScenario, x1: f64, x2: f64) -> f64 {
    let mu = sc.mu_tilde(x1);
    -sc.d_s + (sc.k * mu - sc.m).max(0.0) * sc.g * (x2 - x1).exp()
}

/// `u = −D_s + max(0, Kμ̃(x1) − m)·G·e^{x2−x1} + L·ψ(x1)`. Does not read `a`.
pub fn relaxed_feedback(sc: &ChemostatScenario, psi: &PsiSpec, l: &LSpec, x1: f64, x2: f64) -> f64 {
    uptake_compensation(sc, x1, x2) + l.eval(x1, x2) * psi.eval(x1)
}

/// Dilution rate of the relaxed law written directly in `(X, S)`.
pub fn relaxed_dilution_physical(
    sc: &ChemostatScenario,
    psi: &PsiSpec,
    l: &LSpec,
    x: f64,
    s: f64,
) -> f64 {
    // ψ and L are transported through the coordinate change
    let x1 = (sc.c * s / (sc.s_i - s)).ln();
    let x2 = (x / (sc.g * (sc.s_i - s))).ln();
    sc.s_s / (sc.s_i - sc.s_s) * (sc.k * sc.mu(s) - sc.m).max(0.0) * x / s
        + l.eval(x1, x2) * psi.eval(x1)
}

/// Lower bound on the correction `q` required for `x1 ≤ x1_star`.
pub fn rclf_q_lower_bound(
    sc: &ChemostatScenario,
    params: &RclfFeedbackParams,
    x1: f64,
    x2: f64,
) -> f64 {
    let e = x1.exp();
    let ce = sc.c + e;
    let mu = sc.mu_tilde(x1);
    let big_m = params.m;
    params.w(x1, x2) * e / (big_m * ce) + sc.a * sc.c * sc.s_s * x2.abs() * e / (big_m * ce * ce)
        - e * x2 * (mu - sc.b - (sc.k * mu - sc.m) * sc.g * x2.exp()) / (big_m * x1 * ce)
}

/// Ramp-gated correction: `clamp(x1/x1_star, 0, 1)·max(0, bound(min(x1, x1_star), x2))`.
pub fn rclf_q(sc: &ChemostatScenario, params: &RclfFeedbackParams, x1: f64, x2: f64) -> f64 {
    let ramp = (x1 / params.x1_star).clamp(0.0, 1.0);
    if ramp == 0.0 {
        return 0.0;
    }
    ramp * rclf_q_lower_bound(sc, params, x1.min(params.x1_star), x2).max(0.0)
}

/// `u = −D_s + max(0, Kμ̃ − m)·G·e^{x2−x1} + q(x1, x2)`.
pub fn rclf_feedback(sc: &ChemostatScenario, params: &RclfFeedbackParams, x1: f64, x2: f64) -> f64 {
    uptake_compensation(sc, x1, x2) + rclf_q(sc, params, x1, x2)
}

/// Grid on which the shape constraints of `φ` are validated.
const PHI_GRID: (f64, f64, usize) = (-10.0, 10.0, 2001);

/// Checks `φ(0) = 1`, `φ < 1` on `x > 0` and `φ > 1` on `x < 0` on a grid.
pub fn validate_phi(phi: impl Fn(f64) -> f64) -> Result<(), FeedbackError> {
    let at0 = phi(0.0);
    if (at0 - 1.0).abs() > 1e-12 {
        return Err(FeedbackError::PhiConstraint { x: 0.0, value: at0 });
    }
    let (lo, hi, n) = PHI_GRID;
    for k in 0..n {
        let x = lo + (hi - lo) * k as f64 / (n - 1) as f64;
        let v = phi(x);
        let ok = if x > 0.0 {
            (0.0..1.0).contains(&v)
        } else if x < 0.0 {
            v > 1.0
        } else {
            true
        };
        if !ok || !v.is_finite() {
            return Err(FeedbackError::PhiConstraint { x, value: v });
        }
    }
    Ok(())
}

/// `u = −D_s + μ̃(x1)·e^{x2}·φ(x1) + q(x1, x2)`, with `φ` validated first.
pub fn classical_feedback(
    sc: &ChemostatScenario,
    phi: impl Fn(f64) -> f64,
    q_extra: impl Fn(f64, f64) -> f64,
    x1: f64,
    x2: f64,
) -> Result<f64, FeedbackError> {
    validate_phi(&phi)?;
    Ok(classical_unchecked(sc, phi(x1), q_extra(x1, x2), x1, x2))
}

#[inline]
fn classical_unchecked(sc: &ChemostatScenario, phi: f64, q: f64, x1: f64, x2: f64) -> f64 {
    -sc.d_s + sc.mu_tilde(x1) * x2.exp() * phi + q
}

/// `φ(x) = (c + 1)/(c + eˣ)`, for which the classical law is `D = μ(S)·X/X_s`.
pub fn mailleret_phi(sc: &ChemostatScenario, x: f64) -> f64 {
    (sc.c + 1.0) / (sc.c + x.exp())
}

/// A chemostat feedback law together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FeedbackLaw {
    Relaxed {
        psi: PsiSpec,
        l: LSpec,
    },
    Rclf(RclfFeedbackParams),
    /// `φ(x) = e^{−phi_slope·x}`, `q = q_gain·max(0, −x1)`.
    Classical {
        phi_slope: f64,
        q_gain: f64,
    },
    Mailleret,
}

impl FeedbackLaw {
    pub fn relaxed(lambda: f64, l0: f64) -> Result<Self, FeedbackError> {
        Ok(Self::Relaxed {
            psi: PsiSpec::new(lambda)?,
            l: LSpec::new(l0)?,
        })
    }

    pub fn classical(phi_slope: f64, q_gain: f64) -> Result<Self, FeedbackError> {
        if !(phi_slope > 0.0) || !phi_slope.is_finite() {
            return Err(FeedbackError::InvalidParameter {
                name: "phi_slope",
                value: phi_slope,
            });
        }
        if !(q_gain >= 0.0) || !q_gain.is_finite() {
            return Err(FeedbackError::InvalidParameter {
                name: "q_gain",
                value: q_gain,
            });
        }
        Ok(Self::Classical { phi_slope, q_gain })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Relaxed { .. } => "relaxed",
            Self::Rclf(_) => "rclf",
            Self::Classical { .. } => "classical",
            Self::Mailleret => "mailleret",
        }
    }

    /// Input deviation `u` at `(x1, x2)`.
    #[inline]
    pub fn eval(&self, sc: &ChemostatScenario, x1: f64, x2: f64) -> f64 {
        match self {
            Self::Relaxed { psi, l } => relaxed_feedback(sc, psi, l, x1, x2),
            Self::Rclf(p) => rclf_feedback(sc, p, x1, x2),
            Self::Classical { phi_slope, q_gain } => {
                classical_unchecked(sc, (-phi_slope * x1).exp(), q_gain * (-x1).max(0.0), x1, x2)
            }
            Self::Mailleret => classical_unchecked(sc, mailleret_phi(sc, x1), 0.0, x1, x2),
        }
    }

    /// Closed-loop vector field `(t, x, d, ẋ)` in log coordinates.
    pub fn closed_loop<'a>(
        &'a self,
        sc: &'a ChemostatScenario,
    ) -> impl Fn(f64, &[f64], &[f64], &mut [f64]) + 'a {
        move |_t, x, d, out| {
            let u = self.eval(sc, x[0], x[1]);
            let f = sc.field(x[0], x[1], u, d[0], d[1]);
            out[0] = f[0];
            out[1] = f[1];
        }
    }
}
