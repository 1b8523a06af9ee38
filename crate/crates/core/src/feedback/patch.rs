use serde::Serialize;

use crate::dynamics::norm;
use crate::feedback::FeedbackError;

/// `C^∞` step: 0 on `(−∞, 0]`, 1 on `[1, ∞)`, non-decreasing.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

/// Which definition of the patched law applies at a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchBand {
    /// `h > 4ε/5`: `k1`.
    Outer,
    /// `3ε/5 ≤ h ≤ 4ε/5`: `k3 → k1`.
    OuterBlend,
    /// `2ε/5 < h < 3ε/5`: `k3`.
    Middle,
    /// `ε/5 ≤ h ≤ 2ε/5`: `k2 → k3`.
    InnerBlend,
    /// `h < ε/5`, `|x| > 2r`: `k2`.
    Inner,
    /// `r ≤ |x| ≤ 2r`: `k̃ → k2`.
    BallBlend,
    /// `|x| < r`: `k̃`.
    Ball,
}

/// Patching data: level function `h`, band width `ε`, ball radius `r`, and
/// the bump used in transition bands.
pub struct PatchSpec<'a> {
    pub h: &'a dyn Fn(&[f64]) -> f64,
    pub eps: f64,
    pub r: f64,
    pub bump: &'a dyn Fn(f64) -> f64,
}

impl PatchSpec<'_> {
    /// Band containing `x`, or an error if `|x| ≤ 2r` but `h ≥ ε/5`.
    pub fn band(&self, x: &[f64]) -> Result<PatchBand, FeedbackError> {
        let h = (self.h)(x);
        let nx = norm(x);
        let e = self.eps;
        if nx <= 2.0 * self.r {
            if h >= e / 5.0 {
                return Err(FeedbackError::PatchDomain { h, norm: nx });
            }
            return Ok(if nx < self.r {
                PatchBand::Ball
            } else {
                PatchBand::BallBlend
            });
        }
        Ok(if h > 0.8 * e {
            PatchBand::Outer
        } else if h >= 0.6 * e {
            PatchBand::OuterBlend
        } else if h > 0.4 * e {
            PatchBand::Middle
        } else if h >= 0.2 * e {
            PatchBand::InnerBlend
        } else {
            PatchBand::Inner
        })
    }
}

/// Patched feedback built from `k1` (far side of `h`), `k2` (near side, away
/// from the origin), `k3` (middle band) and `k̃` (near the origin). Only the
/// laws needed at `x` are evaluated; blends are convex combinations.
pub fn patch_feedbacks(
    k1: impl Fn(&[f64]) -> f64,
    k2: impl Fn(&[f64]) -> f64,
    k3: impl Fn(&[f64]) -> f64,
    k_tilde: impl Fn(&[f64]) -> f64,
    spec: &PatchSpec<'_>,
    x: &[f64],
) -> Result<f64, FeedbackError> {
    let blend = |w: f64, lo: f64, hi: f64| (1.0 - w) * lo + w * hi;
    let e = spec.eps;
    Ok(match spec.band(x)? {
        PatchBand::Outer => k1(x),
        PatchBand::Middle => k3(x),
        PatchBand::Inner => k2(x),
        PatchBand::Ball => k_tilde(x),
        PatchBand::OuterBlend => {
            let w = (spec.bump)(5.0 * (spec.h)(x) / e - 3.0);
            blend(w, k3(x), k1(x))
        }
        PatchBand::InnerBlend => {
            let w = (spec.bump)(5.0 * (spec.h)(x) / e - 1.0);
            blend(w, k2(x), k3(x))
        }
        PatchBand::BallBlend => {
            let nx2 = x.iter().map(|v| v * v).sum::<f64>();
            let r2 = spec.r * spec.r;
            let w = (spec.bump)((nx2 - r2) / (3.0 * r2));
            blend(w, k_tilde(x), k2(x))
        }
    })
}
