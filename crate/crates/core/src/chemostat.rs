//! Uncertain chemostat
//!
//! ```text
//! Ẋ = (μ(S) + Δ − D − b) X
//! Ṡ = D (S_i − S) − K μ(S) X + m X
//! Δ = d1 |S − S_s| − d2 max(0, S_s − S),   d ∈ [0, a]²
//! ```
//!
//! and its log-coordinate form on all of ℝ²:
//! `S = S_i e^{x1}/(c + e^{x1})`, `X = G (S_i − S) e^{x2}`, `D = D_s + u`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Grid size for the positivity margins of the growth-rate hypotheses.
pub const S2_GRID: usize = 2000;
/// Safety factor on numerically estimated Lipschitz constants.
pub const LIPSCHITZ_SAFETY: f64 = 1.05;
const EQUILIBRIUM_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChemostatError {
    #[error("invalid growth model: {0}")]
    InvalidGrowth(String),
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("no substrate level in (0, S_i) with mu(S) = D_s + b = {target}")]
    NoEquilibrium { target: f64 },
    #[error("K (D_s + b) - m = {0} must be positive")]
    NonPositiveYieldTerm(f64),
    #[error("equilibrium biomass X_s = {0} must be positive")]
    NonPositiveBiomass(f64),
    #[error("equilibrium check failed: {0}")]
    Inconsistent(String),
    #[error(
        "growth-rate hypothesis violated: {inequality} fails at S = {witness} (value {value})"
    )]
    S2Violated {
        inequality: &'static str,
        witness: f64,
        value: f64,
    },
    #[error("no admissible x1_star in [{x1_plus}, 0): {reason}")]
    NoX1Star { x1_plus: f64, reason: &'static str },
    #[error("state outside the physical domain: X = {x}, S = {s} (need X > 0, 0 < S < {s_i})")]
    DomainViolation { x: f64, s: f64, s_i: f64 },
    #[error("input u = {u} violates u >= -D_s = {min}")]
    InputConstraint { u: f64, min: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthKind {
    Monod,
    Haldane,
    GeneralizedHaldane,
}

/// `μ(S) = scale·S / (K1 + S + K2·S^n)` with `n = 1` for Monod (K2 ignored),
/// `n = 2` for Haldane and `n = exponent` in the generalized case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthModel {
    pub kind: GrowthKind,
    pub mu_max_scale: f64,
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
}

fn default_exponent() -> f64 {
    2.0
}

impl GrowthModel {
    pub fn monod(mu_max_scale: f64, k1: f64) -> Result<Self, ChemostatError> {
        Self {
            kind: GrowthKind::Monod,
            mu_max_scale,
            k1,
            k2: 0.0,
            exponent: 1.0,
        }
        .validated()
    }

    pub fn haldane(mu_max_scale: f64, k1: f64, k2: f64) -> Result<Self, ChemostatError> {
        Self {
            kind: GrowthKind::Haldane,
            mu_max_scale,
            k1,
            k2,
            exponent: 2.0,
        }
        .validated()
    }

    pub fn generalized_haldane(
        mu_max_scale: f64,
        k1: f64,
        k2: f64,
        exponent: f64,
    ) -> Result<Self, ChemostatError> {
        Self {
            kind: GrowthKind::GeneralizedHaldane,
            mu_max_scale,
            k1,
            k2,
            exponent,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self, ChemostatError> {
        let bad = |what: &str| Err(ChemostatError::InvalidGrowth(what.to_owned()));
        if !(self.mu_max_scale > 0.0) || !self.mu_max_scale.is_finite() {
            return bad("mu_max_scale must be positive");
        }
        if !(self.k1 > 0.0) || !self.k1.is_finite() {
            return bad("k1 must be positive");
        }
        if !(self.k2 >= 0.0) || !self.k2.is_finite() {
            return bad("k2 must be non-negative");
        }
        if self.kind == GrowthKind::GeneralizedHaldane
            && (!(self.exponent >= 1.0) || !self.exponent.is_finite())
        {
            return bad("exponent must be at least 1");
        }
        Ok(self)
    }

    fn power(&self) -> f64 {
        match self.kind {
            GrowthKind::Monod => 1.0,
            GrowthKind::Haldane => 2.0,
            GrowthKind::GeneralizedHaldane => self.exponent,
        }
    }

    fn k2_eff(&self) -> f64 {
        match self.kind {
            GrowthKind::Monod => 0.0,
            _ => self.k2,
        }
    }

    /// Specific growth rate; zero for `S <= 0`.
    pub fn rate(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let n = self.power();
        let inhibition = if n == 2.0 { s * s } else { s.powf(n) };
        self.mu_max_scale * s / (self.k1 + s + self.k2_eff() * inhibition)
    }

    /// Substrate level of the interior maximum, if the rate has one.
    pub fn peak(&self) -> Option<f64> {
        let (k2, n) = (self.k2_eff(), self.power());
        (k2 > 0.0 && n > 1.0).then(|| (self.k1 / ((n - 1.0) * k2)).powf(1.0 / n))
    }

    /// `sup_{S > 0} μ(S)`, attained at the peak or approached as `S → ∞`.
    pub fn mu_max(&self) -> f64 {
        match self.peak() {
            Some(s) => self.rate(s),
            // n = 1: μ → scale / (1 + K2) from below
            None => self.mu_max_scale / (1.0 + self.k2_eff()),
        }
    }
}

/// Free function form of [`GrowthModel::rate`].
pub fn growth_rate(model: &GrowthModel, s: f64) -> f64 {
    model.rate(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchHint {
    Ascending,
    #[default]
    Descending,
}

/// Physical parameters that do not depend on the chosen operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChemostatParams {
    pub s_i: f64,
    pub k: f64,
    pub b: f64,
    pub m: f64,
    pub a: f64,
    pub growth: GrowthModel,
}

impl ChemostatParams {
    fn validate(&self) -> Result<(), ChemostatError> {
        let check = |name, value: f64, ok: bool, reason| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(ChemostatError::InvalidParameter {
                    name,
                    value,
                    reason,
                })
            }
        };
        check("s_i", self.s_i, self.s_i > 0.0, "must be positive")?;
        check("k", self.k, self.k > 0.0, "must be positive")?;
        check("b", self.b, self.b >= 0.0, "must be non-negative")?;
        check("m", self.m, true, "must be finite")?;
        check("a", self.a, self.a >= 0.0, "must be non-negative")?;
        self.growth.validated().map(|_| ())
    }
}

/// Operating point `(X_s, S_s)` of the chemostat together with the transform
/// constants `c` and `G`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChemostatScenario {
    pub s_i: f64,
    pub k: f64,
    pub b: f64,
    pub m: f64,
    pub d_s: f64,
    pub a: f64,
    pub s_s: f64,
    pub x_s: f64,
    pub c: f64,
    pub g: f64,
    pub growth: GrowthModel,
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    // invariant: f(lo) < 0 <= f(hi) or the reverse; keep the sign of lo
    let neg_lo = f(lo) < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) < 0.0) == neg_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Finds `S_s` with `μ(S_s) = D_s + b` by bisection. When the rate has an
/// interior peak below `S_i`, `branch` picks the root on that side of it; if
/// that side has no root the other side is used.
pub fn solve_equilibrium(
    params: &ChemostatParams,
    d_s: f64,
    branch: BranchHint,
) -> Result<ChemostatScenario, ChemostatError> {
    params.validate()?;
    if !(d_s > 0.0) || !d_s.is_finite() {
        return Err(ChemostatError::InvalidParameter {
            name: "d_s",
            value: d_s,
            reason: "must be positive",
        });
    }
    let target = d_s + params.b;
    let f = |s: f64| params.growth.rate(s) - target;
    let s_i = params.s_i;

    let peak = params.growth.peak().filter(|&p| p < s_i);
    let ascending = || {
        let top = peak.unwrap_or(s_i);
        (f(top) >= 0.0).then(|| bisect(0.0, top, f))
    };
    let descending = || {
        let p = peak?;
        (f(p) >= 0.0 && f(s_i) < 0.0).then(|| bisect(p, s_i, f))
    };
    let root = match branch {
        BranchHint::Ascending => ascending().or_else(descending),
        BranchHint::Descending => descending().or_else(ascending),
    }
    .ok_or(ChemostatError::NoEquilibrium { target })?;
    if !(root > 0.0 && root < s_i) {
        return Err(ChemostatError::NoEquilibrium { target });
    }
    ChemostatScenario::build(params, d_s, root)
}

impl ChemostatScenario {
    /// Operating point fixed by its substrate level; `D_s = μ(S_s) − b`.
    pub fn from_substrate(params: &ChemostatParams, s_s: f64) -> Result<Self, ChemostatError> {
        params.validate()?;
        if !(s_s > 0.0 && s_s < params.s_i) {
            return Err(ChemostatError::InvalidParameter {
                name: "s_s",
                value: s_s,
                reason: "must lie in (0, S_i)",
            });
        }
        let d_s = params.growth.rate(s_s) - params.b;
        if !(d_s > 0.0) {
            return Err(ChemostatError::InvalidParameter {
                name: "d_s",
                value: d_s,
                reason: "mu(S_s) - b must be positive",
            });
        }
        Self::build(params, d_s, s_s)
    }

    fn build(params: &ChemostatParams, d_s: f64, s_s: f64) -> Result<Self, ChemostatError> {
        let denom = params.k * (d_s + params.b) - params.m;
        if !(denom > 0.0) {
            return Err(ChemostatError::NonPositiveYieldTerm(denom));
        }
        let x_s = d_s * (params.s_i - s_s) / denom;
        if !(x_s > 0.0) {
            return Err(ChemostatError::NonPositiveBiomass(x_s));
        }
        let sc = Self {
            s_i: params.s_i,
            k: params.k,
            b: params.b,
            m: params.m,
            d_s,
            a: params.a,
            s_s,
            x_s,
            c: params.s_i / s_s - 1.0,
            g: d_s / denom,
            growth: params.growth,
        };
        sc.validate()?;
        Ok(sc)
    }

    /// Checks the stored constants against their defining relations.
    pub fn validate(&self) -> Result<(), ChemostatError> {
        let err = |msg: String| Err(ChemostatError::Inconsistent(msg));
        if !(self.s_s > 0.0 && self.s_s < self.s_i) {
            return err(format!("S_s = {} not in (0, S_i)", self.s_s));
        }
        if !(self.c > 0.0 && self.g > 0.0 && self.x_s > 0.0) {
            return err("c, G and X_s must be positive".into());
        }
        let mismatch = self.growth.rate(self.s_s) - (self.d_s + self.b);
        if mismatch.abs() > EQUILIBRIUM_TOL * (1.0 + self.d_s + self.b) {
            return err(format!("mu(S_s) - D_s - b = {mismatch}"));
        }
        let x_s = self.d_s * (self.s_i - self.s_s) / self.yield_term();
        if (x_s - self.x_s).abs() > EQUILIBRIUM_TOL * x_s.abs().max(1.0) {
            return err(format!("X_s = {} but the balance gives {x_s}", self.x_s));
        }
        Ok(())
    }

    /// Same operating point with a different uncertainty magnitude.
    pub fn with_uncertainty(&self, a: f64) -> Self {
        Self { a, ..*self }
    }

    pub fn params(&self) -> ChemostatParams {
        ChemostatParams {
            s_i: self.s_i,
            k: self.k,
            b: self.b,
            m: self.m,
            a: self.a,
            growth: self.growth,
        }
    }

    /// `K (D_s + b) − m`.
    pub fn yield_term(&self) -> f64 {
        self.k * (self.d_s + self.b) - self.m
    }

    pub fn mu(&self, s: f64) -> f64 {
        self.growth.rate(s)
    }

    /// `S(x1) = S_i e^{x1} / (c + e^{x1})`.
    pub fn substrate(&self, x1: f64) -> f64 {
        if x1 > 0.0 {
            self.s_i / (1.0 + self.c * (-x1).exp())
        } else {
            let e = x1.exp();
            self.s_i * e / (self.c + e)
        }
    }

    /// `c / (c + e^{x1}) = (S_i − S)/S_i`.
    fn residual_fraction(&self, x1: f64) -> f64 {
        if x1 > 0.0 {
            let t = self.c * (-x1).exp();
            t / (t + 1.0)
        } else {
            self.c / (self.c + x1.exp())
        }
    }

    /// `μ̃(x1) = μ(S(x1))`.
    pub fn mu_tilde(&self, x1: f64) -> f64 {
        self.mu(self.substrate(x1))
    }

    /// Coefficient of `d1` in `ẋ2`: `c S_s |e^{x1} − 1| / (c + e^{x1})`.
    pub fn alpha(&self, x1: f64) -> f64 {
        if x1 > 0.0 {
            let t = (-x1).exp();
            self.s_s * self.c * (1.0 - t) / (self.c * t + 1.0)
        } else {
            // = S_s (S_i − S)/S_i · (1 − e^{x1})
            self.s_s * self.residual_fraction(x1) * (-x1.exp_m1())
        }
    }

    /// Coefficient of `−d2` in `ẋ2`: `c S_s max(0, 1 − e^{x1}) / (c + e^{x1})`.
    pub fn beta(&self, x1: f64) -> f64 {
        if x1 >= 0.0 {
            0.0
        } else {
            self.s_s * self.residual_fraction(x1) * (-x1.exp_m1())
        }
    }

    /// Uncertainty term `Δ(S) = d1 |S − S_s| − d2 max(0, S_s − S)`.
    pub fn uncertainty(&self, s: f64, d1: f64, d2: f64) -> f64 {
        d1 * (s - self.s_s).abs() - d2 * (self.s_s - s).max(0.0)
    }

    /// Right-hand side of the physical model, without domain checks.
    pub fn physical_rates(&self, x: f64, s: f64, dil: f64, d1: f64, d2: f64) -> (f64, f64) {
        let mu = self.mu(s);
        let dx = (mu + self.uncertainty(s, d1, d2) - dil - self.b) * x;
        let ds = dil * (self.s_i - s) - self.k * mu * x + self.m * x;
        (dx, ds)
    }

    /// Right-hand side of the physical model on `X > 0, 0 < S < S_i`.
    pub fn physical_rhs(
        &self,
        x: f64,
        s: f64,
        dil: f64,
        d1: f64,
        d2: f64,
    ) -> Result<(f64, f64), ChemostatError> {
        self.check_domain(x, s)?;
        Ok(self.physical_rates(x, s, dil, d1, d2))
    }

    fn check_domain(&self, x: f64, s: f64) -> Result<(), ChemostatError> {
        if x > 0.0 && s > 0.0 && s < self.s_i && x.is_finite() {
            Ok(())
        } else {
            Err(ChemostatError::DomainViolation {
                x,
                s,
                s_i: self.s_i,
            })
        }
    }

    /// `(X, S) ↦ (x1, x2)`.
    pub fn to_transformed(&self, x: f64, s: f64) -> Result<(f64, f64), ChemostatError> {
        self.check_domain(x, s)?;
        let rest = self.s_i - s;
        Ok(((self.c * s / rest).ln(), (x / (self.g * rest)).ln()))
    }

    /// `(x1, x2) ↦ (X, S)`.
    pub fn from_transformed(&self, x1: f64, x2: f64) -> (f64, f64) {
        let s = self.substrate(x1);
        let rest = self.s_i * self.residual_fraction(x1);
        (self.g * rest * x2.exp(), s)
    }

    /// Transformed vector field without the input-constraint check.
    #[inline]
    pub fn field(&self, x1: f64, x2: f64, u: f64, d1: f64, d2: f64) -> [f64; 2] {
        let mu = self.mu_tilde(x1);
        let uptake = (self.k * mu - self.m) * self.g * x2.exp();
        let dx1 = (self.c * (-x1).exp() + 1.0) * (self.d_s + u - uptake);
        let dx2 = mu + d1 * self.alpha(x1) - d2 * self.beta(x1) - self.b - uptake;
        [dx1, dx2]
    }

    /// Transformed vector field with the input constraint `u >= −D_s`.
    pub fn transformed_rhs(
        &self,
        x1: f64,
        x2: f64,
        u: f64,
        d1: f64,
        d2: f64,
    ) -> Result<[f64; 2], ChemostatError> {
        if !(u >= -self.d_s) {
            return Err(ChemostatError::InputConstraint { u, min: -self.d_s });
        }
        Ok(self.field(x1, x2, u, d1, d2))
    }
}

/// Margins certifying the growth-rate positivity hypotheses and the derived
/// threshold `x1_star`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct S2Certificate {
    pub s_plus: f64,
    pub p: f64,
    pub x1_plus: f64,
    pub x1_star: f64,
}

const INEQ_YIELD: &str = "K mu(S) - m >= p";
const INEQ_GROWTH: &str = "mu(S) - b >= 2p";

/// Certifies `Kμ(S) − m ≥ p` and `μ(S) − b ≥ 2p` on `[S⁺, S_i]` and picks
/// `x1_star` so that, for all `x1 ≥ x1_star`,
/// `a c S_s max(0, 1 − e^{x1})/(c + e^{x1}) ≤ p`, `Kμ̃ − m ≥ p`, `μ̃ − b ≥ 2p`.
pub fn check_s2(sc: &ChemostatScenario) -> Result<S2Certificate, ChemostatError> {
    let margin = |s: f64| {
        let mu = sc.mu(s);
        (sc.k * mu - sc.m).min(0.5 * (mu - sc.b))
    };
    let violated = |s: f64| {
        let mu = sc.mu(s);
        let yield_val = sc.k * mu - sc.m;
        let growth_val = mu - sc.b;
        if yield_val <= 0.0 {
            ChemostatError::S2Violated {
                inequality: INEQ_YIELD,
                witness: s,
                value: yield_val,
            }
        } else {
            ChemostatError::S2Violated {
                inequality: INEQ_GROWTH,
                witness: s,
                value: growth_val,
            }
        }
    };

    let grid: Vec<f64> = (1..=S2_GRID)
        .map(|k| sc.s_i * k as f64 / S2_GRID as f64)
        .collect();
    // first grid index at or above S_s
    let i_s = grid.partition_point(|&s| s < sc.s_s);

    let mut f_right = f64::INFINITY;
    let mut witness = sc.s_s;
    for &s in std::iter::once(&sc.s_s).chain(&grid[i_s..]) {
        let f = margin(s);
        if f < f_right {
            f_right = f;
            witness = s;
        }
    }
    if !(f_right > 0.0) {
        return Err(violated(witness));
    }

    // Extend below S_s while the margin stays above 3/4 of the right-side
    // minimum; the remaining quarter absorbs grid error.
    let mut lo = i_s;
    while lo > 0 && margin(grid[lo - 1]) >= 0.75 * f_right {
        lo -= 1;
    }
    if lo == i_s {
        return Err(ChemostatError::S2Violated {
            inequality: INEQ_GROWTH,
            witness: grid[lo.saturating_sub(1)],
            value: margin(grid[lo.saturating_sub(1)]),
        });
    }
    let s_plus = grid[lo];
    let grid_min = grid[lo..]
        .iter()
        .map(|&s| margin(s))
        .fold(f_right, f64::min);
    let p = 0.5 * grid_min;

    // Re-check on a ten times finer grid.
    let fine = 10 * S2_GRID;
    for k in 0..=fine {
        let s = s_plus + (sc.s_i - s_plus) * k as f64 / fine as f64;
        if margin(s) < p {
            return Err(violated(s));
        }
    }

    let x1_plus = (s_plus * sc.c / (sc.s_i - s_plus)).ln();
    let x1_star = select_x1_star(sc, p, x1_plus)?;
    Ok(S2Certificate {
        s_plus,
        p,
        x1_plus,
        x1_star,
    })
}

/// Slack of the three threshold inequalities at `x1` (all must be ≥ 0).
fn threshold_slacks(sc: &ChemostatScenario, p: f64, x1: f64) -> [f64; 3] {
    let mu = sc.mu_tilde(x1);
    [
        p - sc.a * sc.beta(x1),
        sc.k * mu - sc.m - p,
        mu - sc.b - 2.0 * p,
    ]
}

fn select_x1_star(sc: &ChemostatScenario, p: f64, x1_plus: f64) -> Result<f64, ChemostatError> {
    let n = S2_GRID;
    let h = -x1_plus / n as f64;
    let xs: Vec<f64> = (0..=n).map(|k| x1_plus + k as f64 * h).collect();
    let slacks: Vec<[f64; 3]> = xs.iter().map(|&x| threshold_slacks(sc, p, x)).collect();

    // Lipschitz constants of the slacks on the grid.
    let mut lip = [0.0f64; 3];
    for w in slacks.windows(2) {
        for j in 0..3 {
            lip[j] = lip[j].max((w[1][j] - w[0][j]).abs() / h);
        }
    }
    let need: Vec<f64> = lip.iter().map(|l| LIPSCHITZ_SAFETY * l * h * 0.5).collect();
    let ok = |k: usize| (0..3).all(|j| slacks[k][j] >= need[j]);

    // Walk down from x1 = 0 while every point certifies with margin.
    let mut j = n;
    while j > 0 && ok(j - 1) {
        j -= 1;
    }
    if !ok(n) {
        return Err(ChemostatError::NoX1Star {
            x1_plus,
            reason: "threshold inequalities fail at x1 = 0",
        });
    }
    // one cell inward; must remain strictly negative
    let idx = j + 1;
    if idx >= n {
        return Err(ChemostatError::NoX1Star {
            x1_plus,
            reason: "feasible set narrower than two grid cells",
        });
    }
    Ok(xs[idx])
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn haldane() -> GrowthModel {
        GrowthModel::haldane(75.0, 100.0, 0.025).unwrap()
    }

    fn demo() -> ChemostatScenario {
        let params = ChemostatParams {
            s_i: 1000.0,
            k: 2.0,
            b: 0.1,
            m: 0.2,
            a: 0.05,
            growth: haldane(),
        };
        ChemostatScenario::from_substrate(&params, 506.72).unwrap()
    }

    #[test]
    fn haldane_value_matches_direct_formula() {
        let s: f64 = 506.72;
        let oracle = 75.0 * s / (100.0 + s + 0.025 * s * s);
        assert_eq!(growth_rate(&haldane(), s), oracle);
        assert!((oracle - 5.409).abs() < 1e-3);
    }

    #[test]
    fn rate_is_zero_off_domain() {
        assert_eq!(haldane().rate(-1.0), 0.0);
        assert_eq!(GrowthModel::monod(2.0, 3.0).unwrap().rate(0.0), 0.0);
    }

    #[test]
    fn monod_half_saturation() {
        let g = GrowthModel::monod(2.0, 3.0).unwrap();
        assert!((g.rate(3.0) - 1.0).abs() < 1e-15);
        assert_eq!(g.mu_max(), 2.0);
    }

    #[test]
    fn mu_max_dominates_dense_scan() {
        let models = [
            haldane(),
            GrowthModel::monod(1.5, 2.0).unwrap(),
            GrowthModel::generalized_haldane(3.0, 5.0, 0.01, 3.0).unwrap(),
            GrowthModel::generalized_haldane(3.0, 5.0, 0.5, 1.0).unwrap(),
        ];
        for g in models {
            let scan = (1..200_000)
                .map(|k| g.rate(k as f64 * 0.05))
                .fold(0.0, f64::max);
            assert!(scan <= g.mu_max() * (1.0 + 1e-12), "{g:?}");
            if g.peak().is_some() {
                assert!(scan >= g.mu_max() * (1.0 - 1e-6), "{g:?}");
            }
        }
        let h = haldane();
        assert!((h.mu_max() - 75.0 / (1.0 + 2.0 * (100.0f64 * 0.025).sqrt())).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_without_losses() {
        let params = ChemostatParams {
            s_i: 1000.0,
            k: 2.0,
            b: 0.0,
            m: 0.0,
            a: 0.0,
            growth: haldane(),
        };
        let d_s = haldane().rate(506.72);
        let sc = solve_equilibrium(&params, d_s, BranchHint::Descending).unwrap();
        assert!((sc.s_s - 506.72).abs() < 1e-6);
        assert!((sc.x_s - (sc.s_i - sc.s_s) / sc.k).abs() < 1e-9);

        let asc = solve_equilibrium(&params, d_s, BranchHint::Ascending).unwrap();
        assert!(asc.s_s < haldane().peak().unwrap());
        assert!((haldane().rate(asc.s_s) - d_s).abs() < 1e-10);
    }

    #[test]
    fn monod_closed_form_inversion() {
        let g = GrowthModel::monod(1.0, 2.0).unwrap();
        let params = ChemostatParams {
            s_i: 10.0,
            k: 1.0,
            b: 0.1,
            m: 0.0,
            a: 0.0,
            growth: g,
        };
        let sc = solve_equilibrium(&params, 0.4, BranchHint::Descending).unwrap();
        let oracle = 2.0 * 0.5 / (1.0 - 0.5);
        assert!((sc.s_s - oracle).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_errors() {
        let mut params = demo().params();
        assert_eq!(
            solve_equilibrium(&params, 100.0, BranchHint::Descending),
            Err(ChemostatError::NoEquilibrium { target: 100.1 })
        );
        params.m = 100.0;
        assert!(matches!(
            solve_equilibrium(&params, 1.0, BranchHint::Descending),
            Err(ChemostatError::NonPositiveYieldTerm(_))
        ));
    }

    #[test]
    fn demo_constants() {
        let sc = demo();
        assert!((sc.c - (1000.0 / 506.72 - 1.0)).abs() < 1e-15);
        assert!((sc.g - sc.d_s / (2.0 * (sc.d_s + 0.1) - 0.2)).abs() < 1e-15);
        sc.validate().unwrap();
    }

    #[test]
    fn equilibrium_is_fixed_in_both_coordinates() {
        let sc = demo();
        for (d1, d2) in [(0.0, 0.0), (0.05, 0.0), (0.0, 0.05), (0.05, 0.05)] {
            let [a, b] = sc.transformed_rhs(0.0, 0.0, 0.0, d1, d2).unwrap();
            assert!(a.abs() < 1e-12 && b.abs() < 1e-12);
            let (dx, ds) = sc.physical_rhs(sc.x_s, sc.s_s, sc.d_s, d1, d2).unwrap();
            assert!(dx.abs() < 1e-9 && ds.abs() < 1e-9);
        }
        let (x1, x2) = sc.to_transformed(sc.x_s, sc.s_s).unwrap();
        assert!(x1.abs() < 1e-14 && x2.abs() < 1e-14);
    }

    #[test]
    fn uncertainty_sign_structure() {
        let sc = demo();
        assert_eq!(sc.uncertainty(sc.s_s, 0.05, 0.05), 0.0);
        assert!(sc.uncertainty(600.0, 0.01, 0.05) >= 0.0);
        assert_eq!(sc.uncertainty(600.0, 0.0, 0.05), 0.0);
        assert!(sc.uncertainty(100.0, 0.0, 0.05) <= 0.0);
    }

    #[test]
    fn nominal_model_rates() {
        let mut p = demo().params();
        p.b = 0.0;
        p.m = 0.0;
        let sc = ChemostatScenario::from_substrate(&p, 506.72).unwrap();
        let (x, s, dil) = (100.0, 300.0, 2.0);
        let (dx, ds) = sc.physical_rhs(x, s, dil, 0.0, 0.0).unwrap();
        let mu = sc.mu(s);
        assert_eq!(dx, (mu - dil) * x);
        assert_eq!(ds, dil * (sc.s_i - s) - sc.k * mu * x);
    }

    #[test]
    fn domain_errors() {
        let sc = demo();
        assert!(sc.physical_rhs(0.0, 10.0, 1.0, 0.0, 0.0).is_err());
        assert!(sc.physical_rhs(1.0, 1000.0, 1.0, 0.0, 0.0).is_err());
        assert!(sc.to_transformed(1.0, -1.0).is_err());
        assert!(matches!(
            sc.transformed_rhs(0.0, 0.0, -sc.d_s - 1e-9, 0.0, 0.0),
            Err(ChemostatError::InputConstraint { .. })
        ));
    }

    #[test]
    fn transform_is_monotone_towards_feed() {
        let sc = demo();
        let xs: Vec<f64> = [900.0, 990.0, 999.0, 999.99]
            .iter()
            .map(|&s| sc.to_transformed(10.0, s).unwrap().0)
            .collect();
        assert!(xs.windows(2).all(|w| w[1] > w[0]));
        assert!(xs[3] > 10.0);
    }

    #[test]
    fn pushforward_matches_physical_flow() {
        // Chain rule by central differences of the transform along the flow.
        let sc = demo();
        let states = [(50.0, 100.0), (300.0, 506.0), (10.0, 900.0), (700.0, 20.0)];
        let (d1, d2, dil) = (0.03, 0.02, 4.0);
        for (x, s) in states {
            let (dx, ds) = sc.physical_rhs(x, s, dil, d1, d2).unwrap();
            let h = 1e-6 / (dx.abs() / x + ds.abs() / s.min(sc.s_i - s)).max(1e-3);
            let (a1, a2) = sc.to_transformed(x + h * dx, s + h * ds).unwrap();
            let (b1, b2) = sc.to_transformed(x - h * dx, s - h * ds).unwrap();
            let fd = [(a1 - b1) / (2.0 * h), (a2 - b2) / (2.0 * h)];
            let (x1, x2) = sc.to_transformed(x, s).unwrap();
            let rhs = sc.transformed_rhs(x1, x2, dil - sc.d_s, d1, d2).unwrap();
            for j in 0..2 {
                assert!(
                    (fd[j] - rhs[j]).abs() <= 1e-6 * (1.0 + rhs[j].abs()),
                    "state {x},{s} component {j}: {} vs {}",
                    fd[j],
                    rhs[j]
                );
            }
        }
    }

    #[test]
    fn s2_demo_certificate_holds_on_fine_grid() {
        let sc = demo();
        let cert = check_s2(&sc).unwrap();
        assert!(cert.s_plus > 0.0 && cert.s_plus < sc.s_s);
        assert!(cert.p > 0.0);
        assert!(cert.x1_plus <= cert.x1_star && cert.x1_star < 0.0);
        for k in 0..=50_000 {
            let s = cert.s_plus + (sc.s_i - cert.s_plus) * k as f64 / 50_000.0;
            let mu = sc.mu(s);
            assert!(sc.k * mu - sc.m >= cert.p);
            assert!(mu - sc.b >= 2.0 * cert.p);
        }
        // threshold inequalities on x1 >= x1_star, including far right
        for k in 0..=20_000 {
            let x1 = cert.x1_star + k as f64 * 1e-3;
            let mu = sc.mu_tilde(x1);
            let lhs = sc.a * sc.c * sc.s_s * (1.0 - x1.exp()).max(0.0) / (sc.c + x1.exp());
            assert!(lhs <= cert.p, "x1 = {x1}");
            assert!(sc.k * mu - sc.m >= cert.p);
            assert!(mu - sc.b >= 2.0 * cert.p);
        }
    }

    #[test]
    fn s2_monod_lossless_matches_grid_min() {
        let g = GrowthModel::monod(1.0, 2.0).unwrap();
        let params = ChemostatParams {
            s_i: 10.0,
            k: 1.0,
            b: 0.0,
            m: 0.0,
            a: 0.0,
            growth: g,
        };
        let sc = solve_equilibrium(&params, 0.5, BranchHint::Ascending).unwrap();
        let cert = check_s2(&sc).unwrap();
        let oracle = (1..=S2_GRID)
            .map(|k| 10.0 * k as f64 / S2_GRID as f64)
            .filter(|&s| s >= cert.s_plus)
            .map(|s| g.rate(s).min(0.5 * g.rate(s)))
            .fold(f64::INFINITY, f64::min);
        assert!((cert.p - 0.5 * oracle).abs() < 1e-12);
        // a = 0: only the two growth inequalities bound x1_star
        let mu_star = sc.mu_tilde(cert.x1_star);
        assert!(mu_star >= 2.0 * cert.p);
        assert!(cert.x1_star <= cert.x1_plus + 2.0 * (-cert.x1_plus) / S2_GRID as f64 + 1e-12);
    }

    #[test]
    fn s2_fails_when_mortality_exceeds_growth() {
        let mut p = demo().params();
        p.b = 0.1;
        let sc = ChemostatScenario::from_substrate(&p, 506.72).unwrap();
        let bad = ChemostatScenario {
            b: sc.growth.mu_max() + 1.0,
            ..sc
        };
        match check_s2(&bad) {
            Err(ChemostatError::S2Violated { inequality, .. }) => {
                assert_eq!(inequality, INEQ_GROWTH)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn transform_round_trip(x in 1e-3f64..1e4, frac in 1e-6f64..(1.0 - 1e-6)) {
                let sc = demo();
                let s = frac * sc.s_i;
                let (x1, x2) = sc.to_transformed(x, s).unwrap();
                let (xb, sb) = sc.from_transformed(x1, x2);
                prop_assert!(((xb - x) / x).abs() < 1e-12);
                prop_assert!(((sb - s) / s).abs() < 1e-12);
            }

            #[test]
            fn field_is_affine_in_disturbance(
                x1 in -8.0f64..8.0, x2 in -8.0f64..8.0, u in 0.0f64..20.0,
                d1 in 0.0f64..0.05, d2 in 0.0f64..0.05,
            ) {
                let sc = demo();
                let f0 = sc.field(x1, x2, u, 0.0, 0.0);
                let f = sc.field(x1, x2, u, d1, d2);
                prop_assert!(sc.alpha(x1) >= 0.0 && sc.beta(x1) >= 0.0);
                prop_assert_eq!(f[0], f0[0]);
                let lin = f0[1] + d1 * sc.alpha(x1) - d2 * sc.beta(x1);
                prop_assert!((f[1] - lin).abs() <= 1e-12 * (1.0 + f[1].abs()));
            }

            #[test]
            fn alpha_matches_definition(x1 in -30.0f64..30.0) {
                let sc = demo();
                let e = x1.exp();
                let oracle = sc.c * sc.s_s * (e - 1.0).abs() / (sc.c + e);
                prop_assert!((sc.alpha(x1) - oracle).abs() <= 1e-12 * (1.0 + oracle));
                let oracle_b = sc.c * sc.s_s * (1.0 - e).max(0.0) / (sc.c + e);
                prop_assert!((sc.beta(x1) - oracle_b).abs() <= 1e-12 * (1.0 + oracle_b));
            }
        }
    }
}
