//! TOML scenario files.
//!
//! ```toml
//! master_seed = 42
//! output_dir = "out"
//!
//! [growth]
//! kind = "haldane"
//! mu_max_scale = 75.0
//! k1 = 100.0
//! k2 = 0.025
//!
//! [chemostat]
//! s_i = 1000.0
//! k = 2.0
//! b = 0.1
//! m = 0.2          # or m_relative = -0.01 for m = m_relative·K·D_s
//! s_s = 506.72     # or d_s = ...
//!
//! [uncertainty]
//! a = 0.05
//! sweep = [0.0, 0.05, 0.5, 5.0]
//!
//! [feedback]
//! family = "relaxed"
//! lambda = 1.0
//! l0 = 1.0
//! ```
//!
//! `[integrator]` and `[harness]` are optional and fall back to defaults.
//! Each section is decoded on its own so errors name the section.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chemostat::{
    solve_equilibrium, BranchHint, ChemostatError, ChemostatParams, ChemostatScenario, GrowthModel,
};
use crate::dynamics::Stage;
use crate::feedback::{FeedbackError, FeedbackLaw, PlanarExample};
use crate::harness::{BackstepConfig, PlanarConfig, UrgasConfig, WashoutConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("TOML syntax error: {0}")]
    Syntax(String),
    #[error("missing section [{0}]")]
    MissingSection(&'static str),
    #[error("in [{section}]: {message}")]
    Section {
        section: &'static str,
        message: String,
    },
    #[error("in [{section}]: key `{key}` {reason}")]
    Invalid {
        section: &'static str,
        key: &'static str,
        reason: String,
    },
    #[error("unknown top-level key or section `{0}`")]
    UnknownKey(String),
}

impl ConfigError {
    fn invalid(section: &'static str, key: &'static str, reason: impl Into<String>) -> Self {
        Self::Invalid {
            section,
            key,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChemostatSection {
    pub s_i: f64,
    pub k: f64,
    #[serde(default)]
    pub b: f64,
    pub m: Option<f64>,
    pub m_relative: Option<f64>,
    pub s_s: Option<f64>,
    pub d_s: Option<f64>,
    #[serde(default)]
    pub branch: BranchHint,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySection {
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub sweep: Vec<f64>,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn two_stages() -> usize {
    2
}

/// Feedback selection. Chemostat families map onto [`FeedbackLaw`]; the
/// last two select the triangular and planar examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeedbackSection {
    Relaxed {
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default = "one")]
        l0: f64,
    },
    /// `x1_star` and `M` come from constant synthesis.
    Rclf {
        #[serde(default = "one")]
        w_weight: f64,
    },
    Classical {
        phi_slope: f64,
        #[serde(default)]
        q_gain: f64,
    },
    Mailleret,
    Backstepping {
        #[serde(default = "two_stages")]
        n: usize,
        disturbance_width: f64,
        #[serde(default = "two")]
        eta_factor: f64,
    },
    Constrained {
        #[serde(default = "one")]
        a_limit: f64,
        eps: f64,
        delta: f64,
        k: f64,
    },
}

impl Default for FeedbackSection {
    fn default() -> Self {
        Self::Relaxed {
            lambda: 1.0,
            l0: 1.0,
        }
    }
}

/// How single runs draw their disturbance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceMode {
    /// Seeded piecewise-constant draw from the disturbance box.
    #[default]
    Sampled,
    /// `d ≡ 0`.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSection {
    pub horizon: f64,
    pub step: f64,
    pub switch_dt: f64,
    pub warmup: Vec<Stage>,
    /// Initial state in log coordinates.
    pub x0: Option<Vec<f64>>,
    /// Initial state `(X, S)`; converted when given instead of `x0`.
    pub x0_physical: Option<[f64; 2]>,
    pub record_stride: usize,
    pub disturbance: DisturbanceMode,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        let u = UrgasConfig::default();
        Self {
            horizon: u.horizon,
            step: u.step,
            switch_dt: u.switch_dt,
            warmup: u.warmup,
            x0: None,
            x0_physical: None,
            record_stride: 1,
            disturbance: DisturbanceMode::Sampled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessSection {
    pub trials: usize,
    pub init_radius: f64,
    pub eps_levels: Vec<f64>,
    pub delta_probe_trials: usize,
    pub delta_bisection_iters: usize,
    pub converge_tol: f64,
    pub entry_trials: usize,
    pub grid: usize,
}

impl Default for HarnessSection {
    fn default() -> Self {
        let u = UrgasConfig::default();
        Self {
            trials: u.trials,
            init_radius: u.init_radius,
            eps_levels: u.eps_levels,
            delta_probe_trials: u.delta_probe_trials,
            delta_bisection_iters: u.delta_bisection_iters,
            converge_tol: u.converge_tol,
            entry_trials: 100,
            grid: crate::certify::DEFAULT_GRID,
        }
    }
}

/// A parsed scenario file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub master_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub growth: Option<GrowthModel>,
    pub chemostat: Option<ChemostatSection>,
    pub uncertainty: UncertaintySection,
    pub feedback: FeedbackSection,
    pub integrator: IntegratorSection,
    pub harness: HarnessSection,
}

const SECTIONS: [&str; 6] = [
    "growth",
    "chemostat",
    "uncertainty",
    "feedback",
    "integrator",
    "harness",
];

fn section<T: DeserializeOwned>(
    table: &toml::Table,
    name: &'static str,
) -> Result<Option<T>, ConfigError> {
    match table.get(name) {
        None => Ok(None),
        Some(toml::Value::Table(t)) => {
            t.clone()
                .try_into()
                .map(Some)
                .map_err(|e: toml::de::Error| ConfigError::Section {
                    section: name,
                    message: e.message().to_string(),
                })
        }
        Some(_) => Err(ConfigError::Section {
            section: name,
            message: "expected a table".into(),
        }),
    }
}

fn finite_positive(section: &'static str, key: &'static str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::invalid(
            section,
            key,
            format!("must be positive, got {v}"),
        ))
    }
}

impl ScenarioConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        for key in table.keys() {
            if !SECTIONS.contains(&key.as_str()) && key != "master_seed" && key != "output_dir" {
                return Err(ConfigError::UnknownKey(key.clone()));
            }
        }
        let master_seed = match table.get("master_seed") {
            None => 42,
            Some(toml::Value::Integer(i)) if *i >= 0 => *i as u64,
            Some(v) => {
                return Err(ConfigError::Syntax(format!(
                    "master_seed must be a non-negative integer, got {v}"
                )))
            }
        };
        let output_dir = match table.get("output_dir") {
            None => None,
            Some(toml::Value::String(s)) => Some(PathBuf::from(s)),
            Some(v) => {
                return Err(ConfigError::Syntax(format!(
                    "output_dir must be a string, got {v}"
                )))
            }
        };
        let growth: Option<GrowthModel> = section(&table, "growth")?;
        let growth = growth
            .map(|g| {
                g.validated().map_err(|e| ConfigError::Section {
                    section: "growth",
                    message: e.to_string(),
                })
            })
            .transpose()?;
        let cfg = Self {
            master_seed,
            output_dir,
            growth,
            chemostat: section(&table, "chemostat")?,
            uncertainty: section(&table, "uncertainty")?.unwrap_or_default(),
            feedback: section(&table, "feedback")?
                .ok_or(ConfigError::MissingSection("feedback"))?,
            integrator: section(&table, "integrator")?.unwrap_or_default(),
            harness: section(&table, "harness")?.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let i = &self.integrator;
        finite_positive("integrator", "horizon", i.horizon)?;
        finite_positive("integrator", "step", i.step)?;
        finite_positive("integrator", "switch_dt", i.switch_dt)?;
        if i.x0.is_some() && i.x0_physical.is_some() {
            return Err(ConfigError::invalid(
                "integrator",
                "x0_physical",
                "conflicts with x0",
            ));
        }
        let h = &self.harness;
        finite_positive("harness", "init_radius", h.init_radius)?;
        finite_positive("harness", "converge_tol", h.converge_tol)?;
        if h.trials == 0 {
            return Err(ConfigError::invalid(
                "harness",
                "trials",
                "must be at least 1",
            ));
        }
        if h.grid < 2 {
            return Err(ConfigError::invalid(
                "harness",
                "grid",
                "must be at least 2",
            ));
        }
        let a = self.uncertainty.a;
        if !(a >= 0.0) || !a.is_finite() {
            return Err(ConfigError::invalid(
                "uncertainty",
                "a",
                format!("must be non-negative, got {a}"),
            ));
        }
        if self
            .uncertainty
            .sweep
            .iter()
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return Err(ConfigError::invalid(
                "uncertainty",
                "sweep",
                "values must be non-negative",
            ));
        }
        if let Some(c) = &self.chemostat {
            if c.m.is_some() && c.m_relative.is_some() {
                return Err(ConfigError::invalid(
                    "chemostat",
                    "m_relative",
                    "conflicts with m",
                ));
            }
            match (c.s_s, c.d_s) {
                (Some(_), Some(_)) => {
                    return Err(ConfigError::invalid(
                        "chemostat",
                        "d_s",
                        "conflicts with s_s",
                    ))
                }
                (None, None) => {
                    return Err(ConfigError::invalid(
                        "chemostat",
                        "s_s",
                        "one of s_s or d_s is required",
                    ))
                }
                _ => {}
            }
        }
        match self.feedback {
            FeedbackSection::Relaxed { lambda, l0 } => {
                FeedbackLaw::relaxed(lambda, l0).map_err(|e| feedback_err(&e))?;
            }
            FeedbackSection::Classical { phi_slope, q_gain } => {
                FeedbackLaw::classical(phi_slope, q_gain).map_err(|e| feedback_err(&e))?;
            }
            FeedbackSection::Rclf { w_weight } => {
                finite_positive("feedback", "w_weight", w_weight)?
            }
            FeedbackSection::Backstepping {
                n,
                disturbance_width,
                eta_factor,
            } => {
                if n == 0 {
                    return Err(ConfigError::invalid("feedback", "n", "must be at least 1"));
                }
                finite_positive("feedback", "disturbance_width", disturbance_width)?;
                if !(eta_factor > 1.0) {
                    return Err(ConfigError::invalid(
                        "feedback",
                        "eta_factor",
                        "must exceed 1",
                    ));
                }
            }
            FeedbackSection::Constrained {
                a_limit,
                eps,
                delta,
                k,
            } => {
                finite_positive("feedback", "a_limit", a_limit)?;
                if !(eps > 0.0 && eps < a_limit) {
                    return Err(ConfigError::invalid(
                        "feedback",
                        "eps",
                        "must lie in (0, a_limit)",
                    ));
                }
                finite_positive("feedback", "delta", delta)?;
                if !(k >= 0.0) {
                    return Err(ConfigError::invalid(
                        "feedback",
                        "k",
                        "must be non-negative",
                    ));
                }
            }
            FeedbackSection::Mailleret => {}
        }
        Ok(())
    }

    fn growth_or_err(&self) -> Result<GrowthModel, ConfigError> {
        self.growth.ok_or(ConfigError::MissingSection("growth"))
    }

    /// Operating point with the configured uncertainty magnitude.
    pub fn scenario(&self) -> Result<ChemostatScenario, ConfigError> {
        let growth = self.growth_or_err()?;
        let c = self
            .chemostat
            .ok_or(ConfigError::MissingSection("chemostat"))?;
        let chem = |e: ChemostatError| ConfigError::Section {
            section: "chemostat",
            message: e.to_string(),
        };
        let mut params = ChemostatParams {
            s_i: c.s_i,
            k: c.k,
            b: c.b,
            m: c.m.unwrap_or(0.0),
            a: self.uncertainty.a,
            growth,
        };
        let s_s = match (c.s_s, c.d_s) {
            (Some(s), _) => s,
            (None, Some(d)) => solve_equilibrium(&params, d, c.branch).map_err(chem)?.s_s,
            (None, None) => unreachable!("validated"),
        };
        if let Some(rel) = c.m_relative {
            let d_s = params.growth.rate(s_s) - params.b;
            params.m = rel * params.k * d_s;
        }
        ChemostatScenario::from_substrate(&params, s_s).map_err(chem)
    }

    /// Chemostat law for the configured family; `rclf` needs constants and
    /// is built by the caller.
    pub fn chemostat_law(&self) -> Result<Option<FeedbackLaw>, ConfigError> {
        Ok(match self.feedback {
            FeedbackSection::Relaxed { lambda, l0 } => {
                Some(FeedbackLaw::relaxed(lambda, l0).map_err(|e| feedback_err(&e))?)
            }
            FeedbackSection::Classical { phi_slope, q_gain } => {
                Some(FeedbackLaw::classical(phi_slope, q_gain).map_err(|e| feedback_err(&e))?)
            }
            FeedbackSection::Mailleret => Some(FeedbackLaw::Mailleret),
            _ => None,
        })
    }

    pub fn urgas_config(&self) -> UrgasConfig {
        let (i, h) = (&self.integrator, &self.harness);
        UrgasConfig {
            trials: h.trials,
            init_radius: h.init_radius,
            horizon: i.horizon,
            step: i.step,
            switch_dt: i.switch_dt,
            master_seed: self.master_seed,
            eps_levels: h.eps_levels.clone(),
            warmup: i.warmup.clone(),
            delta_probe_trials: h.delta_probe_trials,
            delta_bisection_iters: h.delta_bisection_iters,
            converge_tol: h.converge_tol,
        }
    }

    pub fn washout_config(&self) -> WashoutConfig {
        let (lambda, l0) = match self.feedback {
            FeedbackSection::Relaxed { lambda, l0 } => (lambda, l0),
            _ => (1.0, 1.0),
        };
        WashoutConfig {
            horizon: self.integrator.horizon,
            relaxed_lambda: lambda,
            relaxed_l0: l0,
            ..WashoutConfig::default()
        }
    }

    pub fn backstep_config(&self) -> Result<BackstepConfig, ConfigError> {
        let FeedbackSection::Backstepping {
            n,
            disturbance_width,
            eta_factor,
        } = self.feedback
        else {
            return Err(ConfigError::invalid(
                "feedback",
                "family",
                "must be `backstepping`",
            ));
        };
        let (i, h) = (&self.integrator, &self.harness);
        Ok(BackstepConfig {
            n,
            disturbance_width,
            eta_factor,
            trials: h.trials,
            init_radius: h.init_radius,
            horizon: i.horizon,
            step: i.step,
            switch_dt: i.switch_dt,
            master_seed: self.master_seed,
            converge_tol: h.converge_tol,
            record_stride: i.record_stride.max(1),
        })
    }

    pub fn planar_example(&self) -> Result<PlanarExample, ConfigError> {
        let FeedbackSection::Constrained {
            a_limit,
            eps,
            delta,
            k,
        } = self.feedback
        else {
            return Err(ConfigError::invalid(
                "feedback",
                "family",
                "must be `constrained`",
            ));
        };
        Ok(PlanarExample {
            a_limit,
            eps,
            delta,
            k,
        })
    }

    pub fn planar_config(&self) -> PlanarConfig {
        PlanarConfig {
            horizon: self.integrator.horizon,
            step: self.integrator.step,
            converge_tol: self.harness.converge_tol,
            ..PlanarConfig::default()
        }
    }

    /// Initial state in log coordinates, converting `x0_physical` if given.
    pub fn initial_state(&self, sc: &ChemostatScenario) -> Result<[f64; 2], ConfigError> {
        if let Some(x) = &self.integrator.x0 {
            if x.len() != 2 {
                return Err(ConfigError::invalid(
                    "integrator",
                    "x0",
                    "needs two entries",
                ));
            }
            return Ok([x[0], x[1]]);
        }
        if let Some([xb, s]) = self.integrator.x0_physical {
            let (x1, x2) = sc.to_transformed(xb, s).map_err(|e| ConfigError::Section {
                section: "integrator",
                message: e.to_string(),
            })?;
            return Ok([x1, x2]);
        }
        Ok([1.0, -1.0])
    }
}

fn feedback_err(e: &FeedbackError) -> ConfigError {
    ConfigError::Section {
        section: "feedback",
        message: e.to_string(),
    }
}
