//! Relaxed robust control Lyapunov designs: chemostat stabilizers, grid
//! certificates for the underlying Lyapunov inequalities, saturated
//! backstepping, and a Monte-Carlo stability harness.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod chemostat;
pub mod config;
pub mod dynamics;
pub mod feedback;
pub mod harness;
pub mod report;

pub use certify::{
    synthesize_rclf_constants, verify_rclf_derivative, verify_relaxed_conditions,
    CertificateReport, CertifyError, RclfConstants,
};
pub use chemostat::{
    BranchHint, ChemostatError, ChemostatParams, ChemostatScenario, GrowthKind, GrowthModel,
    S2Certificate,
};
pub use config::{ConfigError, DisturbanceMode, ScenarioConfig};
pub use dynamics::{
    integrate_rk4, integrate_staged, sample_disturbance, sat, CompactBox, DisturbanceSignal,
    DynamicsError, Stage, Trajectory,
};
pub use feedback::{FeedbackError, FeedbackLaw, LSpec, PsiSpec, RclfFeedbackParams};
pub use harness::{
    BackstepConfig, BackstepReport, EntryReport, HarnessError, PlanarConfig, PlanarReport,
    SweepReport, UrgasConfig, UrgasReport, WashoutConfig, WashoutReport,
};
