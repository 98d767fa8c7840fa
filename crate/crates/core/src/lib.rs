//! Mixed-effects meta-regression with REML heterogeneity estimation and
//! Knapp-Hartung inference, plus a seeded Monte Carlo lab for studying
//! omitted and redundant moderators.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod effects;
pub mod error;
pub mod estimation;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod simulation;
pub mod special;
pub mod synthetic;

pub use effects::{expit, logit, logit_effect, EffectData};
pub use error::{Error, Result};
pub use estimation::{
    dl_tau2, fit_design, fit_model, reml_tau2, restricted_loglik, wls_fit, Convergence, FitResult,
    FitSettings, RemlSettings,
};
pub use inference::{
    confidence_intervals, kh_scale, predict_at, t_quantile, ConfidenceInterval, KnappHartung,
    PredictionBand,
};
pub use model::{
    build_design, column_medians, Centering, Dataset, DesignMatrix, ModelSpec, StudyRecord,
};
pub use rng::{SeedSpec, Stream};
pub use simulation::{generate_replicate, run_simulation, Scenario, SimDesign, SimulationSummary};
