//! Causal digital twins for multichannel sensor data.
//!
//! The crate fits a structural vector autoregression
//!
//! ```text
//! y_t = S0 y_t + sum_{d=1..D} Sd y_{t-d} + e_t
//! ```
//!
//! to a vector time series, separating contemporaneous ("structural") causal
//! factors `S0` from lagged, generalized Granger factors `Sd`. Estimation runs
//! in four stages: a reduced-form VAR fit, its residuals, FastICA + LiNGAM on
//! those residuals to recover `S0`, and the correction `Sd = (I - S0) Md`.
//!
//! Fitted models can be rendered as fence graphs (DOT/JSON) and used to
//! simulate interventions.

pub mod error;
pub mod fence_graph;
pub mod ica_lingam;
pub mod linalg;
pub mod simulate;
pub mod svar;
pub mod timeseries;
pub mod var;

pub use error::{Error, Result};
pub use fence_graph::{build_fence_graph, Column, DotStyle, EdgeKind, EdgeSign, FenceGraph};
pub use ica_lingam::{
    fastica, lingam_from_ica, prune_to_dag, whiten, Contrast, IcaConfig, IcaResult, Strategy,
    StructuralMatrix,
};
pub use simulate::{
    apply_intervention, counterfactual_report, simulate_svar, CounterfactualReport, Intervention,
    InterventionKind, NoiseFamily, NoiseSpec, Scenario,
};
pub use svar::{
    causal_factors, corrected_lagged, fit_svar, load_model, save_model, CausalFactors, SvarConfig,
    SvarModel, VarMethod,
};
pub use timeseries::{autocorrelation, load_csv, standardize, CsvOptions, MultichannelSeries};
pub use var::{
    fit_var_kalman, fit_var_ols, pairwise_granger, residuals, yule_walker_ar2, GrangerResult,
    KalmanConfig, VarModel,
};
