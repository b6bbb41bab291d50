//! Sensitivity analysis for unmeasured confounding via effect extrapolation.
//!
//! The engine estimates a marginal exposure effect by doubly robust
//! standardization, probes how that effect changes as measured covariates are
//! intentionally eliminated from adjustment one at a time, perturbs the
//! elimination process to express sampling uncertainty, and extrapolates the
//! resulting effect trajectories to hypothetical additional confounders with
//! natural cubic splines.
//!
//! Modules mirror the pipeline stages:
//!
//! - [`data`]: observation tables, column typing, CSV ingestion and output.
//! - [`glm`]: IRLS model fitting (logit, probit, Gaussian) with coefficient
//!   sampling from the asymptotic distribution.
//! - [`estimator`]: the doubly robust effect, influence values, variances and
//!   the debiased squared gap.
//! - [`elimination`]: greedy covariate-elimination trajectories.
//! - [`perturbation`]: ensembles of coefficient-perturbed trajectories.
//! - [`extrapolation`]: natural cubic spline fits, knot cross-validation and
//!   uncertainty intervals at extrapolation horizons.
//! - [`simulation`]: data-generating processes and the replicate harness used
//!   to check the pipeline's statistical properties.

pub mod data;
pub mod elimination;
pub mod estimator;
pub mod extrapolation;
pub mod glm;
pub mod perturbation;
pub mod seeds;
pub mod simulation;

mod special;

pub use data::{load_csv, write_table, ColumnRole, ColumnSpec, Dataset, LoadedData, OutcomeKind};
pub use elimination::{build_trajectory, FitCache, Trajectory, TrajectoryMode, TrajectoryOptions};
pub use estimator::{
    debiased_gap, dr_effect, exposure_weights, variance_of_difference, OrbitEstimate, OrbitModels,
};
pub use extrapolation::{
    extrapolate_ensemble, fit_natural_spline, select_knots_cv, ExtrapolationResult, SplineFit,
    UncertaintyInterval,
};
pub use glm::{fit_glm, predict_mean, sample_coefficients, Family, ModelFit};
pub use perturbation::{build_ensemble, build_ensemble_with, EnsembleOptions, TrajectoryEnsemble};
pub use simulation::{
    designate_unmeasured, generate_population, generate_population_with, run_study, ExposureLink,
    MethodSummary, Scenario, SimReport, Study,
};
