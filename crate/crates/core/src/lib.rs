//! Shifted asymmetric Laplace mixtures of experts.

pub mod error;
pub mod expert;
pub mod fit;
pub mod gating;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod sal;
pub mod select;
pub mod sim;

pub use error::{Result, SalMoeError};
pub use expert::{Expert, GaussianExpert, SkewNormalExpert};
pub use fit::{em_mm_fit, fit, gmoe_fit, gmoe_fit_from, FitConfig, FitReport};
pub use gating::{GatingDesign, GatingParams, ResponsibilityMatrix};
pub use model::{Dataset, GaussianMoeModel, MoeModel, Prediction, SalMoeModel, SkewNormalMoeModel};
pub use sal::{gig_log_density, gig_moments, sal_log_density, sal_sample, GigArgs, SalParams};
pub use select::{
    bic, degrees_of_freedom, icl, panic, panic_alpha, sweep_k, IcRow, IcTable, SweepConfig,
};
pub use sim::{
    bootstrap_ci, format_f64, run_scenario, BootstrapTable, RunOptions, ScenarioOutput,
    ScenarioSpec,
};
