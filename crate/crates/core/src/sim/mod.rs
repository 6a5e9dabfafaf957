//! Simulation scenarios, evaluation metrics, bootstrap and experiment runners.

pub mod bootstrap;
pub mod metrics;
pub mod runner;
pub mod scenario;

pub use bootstrap::{bootstrap_ci, percentile_ranks, BootstrapTable, CiRow};
pub use metrics::{
    adjusted_rand_index, align_components, clustering_metrics, label_alignment, parameter_metrics,
    rmse_against, rmse_mean_function, ClusterMetrics, ParameterError,
};
pub use runner::{format_f64, run_scenario, Record, RunOptions, ScenarioOutput, SCENARIOS};
pub use scenario::{
    generate, scenario2_spec, table1_spec, three_component_spec, CovariateDesign, ExpertFamily,
    ScenarioSpec, TrueModel,
};
