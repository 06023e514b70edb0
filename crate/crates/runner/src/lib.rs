//! Experiment orchestration for the unlearning lab: configs, the six
//! experiment modes, seeded panels and deterministic CSV/JSON outputs.

pub mod config;
mod context;
mod experiment;
pub mod output;
mod record;

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig, InterventionModel, MethodEntry, Mode, SCHEMA_VERSION};
pub use context::{Lab, SeedContext, POOLED};
pub use experiment::{
    evaluate, feasible_tsne, intervention_target, intervention_unlearn_config, language_subspaces, reference, run_experiment,
    run_forget_size_sweep, run_interventions, run_many_to_one, run_method_comparison, run_one_to_one, run_seed,
    run_transliteration, unlearn, with_overlap, GeometryRow, Outcome, SeedOutput,
};
pub use output::emit_outputs;
pub use record::{median, RunRecord};

/// Failures after a config has been accepted.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("output: {0}")]
    Output(String),
}

macro_rules! numerical {
    ($($t:ty),*) => {$(
        impl From<$t> for RunError {
            fn from(e: $t) -> Self {
                RunError::Numerical(e.to_string())
            }
        }
    )*};
}

numerical!(
    testbed::TestbedError,
    metrics::MetricsError,
    unlearn_algos::UnlearnError,
    subspace_toolkit::ToolkitError,
    linalg_core::LinalgError
);
