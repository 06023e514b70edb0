//! Forget quality, capability metrics and utility for unlearning runs.

mod eval;
mod ks;
mod report;

pub use eval::{
    capability_metrics, forget_quality, forget_quality_test, mean, model_utility, normalized_utility, pairwise_sum,
    significant_forgetting, truth_ratio, truth_ratios, Capability, CapabilitySplits, ReferenceChoice, ALPHA,
};
pub use ks::{
    kolmogorov_sf, ks_exact_p, ks_statistic, ks_two_sample, ks_two_sample_with, KsResult, PValueMethod,
    EXACT_MAX_SIDE, MIN_SAMPLE,
};
pub use report::{fmt_real, score_language, EvalReport, LanguageEval, LanguageScore};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("sample of {n} values is below the minimum of {min}")]
    SampleTooSmall { n: usize, min: usize },
    #[error("exact p-value needs both samples ≤ {max} (got {n} and {m})")]
    ExactTooLarge { n: usize, m: usize, max: usize },
    #[error("empty {0} split")]
    EmptySplit(String),
    #[error("base utility must be positive")]
    ZeroBaseUtility,
    #[error("non-finite value in a sample")]
    NonFinite,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
