use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use testbed::{FactExample, ToyModel};

use crate::eval::{capability_metrics, forget_quality_test, model_utility, normalized_utility, Capability, CapabilitySplits};
use crate::ks::PValueMethod;
use crate::MetricsError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageScore {
    pub utility: f64,
    pub normalized_utility: f64,
    pub forget_quality_p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub forget_quality_p: f64,
    pub ks_statistic: f64,
    pub capability: Capability,
    pub utility: f64,
    pub normalized_utility: f64,
    pub per_language: BTreeMap<String, LanguageScore>,
}

/// Everything one language contributes to an evaluation.
#[derive(Clone, Debug)]
pub struct LanguageEval {
    pub lang: String,
    pub forget: Vec<FactExample>,
    pub splits: CapabilitySplits,
    /// utility of the pre-unlearning model on these splits
    pub base_utility: f64,
}

/// Forget quality and utility of `m` for one language.
pub fn score_language(
    m: &ToyModel,
    reference: &ToyModel,
    le: &LanguageEval,
    method: PValueMethod,
) -> Result<LanguageScore, MetricsError> {
    let fq = forget_quality_test(m, reference, &le.forget, method)?;
    let u = model_utility(&capability_metrics(m, &le.splits)?.values());
    Ok(LanguageScore { utility: u, normalized_utility: normalized_utility(u, le.base_utility)?, forget_quality_p: fq.p_value })
}

impl EvalReport {
    /// Headline numbers come from `forget` and `splits` (typically the
    /// targeted languages pooled); `per_language` is filled separately.
    pub fn evaluate(
        m: &ToyModel,
        reference: &ToyModel,
        forget: &[FactExample],
        splits: &CapabilitySplits,
        base_utility: f64,
        method: PValueMethod,
    ) -> Result<EvalReport, MetricsError> {
        let ks = forget_quality_test(m, reference, forget, method)?;
        let capability = capability_metrics(m, splits)?;
        let utility = model_utility(&capability.values());
        Ok(EvalReport {
            forget_quality_p: ks.p_value,
            ks_statistic: ks.statistic,
            capability,
            utility,
            normalized_utility: normalized_utility(utility, base_utility)?,
            per_language: BTreeMap::new(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<EvalReport, MetricsError> {
        Ok(serde_json::from_str(s)?)
    }

    /// Column names matching [`EvalReport::csv_row`].
    pub fn csv_header() -> Vec<String> {
        let mut h: Vec<String> = ["forget_quality_p", "ks_statistic", "utility", "normalized_utility"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(Capability::NAMES.iter().map(|s| s.to_string()));
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![
            fmt_real(self.forget_quality_p),
            fmt_real(self.ks_statistic),
            fmt_real(self.utility),
            fmt_real(self.normalized_utility),
        ];
        r.extend(self.capability.values().iter().map(|&v| fmt_real(v)));
        r
    }
}

/// Fixed-precision formatting used in every CSV this workspace writes.
pub fn fmt_real(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    let s = format!("{x:.10}");
    // avoid "-0.0000000000"
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        return s.trim_start_matches('-').to_string();
    }
    s
}
