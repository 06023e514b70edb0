use serde::{Deserialize, Serialize};
use testbed::{argmax, FactExample, ToyModel};

use crate::ks::{ks_two_sample_with, KsResult, PValueMethod};
use crate::MetricsError;

/// Sum in a fixed binary-tree order so results do not depend on how a caller
/// might later split the work.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Geometric mean of p(false_i | x) over the false targets, divided by p(true | x).
pub fn truth_ratio(m: &ToyModel, ex: &FactExample) -> f64 {
    truth_ratios(m, std::slice::from_ref(ex))[0]
}

pub fn truth_ratios(m: &ToyModel, examples: &[FactExample]) -> Vec<f64> {
    if examples.is_empty() {
        return Vec::new();
    }
    let v = m.vocab();
    let act = m.forward_examples(examples);
    examples
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let lp = act.logp_row(i, v);
            let k = e.false_targets.len() as f64;
            let mean_false = e.false_targets.iter().map(|&t| lp[t as usize]).sum::<f64>() / k;
            (mean_false - lp[e.target_token as usize]).exp()
        })
        .collect()
}

/// Which model's truth ratios the unlearned model is compared against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceChoice {
    /// a model trained on the retain facts only
    #[default]
    RetainRetrained,
    /// the model before unlearning
    Original,
}

/// KS test between the truth ratios of the two models on the forget set.
pub fn forget_quality_test(
    unlearned: &ToyModel,
    reference: &ToyModel,
    forget: &[FactExample],
    method: PValueMethod,
) -> Result<KsResult, MetricsError> {
    let a = truth_ratios(unlearned, forget);
    let b = truth_ratios(reference, forget);
    if a.iter().chain(&b).any(|x| x.is_nan()) {
        return Err(MetricsError::NonFinite);
    }
    ks_two_sample_with(&a, &b, method)
}

pub fn forget_quality(unlearned: &ToyModel, reference: &ToyModel, forget: &[FactExample]) -> Result<f64, MetricsError> {
    Ok(forget_quality_test(unlearned, reference, forget, PValueMethod::Asymptotic)?.p_value)
}

/// Significance threshold for forget quality.
pub const ALPHA: f64 = 0.1;

/// `p > α` reads as statistically indistinguishable from the reference, i.e. forgotten.
pub fn significant_forgetting(p: f64) -> bool {
    p > ALPHA
}

/// Example lists the nine capability metrics are computed on.
#[derive(Clone, Debug, Default)]
pub struct CapabilitySplits {
    /// retain facts used during unlearning
    pub retain: Vec<FactExample>,
    /// retain facts never touched by unlearning
    pub heldout: Vec<FactExample>,
    /// facts reserved as control tasks
    pub control: Vec<FactExample>,
}

/// Three splits times (mean p(true), accuracy, mean 1/(1+truth ratio)).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capability {
    pub retain_prob: f64,
    pub retain_acc: f64,
    pub retain_truth: f64,
    pub heldout_prob: f64,
    pub heldout_acc: f64,
    pub heldout_truth: f64,
    pub control_prob: f64,
    pub control_acc: f64,
    pub control_truth: f64,
}

impl Capability {
    pub const NAMES: [&'static str; 9] = [
        "retain_prob",
        "retain_acc",
        "retain_truth",
        "heldout_prob",
        "heldout_acc",
        "heldout_truth",
        "control_prob",
        "control_acc",
        "control_truth",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.retain_prob,
            self.retain_acc,
            self.retain_truth,
            self.heldout_prob,
            self.heldout_acc,
            self.heldout_truth,
            self.control_prob,
            self.control_acc,
            self.control_truth,
        ]
    }

    pub fn from_values(v: [f64; 9]) -> Capability {
        Capability {
            retain_prob: v[0],
            retain_acc: v[1],
            retain_truth: v[2],
            heldout_prob: v[3],
            heldout_acc: v[4],
            heldout_truth: v[5],
            control_prob: v[6],
            control_acc: v[7],
            control_truth: v[8],
        }
    }
}

fn split_stats(m: &ToyModel, examples: &[FactExample]) -> [f64; 3] {
    let v = m.vocab();
    let act = m.forward_examples(examples);
    let mut prob = Vec::with_capacity(examples.len());
    let mut acc = Vec::with_capacity(examples.len());
    for (i, e) in examples.iter().enumerate() {
        let lp = act.logp_row(i, v);
        prob.push(lp[e.target_token as usize].exp());
        acc.push(if argmax(lp) == e.target_token as usize { 1.0 } else { 0.0 });
    }
    let truth: Vec<f64> = truth_ratios(m, examples).iter().map(|r| 1.0 / (1.0 + r)).collect();
    [mean(&prob), mean(&acc), mean(&truth)]
}

pub fn capability_metrics(m: &ToyModel, splits: &CapabilitySplits) -> Result<Capability, MetricsError> {
    let named = [("retain", &splits.retain), ("heldout", &splits.heldout), ("control", &splits.control)];
    let mut out = [0.0; 9];
    for (k, (name, ex)) in named.iter().enumerate() {
        if ex.is_empty() {
            return Err(MetricsError::EmptySplit(name.to_string()));
        }
        out[3 * k..3 * k + 3].copy_from_slice(&split_stats(m, ex));
    }
    Ok(Capability::from_values(out))
}

/// Harmonic mean; any non-positive input makes the utility 0.
pub fn model_utility(values: &[f64]) -> f64 {
    if values.is_empty() || values.iter().any(|&x| !(x > 0.0)) {
        return 0.0;
    }
    let inv: Vec<f64> = values.iter().map(|x| 1.0 / x).collect();
    values.len() as f64 / pairwise_sum(&inv)
}

pub fn normalized_utility(u: f64, base_u: f64) -> Result<f64, MetricsError> {
    if !(base_u > 0.0) {
        return Err(MetricsError::ZeroBaseUtility);
    }
    Ok(u / base_u)
}
