//! Unlearning methods on the toy recall model: six gradient-based baselines,
//! task-vector negation, and subspace projection (UNLEARN).

mod gradient;
pub mod losses;
mod projection;

use serde::{Deserialize, Serialize};
use testbed::{FactExample, Layer, ToyModel, WeightDelta};

pub use gradient::{flat, grad_diff, gradient_ascent, kl_min, npo, pref_opt};
pub use losses::FlatDivergence;
pub use projection::{
    discriminate, output_subspace, task_vector_negate, unlearn_projection, LayerArtifacts, SubspaceArtifacts, DROP_TOL,
    PROJECTION_SIDE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    GradAscent,
    KlMin,
    GradDiff,
    PrefOpt,
    Npo,
    Flat,
    TaskVector,
    Unlearn,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::GradAscent,
        Method::KlMin,
        Method::GradDiff,
        Method::PrefOpt,
        Method::Npo,
        Method::Flat,
        Method::TaskVector,
        Method::Unlearn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::GradAscent => "GradAscent",
            Method::KlMin => "KLMin",
            Method::GradDiff => "GradDiff",
            Method::PrefOpt => "PrefOpt",
            Method::Npo => "NPO",
            Method::Flat => "FLAT",
            Method::TaskVector => "TaskVector",
            Method::Unlearn => "UNLEARN",
        }
    }

    /// Iterative methods driven by a loss; the other two are one-shot edits.
    pub fn is_gradient_based(self) -> bool {
        !matches!(self, Method::TaskVector | Method::Unlearn)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = UnlearnError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnlearnError::InvalidConfig(format!("unknown method {s}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnlearnConfig {
    pub method: Method,
    pub steps: usize,
    pub lr: f64,
    /// heavy-ball momentum of the gradient methods
    pub momentum: f64,
    /// NPO inverse temperature
    pub beta: f64,
    /// KLMin / GradDiff retain term weight
    pub retain_weight: f64,
    pub flat_divergence: FlatDivergence,
    /// UNLEARN subspace rank per layer
    pub rank: usize,
    pub discrim_cos_tol: f64,
    /// refusal target of PrefOpt and FLAT
    pub idk_token: u32,
    /// TaskVector negation scale
    pub scale: f64,
    /// layers UNLEARN projects
    pub layers: Vec<Layer>,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            method: Method::Unlearn,
            steps: 50,
            lr: 0.1,
            momentum: 0.9,
            beta: 0.1,
            retain_weight: 1.0,
            flat_divergence: FlatDivergence::TotalVariation,
            rank: 12,
            discrim_cos_tol: 0.9,
            idk_token: 0,
            scale: 1.0,
            layers: Layer::ALL.to_vec(),
        }
    }
}

impl UnlearnConfig {
    pub fn for_method(method: Method) -> UnlearnConfig {
        UnlearnConfig { method, ..UnlearnConfig::default() }
    }

    pub fn validate(&self) -> Result<(), UnlearnError> {
        let bad = |m: String| Err(UnlearnError::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta {} must be positive", self.beta));
        }
        if !(self.retain_weight >= 0.0) {
            return bad(format!("retain_weight {} must be ≥ 0", self.retain_weight));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0,1)", self.momentum));
        }
        if self.rank < 1 {
            return bad("rank must be ≥ 1".into());
        }
        if !(self.discrim_cos_tol > 0.0 && self.discrim_cos_tol < 1.0) {
            return bad(format!("discrim_cos_tol {} outside (0,1)", self.discrim_cos_tol));
        }
        if self.layers.is_empty() {
            return bad("no layers selected".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub method: Method,
    /// one loss per step; empty for the one-shot methods
    pub losses: Vec<f64>,
    pub warnings: Vec<String>,
    pub projection_side: Option<String>,
    /// UNLEARN: (layer, forget rank, rank kept after discrimination)
    pub kept_rank: Vec<(Layer, usize, usize)>,
}

impl Diagnostics {
    pub fn new(method: Method, losses: Vec<f64>) -> Diagnostics {
        Diagnostics { method, losses, warnings: Vec::new(), projection_side: None, kept_rank: Vec::new() }
    }
}

#[derive(Clone, Debug)]
pub struct UnlearnResult {
    pub model: ToyModel,
    pub diagnostics: Diagnostics,
    pub subspace_artifacts: Option<SubspaceArtifacts>,
}

/// Data a method may draw on. Gradient methods use the example lists,
/// TaskVector the forget delta, UNLEARN both deltas.
#[derive(Clone, Copy, Debug, Default)]
pub struct UnlearnInputs<'a> {
    pub forget: &'a [FactExample],
    pub retain: &'a [FactExample],
    pub forget_delta: Option<&'a WeightDelta>,
    pub control_deltas: &'a [WeightDelta],
}

/// Dispatches on `cfg.method`.
pub fn run(m: &ToyModel, inputs: &UnlearnInputs, cfg: &UnlearnConfig) -> Result<UnlearnResult, UnlearnError> {
    let need_delta = || inputs.forget_delta.ok_or_else(|| UnlearnError::InvalidConfig(format!("{} needs a forget delta", cfg.method)));
    match cfg.method {
        Method::GradAscent => gradient_ascent(m, inputs.forget, cfg),
        Method::KlMin => kl_min(m, inputs.forget, inputs.retain, cfg),
        Method::GradDiff => grad_diff(m, inputs.forget, inputs.retain, cfg),
        Method::PrefOpt => pref_opt(m, inputs.forget, cfg),
        Method::Npo => npo(m, inputs.forget, cfg),
        Method::Flat => flat(m, inputs.forget, cfg),
        Method::TaskVector => {
            let model = task_vector_negate(m, need_delta()?, cfg.scale)?;
            Ok(UnlearnResult { model, diagnostics: Diagnostics::new(Method::TaskVector, Vec::new()), subspace_artifacts: None })
        }
        Method::Unlearn => unlearn_projection(m, need_delta()?, inputs.control_deltas, cfg),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum UnlearnError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty {0} set")]
    EmptySet(String),
    #[error("unlearning diverged at step {step}")]
    Diverged { step: usize },
    #[error("unsupported divergence {0}")]
    UnsupportedDivergence(String),
    #[error(transparent)]
    Testbed(#[from] testbed::TestbedError),
    #[error(transparent)]
    Linalg(#[from] linalg_core::LinalgError),
}
