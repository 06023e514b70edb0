//! Synthetic multilingual fact-recall testbed: fact universes, language and
//! script renderers, a one-hidden-layer recall model and its trainer.

mod bench;
mod dataset;
mod io;
mod language;
mod model;
mod train;
mod universe;

pub use bench::{default_languages, derive_seed, Testbed, TestbedConfig, VariantConfig};
pub use dataset::{render_language, subset, transliterate, FactExample, INPUT_LEN};
pub use io::{read_replay, write_replay, Replay, REPLAY_SCHEMA};
pub use language::{shared_count, LanguageSpec, NATIVE_SCRIPT};
pub use model::{argmax, log_softmax_in_place, nll_and_dz, Activations, Grads, Param, ToyModel};
pub use train::{finetune_delta, train, train_with, DeltaProvenance, Layer, TrainConfig, WeightDelta};
pub use universe::{generate_universe, Fact, FactUniverse, Layout, K_FALSE};

#[derive(Debug, thiserror::Error)]
pub enum TestbedError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("vocabulary of {vocab_size} tokens is too small for {n_facts} facts")]
    VocabTooSmall { vocab_size: usize, n_facts: usize },
    #[error("language mismatch: expected {expected}, found {found}")]
    LanguageMismatch { expected: String, found: String },
    #[error("unknown language variant {0}")]
    UnknownLanguage(String),
    #[error("empty training data")]
    EmptyData,
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("weight delta shape does not match the model")]
    ShapeMismatch,
    #[error("replay file: {0}")]
    Replay(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
