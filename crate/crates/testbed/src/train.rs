use linalg_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FactExample;
use crate::model::{nll_and_dz, Param, ToyModel};
use crate::TestbedError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// mini-batch size; a batch ≥ the dataset size means full-batch steps
    pub batch: usize,
    pub momentum: f64,
    pub params: Vec<Param>,
    /// linearly anneal the step size to zero over the run
    #[serde(default)]
    pub anneal: bool,
}

impl TrainConfig {
    /// Base-model training: embeddings and both weight matrices, biases frozen.
    pub fn base(steps: usize, lr: f64) -> TrainConfig {
        TrainConfig { steps, lr, batch: 64, momentum: 0.9, params: vec![Param::Embed, Param::W1, Param::W2], anneal: false }
    }

    /// Task fine-tuning used to measure task-induced updates: full batch, {w1, w2}.
    pub fn finetune(steps: usize, lr: f64) -> TrainConfig {
        TrainConfig { steps, lr, batch: usize::MAX, momentum: 0.9, params: vec![Param::W1, Param::W2], anneal: false }
    }
}

/// Mini-batch SGD with heavy-ball momentum on mean NLL.
pub fn train(m: &ToyModel, data: &[FactExample], steps: usize, lr: f64, seed: u64) -> Result<ToyModel, TestbedError> {
    train_with(m, data, &TrainConfig::base(steps, lr), seed)
}

pub fn train_with(m: &ToyModel, data: &[FactExample], cfg: &TrainConfig, seed: u64) -> Result<ToyModel, TestbedError> {
    if data.is_empty() {
        return Err(TestbedError::EmptyData);
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(TestbedError::InvalidConfig(format!("lr {} must be positive", cfg.lr)));
    }
    let mut model = m.clone();
    if cfg.steps == 0 {
        return Ok(model);
    }
    let v = model.vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut velocity: Vec<Vec<f64>> = cfg.params.iter().map(|&p| vec![0.0; model.param(p).len()]).collect();
    let full = cfg.batch >= data.len();
    let all_tokens: Vec<u32> = data.iter().flat_map(|e| e.input_tokens).collect();
    let all_targets: Vec<u32> = data.iter().map(|e| e.target_token).collect();
    let mut tokens = Vec::new();
    let mut targets = Vec::new();

    for step in 0..cfg.steps {
        let act = if full {
            model.forward_tokens(&all_tokens)
        } else {
            tokens.clear();
            targets.clear();
            for _ in 0..cfg.batch {
                let e = &data[rng.random_range(0..data.len())];
                tokens.extend_from_slice(&e.input_tokens);
                targets.push(e.target_token);
            }
            model.forward_tokens(&tokens)
        };
        let (loss, dz) = nll_and_dz(&act, if full { &all_targets } else { &targets }, v);
        if !loss.is_finite() {
            return Err(TestbedError::Diverged { step });
        }
        let g = model.backward(&act, &dz, &cfg.params);
        let lr = if cfg.anneal { cfg.lr * (1.0 - step as f64 / cfg.steps as f64) } else { cfg.lr };
        for (k, &p) in cfg.params.iter().enumerate() {
            let gp = g.get(p).expect("requested gradient");
            let vel = &mut velocity[k];
            let w = model.param_mut(p);
            for ((vi, wi), gi) in vel.iter_mut().zip(w.iter_mut()).zip(gp) {
                *vi = cfg.momentum * *vi + gi;
                *wi -= lr * *vi;
            }
        }
    }
    if !model.is_finite() {
        return Err(TestbedError::Diverged { step: cfg.steps });
    }
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaProvenance {
    pub label: String,
    pub steps: usize,
    pub lr: f64,
}

/// Task-induced update restricted to the two weight matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightDelta {
    pub w1: Matrix,
    pub w2: Matrix,
    pub provenance: DeltaProvenance,
}

impl WeightDelta {
    pub fn layer(&self, l: Layer) -> &Matrix {
        match l {
            Layer::W1 => &self.w1,
            Layer::W2 => &self.w2,
        }
    }

    /// m + scale·Δ
    pub fn apply(&self, m: &ToyModel, scale: f64) -> Result<ToyModel, TestbedError> {
        if self.w1.shape() != m.w1.shape() || self.w2.shape() != m.w2.shape() {
            return Err(TestbedError::ShapeMismatch);
        }
        let mut out = m.clone();
        out.w1.axpy(scale, &self.w1).expect("checked shape");
        out.w2.axpy(scale, &self.w2).expect("checked shape");
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite() && self.w2.is_finite()
    }
}

/// The two weight matrices unlearning acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    W1,
    W2,
}

impl Layer {
    pub const ALL: [Layer; 2] = [Layer::W1, Layer::W2];

    pub fn name(self) -> &'static str {
        match self {
            Layer::W1 => "w1",
            Layer::W2 => "w2",
        }
    }

    pub fn of(self, m: &ToyModel) -> &Matrix {
        match self {
            Layer::W1 => &m.w1,
            Layer::W2 => &m.w2,
        }
    }

    pub fn of_mut(self, m: &mut ToyModel) -> &mut Matrix {
        match self {
            Layer::W1 => &mut m.w1,
            Layer::W2 => &mut m.w2,
        }
    }
}

/// Δ = params(train(m, data)) − params(m) on {w1, w2}; full-batch momentum SGD.
pub fn finetune_delta(m: &ToyModel, data: &[FactExample], steps: usize, lr: f64, label: &str) -> Result<WeightDelta, TestbedError> {
    let tuned = train_with(m, data, &TrainConfig::finetune(steps, lr), 0)?;
    Ok(WeightDelta {
        w1: tuned.w1.sub(&m.w1).expect("same shape"),
        w2: tuned.w2.sub(&m.w2).expect("same shape"),
        provenance: DeltaProvenance { label: label.to_string(), steps, lr },
    })
}
