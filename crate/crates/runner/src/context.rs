use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use metrics::{model_utility, capability_metrics, CapabilitySplits, LanguageEval};
use testbed::{finetune_delta, FactExample, Testbed, TestbedConfig, ToyModel, WeightDelta};

use crate::RunError;

/// Everything derived from one (testbed config, seed): the bench itself, the
/// per-language evaluation data and memoized task updates.
pub struct SeedContext {
    pub testbed: Testbed,
    evals: HashMap<String, Arc<LanguageEval>>,
    deltas: Mutex<HashMap<String, Arc<WeightDelta>>>,
}

/// Pseudo-language naming every variant pooled together.
pub const POOLED: &str = "pooled";

impl SeedContext {
    pub fn build(cfg: &TestbedConfig, seed: u64) -> Result<SeedContext, RunError> {
        let testbed = Testbed::build(cfg, seed)?;
        let mut ctx = SeedContext { testbed, evals: HashMap::new(), deltas: Mutex::new(HashMap::new()) };
        let all = ctx.testbed.variant_ids();
        for v in &all {
            let le = ctx.language_eval(std::slice::from_ref(v))?;
            ctx.evals.insert(v.clone(), Arc::new(le));
        }
        let pooled = ctx.language_eval(&all)?;
        ctx.evals.insert(POOLED.into(), Arc::new(LanguageEval { lang: POOLED.into(), ..pooled }));
        Ok(ctx)
    }

    fn language_eval(&self, variants: &[String]) -> Result<LanguageEval, RunError> {
        let u = &self.testbed.universe;
        let splits = CapabilitySplits {
            retain: self.examples(variants, &u.retain_train_ids())?,
            heldout: self.examples(variants, &u.heldout_ids)?,
            control: self.examples(variants, &u.control_task_ids)?,
        };
        let base_utility = model_utility(&capability_metrics(&self.testbed.base_model, &splits)?.values());
        Ok(LanguageEval { lang: variants.join("+"), forget: self.forget(variants)?, splits, base_utility })
    }

    /// Evaluation data for a variant id or [`POOLED`].
    pub fn eval(&self, lang: &str) -> Result<Arc<LanguageEval>, RunError> {
        self.evals.get(lang).cloned().ok_or_else(|| RunError::Numerical(format!("no evaluation data for {lang}")))
    }

    pub fn examples(&self, variants: &[String], ids: &[usize]) -> Result<Vec<FactExample>, RunError> {
        let mut out = Vec::new();
        for v in variants {
            out.extend(self.testbed.examples(v, ids)?);
        }
        Ok(out)
    }

    pub fn forget(&self, variants: &[String]) -> Result<Vec<FactExample>, RunError> {
        Ok(self.testbed.forget_union(variants)?)
    }

    pub fn retain(&self, variants: &[String]) -> Result<Vec<FactExample>, RunError> {
        self.examples(variants, &self.testbed.universe.retain_train_ids())
    }

    /// The control facts split into two interleaved chunks, each rendered in
    /// every given variant.
    pub fn control_chunks(&self, variants: &[String]) -> Result<[Vec<FactExample>; 2], RunError> {
        let ids = &self.testbed.universe.control_task_ids;
        let even: Vec<usize> = ids.iter().step_by(2).copied().collect();
        let odd: Vec<usize> = ids.iter().skip(1).step_by(2).copied().collect();
        Ok([self.examples(variants, &even)?, self.examples(variants, &odd)?])
    }

    /// Memoized finetune_delta. `model_tag` must identify `m` uniquely.
    pub fn delta(&self, model_tag: &str, m: &ToyModel, data: &[FactExample], what: &str, steps: usize, lr: f64) -> Result<Arc<WeightDelta>, RunError> {
        let key = format!("{model_tag}|{what}|{steps}|{lr:e}");
        if let Some(d) = self.deltas.lock().expect("delta cache").get(&key) {
            return Ok(d.clone());
        }
        let d = Arc::new(finetune_delta(m, data, steps, lr, what)?);
        self.deltas.lock().expect("delta cache").insert(key, d.clone());
        Ok(d)
    }

    /// Forget-set update of the given variants plus the two control updates
    /// drawn from the same variants.
    pub fn task_deltas(&self, model_tag: &str, m: &ToyModel, variants: &[String], steps: usize, lr: f64) -> Result<(Arc<WeightDelta>, Vec<WeightDelta>), RunError> {
        let key = variants.join("+");
        let fd = self.delta(model_tag, m, &self.forget(variants)?, &format!("forget:{key}"), steps, lr)?;
        let [c0, c1] = self.control_chunks(variants)?;
        let d0 = self.delta(model_tag, m, &c0, &format!("control0:{key}"), steps, lr)?;
        let d1 = self.delta(model_tag, m, &c1, &format!("control1:{key}"), steps, lr)?;
        Ok((fd, vec![(*d0).clone(), (*d1).clone()]))
    }
}

/// Shares built contexts between experiments run in one process.
#[derive(Default)]
pub struct Lab {
    contexts: Mutex<HashMap<(String, u64), Arc<SeedContext>>>,
}

impl Lab {
    pub fn new() -> Lab {
        Lab::default()
    }

    pub fn context(&self, cfg: &TestbedConfig, seed: u64) -> Result<Arc<SeedContext>, RunError> {
        let key = (serde_json::to_string(cfg).expect("config serializes"), seed);
        if let Some(c) = self.contexts.lock().expect("context cache").get(&key) {
            return Ok(c.clone());
        }
        let c = Arc::new(SeedContext::build(cfg, seed)?);
        Ok(self.contexts.lock().expect("context cache").entry(key).or_insert(c).clone())
    }
}

