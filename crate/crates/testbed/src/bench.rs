use serde::{Deserialize, Serialize};

use crate::dataset::{render_language, subset, FactExample, INPUT_LEN};
use crate::language::{LanguageSpec, NATIVE_SCRIPT};
use crate::model::ToyModel;
use crate::train::{train, train_with, TrainConfig};
use crate::universe::{generate_universe, FactUniverse};
use crate::TestbedError;

/// One rendered language variant. Any script other than the native one is a
/// sibling of the native script of the same language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub lang_id: String,
    #[serde(default = "native")]
    pub script_id: String,
    #[serde(default = "one")]
    pub script_overlap: f64,
}

fn native() -> String {
    NATIVE_SCRIPT.to_string()
}

fn one() -> f64 {
    1.0
}

impl VariantConfig {
    pub fn native(lang: &str) -> VariantConfig {
        VariantConfig { lang_id: lang.into(), script_id: native(), script_overlap: 1.0 }
    }

    pub fn sibling(lang: &str, script: &str, overlap: f64) -> VariantConfig {
        VariantConfig { lang_id: lang.into(), script_id: script.into(), script_overlap: overlap }
    }

    pub fn is_sibling(&self) -> bool {
        self.script_id != NATIVE_SCRIPT
    }

    pub fn variant_id(&self) -> String {
        if self.is_sibling() {
            format!("{}_{}", self.lang_id, self.script_id)
        } else {
            self.lang_id.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestbedConfig {
    pub n_facts: usize,
    pub n_relations: usize,
    pub vocab_size: usize,
    pub forget_fraction: f64,
    pub d_embed: usize,
    pub d_hidden: usize,
    /// fraction of object tokens spelled identically in every base language
    pub entity_share: f64,
    pub languages: Vec<VariantConfig>,
    /// steps of the retain-only model
    pub retain_steps: usize,
    /// further steps on all facts that produce the model to unlearn from
    pub finetune_steps: usize,
    pub lr: f64,
    /// anneal the step size of the all-facts phase to zero
    pub anneal: bool,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        TestbedConfig {
            n_facts: 100,
            n_relations: 10,
            vocab_size: 512,
            forget_fraction: 0.10,
            d_embed: 16,
            d_hidden: 128,
            entity_share: 1.0,
            languages: default_languages(),
            retain_steps: 2000,
            finetune_steps: 500,
            lr: 0.05,
            anneal: false,
        }
    }
}

/// Five base languages plus romanized Hindi and Chinese at overlap 0.5.
pub fn default_languages() -> Vec<VariantConfig> {
    let mut v: Vec<VariantConfig> = ["en", "es", "it", "hi", "zh"].iter().map(|l| VariantConfig::native(l)).collect();
    v.push(VariantConfig::sibling("hi", "la", 0.5));
    v.push(VariantConfig::sibling("zh", "la", 0.5));
    v
}

/// A fully built experimental bench for one seed: universe, language maps,
/// rendered data, the retain-only reference model and the model that has
/// learned every fact.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Testbed {
    pub seed: u64,
    pub config: TestbedConfig,
    pub universe: FactUniverse,
    pub specs: Vec<LanguageSpec>,
    pub data: Vec<Vec<FactExample>>,
    pub retain_model: ToyModel,
    pub base_model: ToyModel,
}

/// Deterministic sub-seed from a master seed and a label.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finalizer
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Testbed {
    /// Universe, languages and data only (no training).
    pub fn render(cfg: &TestbedConfig, seed: u64) -> Result<(FactUniverse, Vec<LanguageSpec>, Vec<Vec<FactExample>>), TestbedError> {
        let u = generate_universe(cfg.n_facts, cfg.n_relations, cfg.vocab_size, cfg.forget_fraction, seed)?;
        let anchors = u.anchor_tokens(cfg.entity_share);
        let marker = u.layout.marker;
        let mut specs: Vec<LanguageSpec> = Vec::new();
        for vc in cfg.languages.iter().filter(|v| !v.is_sibling()) {
            // redraw until the language marker is unique, so that no two
            // languages can render the same input
            let mut attempt = 0;
            let s = loop {
                let tag = if attempt == 0 { format!("map:{}", vc.lang_id) } else { format!("map:{}#{attempt}", vc.lang_id) };
                let s = LanguageSpec::new(&vc.lang_id, NATIVE_SCRIPT, cfg.vocab_size, derive_seed(seed, &tag), &anchors)?;
                if specs.iter().all(|o| o.map(marker) != s.map(marker)) {
                    break s;
                }
                attempt += 1;
            };
            specs.push(s);
        }
        let mut siblings: Vec<LanguageSpec> = Vec::new();
        for vc in cfg.languages.iter().filter(|v| v.is_sibling()) {
            let base = specs
                .iter()
                .find(|s| s.lang_id == vc.lang_id)
                .ok_or_else(|| TestbedError::InvalidConfig(format!("sibling {} has no native script", vc.variant_id())))?;
            // the sibling always gets its own marker token
            let mut attempt = 0;
            let sib = loop {
                let tag = if attempt == 0 { format!("map:{}", vc.variant_id()) } else { format!("map:{}#{attempt}", vc.variant_id()) };
                let sib = base.sibling_with(&vc.script_id, vc.script_overlap, derive_seed(seed, &tag), &[marker])?;
                let clash = specs.iter().chain(&siblings).any(|o| o.map(marker) == sib.map(marker));
                if !clash || vc.script_overlap >= 1.0 {
                    break sib;
                }
                attempt += 1;
            };
            siblings.push(sib);
        }
        specs.extend(siblings);
        // keep the configured order
        let order: Vec<String> = cfg.languages.iter().map(|v| v.variant_id()).collect();
        specs.sort_by_key(|s| order.iter().position(|o| *o == s.variant_id()).unwrap_or(usize::MAX));
        let data = specs.iter().map(|s| render_language(&u, s)).collect::<Result<Vec<_>, _>>()?;
        Ok((u, specs, data))
    }

    pub fn build(cfg: &TestbedConfig, seed: u64) -> Result<Testbed, TestbedError> {
        let (universe, specs, data) = Testbed::render(cfg, seed)?;
        let init = ToyModel::init(cfg.vocab_size, cfg.d_embed, cfg.d_hidden, INPUT_LEN, derive_seed(seed, "init"));
        let retain: Vec<FactExample> = data.iter().flat_map(|d| subset(d, &universe.retain_ids)).collect();
        let retain_model = train(&init, &retain, cfg.retain_steps, cfg.lr, derive_seed(seed, "train:retain"))?;
        let all: Vec<FactExample> = data.iter().flatten().cloned().collect();
        let base_model = train_with(
            &retain_model,
            &all,
            &TrainConfig { anneal: cfg.anneal, ..TrainConfig::base(cfg.finetune_steps, cfg.lr) },
            derive_seed(seed, "train:all"),
        )?;
        Ok(Testbed { seed, config: cfg.clone(), universe, specs, data, retain_model, base_model })
    }

    pub fn variant_ids(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.variant_id()).collect()
    }

    pub fn variant_index(&self, variant: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.variant_id() == variant)
    }

    pub fn examples(&self, variant: &str, ids: &[usize]) -> Result<Vec<FactExample>, TestbedError> {
        let i = self.variant_index(variant).ok_or_else(|| TestbedError::UnknownLanguage(variant.to_string()))?;
        Ok(subset(&self.data[i], ids))
    }

    pub fn forget(&self, variant: &str) -> Result<Vec<FactExample>, TestbedError> {
        self.examples(variant, &self.universe.forget_ids)
    }

    /// Forget examples of several variants, concatenated in the given order.
    pub fn forget_union(&self, variants: &[String]) -> Result<Vec<FactExample>, TestbedError> {
        let mut out = Vec::new();
        for v in variants {
            out.extend(self.forget(v)?);
        }
        Ok(out)
    }
}
