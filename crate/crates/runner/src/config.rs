use std::collections::BTreeSet;
use std::path::PathBuf;

use metrics::{PValueMethod, ReferenceChoice};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use subspace_toolkit::TsneConfig;
use testbed::{Testbed, TestbedConfig};
use unlearn_algos::{Method, UnlearnConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    OneToOne,
    ManyToOne,
    Transliteration,
    Interventions,
    ForgetSizeSweep,
    MethodComparison,
}

impl Mode {
    pub const ALL: [Mode; 6] =
        [Mode::OneToOne, Mode::ManyToOne, Mode::Transliteration, Mode::Interventions, Mode::ForgetSizeSweep, Mode::MethodComparison];

    pub fn name(self) -> &'static str {
        match self {
            Mode::OneToOne => "one-to-one",
            Mode::ManyToOne => "many-to-one",
            Mode::Transliteration => "transliteration",
            Mode::Interventions => "interventions",
            Mode::ForgetSizeSweep => "forget-size-sweep",
            Mode::MethodComparison => "method-comparison",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| format!("unknown mode {s}"))
    }
}

/// Which model the interventions edit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterventionModel {
    /// the model trained jointly on every fact
    #[default]
    Joint,
    /// the joint model fine-tuned once more on the pooled forget facts
    ForgetFinetuned,
}

/// A method plus its settings. Written either as a bare name or as
/// `{"method": "NPO", "config": {...}}` with any subset of UnlearnConfig fields.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodEntry {
    pub method: Method,
    pub config: UnlearnConfig,
}

impl MethodEntry {
    pub fn new(method: Method) -> MethodEntry {
        MethodEntry { method, config: UnlearnConfig::for_method(method) }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawEntry {
    Name(String),
    Full {
        method: String,
        #[serde(default)]
        config: Option<serde_json::Value>,
    },
}

impl Serialize for MethodEntry {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let config = serde_json::to_value(&self.config).map_err(serde::ser::Error::custom)?;
        RawEntry::Full { method: self.method.name().into(), config: Some(config) }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MethodEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let (name, cfg) = match RawEntry::deserialize(d)? {
            RawEntry::Name(n) => (n, None),
            RawEntry::Full { method, config } => (method, config),
        };
        let method: Method = name.parse().map_err(|_| D::Error::custom(format!("unknown method {name}")))?;
        let mut config: UnlearnConfig = match cfg {
            Some(v) => serde_json::from_value(v).map_err(D::Error::custom)?,
            None => UnlearnConfig::default(),
        };
        config.method = method;
        Ok(MethodEntry { method, config })
    }
}

fn default_methods() -> Vec<MethodEntry> {
    Method::ALL.into_iter().map(MethodEntry::new).collect()
}

fn default_seeds() -> Vec<u64> {
    (0..20).collect()
}

fn default_fractions() -> Vec<f64> {
    vec![0.01, 0.05, 0.10]
}

fn default_overlaps() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

fn default_cos_tol() -> f64 {
    0.9
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

/// One experiment. See README for the field reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub mode: Mode,
    #[serde(default)]
    pub testbed: TestbedConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodEntry>,
    /// variant ids to unlearn; for transliteration, the languages whose scripts are crossed
    #[serde(default)]
    pub unlearn_langs: Vec<String>,
    /// variant ids to evaluate; empty means every declared variant
    #[serde(default)]
    pub eval_langs: Vec<String>,
    /// many-to-one: each entry is held out in turn and the rest of unlearn_langs is unlearned jointly
    #[serde(default)]
    pub held_out: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub reference_choice: ReferenceChoice,
    #[serde(default)]
    pub p_value: PValueMethod,
    #[serde(default = "default_fractions")]
    pub forget_fractions: Vec<f64>,
    #[serde(default = "default_overlaps")]
    pub overlap_grid: Vec<f64>,
    #[serde(default = "default_cos_tol")]
    pub interlingua_cos_tol: f64,
    #[serde(default)]
    pub intervention_model: InterventionModel,
    #[serde(default)]
    pub tsne: TsneConfig,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(mode: Mode) -> ExperimentConfig {
        serde_json::from_value(serde_json::json!({ "mode": mode })).expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message} (line {line}, column {column})")]
    Parse { path: String, message: String, line: usize, column: usize },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.into() }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ConfigError::Parse { path, message: inner.to_string(), line: inner.line(), column: inner.column() }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_config(&text)
}

impl ExperimentConfig {
    pub fn declared(&self) -> Vec<String> {
        self.testbed.languages.iter().map(|v| v.variant_id()).collect()
    }

    /// Evaluation variants with the empty-means-all rule applied.
    pub fn eval_variants(&self) -> Vec<String> {
        if self.eval_langs.is_empty() {
            self.declared()
        } else {
            self.eval_langs.clone()
        }
    }

    /// Languages (lang ids) declared with both a native and a sibling script.
    pub fn dual_script_langs(&self) -> Vec<String> {
        let langs = &self.testbed.languages;
        let mut out: Vec<String> = langs
            .iter()
            .filter(|v| v.is_sibling() && langs.iter().any(|n| !n.is_sibling() && n.lang_id == v.lang_id))
            .map(|v| v.lang_id.clone())
            .collect();
        out.dedup();
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid("schema_version", format!("expected {SCHEMA_VERSION}, found {}", self.schema_version)));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(invalid("seeds", "duplicate seed"));
        }
        let declared = self.declared();
        if declared.iter().collect::<BTreeSet<_>>().len() != declared.len() {
            return Err(invalid("testbed.languages", "duplicate variant"));
        }
        let check_langs = |field: &str, ls: &[String]| -> Result<(), ConfigError> {
            for (i, l) in ls.iter().enumerate() {
                if !declared.contains(l) {
                    return Err(invalid(format!("{field}[{i}]"), format!("{l} is not a declared language ({})", declared.join(", "))));
                }
            }
            Ok(())
        };
        check_langs("unlearn_langs", &self.unlearn_langs)?;
        check_langs("eval_langs", &self.eval_langs)?;
        check_langs("held_out", &self.held_out)?;
        if self.mode != Mode::Interventions {
            if self.methods.is_empty() {
                return Err(invalid("methods", "at least one method is required"));
            }
        }
        for (i, m) in self.methods.iter().enumerate() {
            m.config.validate().map_err(|e| invalid(format!("methods[{i}].config"), e.to_string()))?;
        }
        let needs_unlearn = !matches!(self.mode, Mode::ForgetSizeSweep);
        if needs_unlearn && self.unlearn_langs.is_empty() {
            return Err(invalid("unlearn_langs", format!("{} needs at least one language", self.mode.name())));
        }
        match self.mode {
            Mode::ManyToOne => {
                if self.held_out.is_empty() {
                    return Err(invalid("held_out", "many-to-one needs at least one held-out language"));
                }
                for (i, h) in self.held_out.iter().enumerate() {
                    let rest = self.unlearn_langs.iter().filter(|l| *l != h).count();
                    if rest < 2 {
                        return Err(invalid(format!("held_out[{i}]"), format!("holding out {h} leaves {rest} unlearn language(s); need ≥ 2")));
                    }
                }
            }
            Mode::Transliteration => {
                let duals = self.dual_script_langs();
                for (i, l) in self.unlearn_langs.iter().enumerate() {
                    let lang = &self.testbed.languages[declared.iter().position(|d| d == l).expect("checked")].lang_id;
                    if !duals.contains(lang) {
                        return Err(invalid(format!("unlearn_langs[{i}]"), format!("{l} has no second script declared")));
                    }
                }
                if self.overlap_grid.is_empty() || self.overlap_grid.iter().any(|o| !(0.0..=1.0).contains(o)) {
                    return Err(invalid("overlap_grid", "needs values in [0, 1]"));
                }
            }
            Mode::Interventions => {
                let bases = self.unlearn_langs.iter().filter(|l| !self.is_sibling(l)).count();
                if bases < 2 {
                    return Err(invalid("unlearn_langs", "interventions need at least two native-script languages"));
                }
                if !(self.interlingua_cos_tol > 0.0 && self.interlingua_cos_tol < 1.0) {
                    return Err(invalid("interlingua_cos_tol", "must lie in (0, 1)"));
                }
            }
            Mode::ForgetSizeSweep => {
                if self.forget_fractions.len() < 2 {
                    return Err(invalid("forget_fractions", "a sweep needs at least two fractions"));
                }
                if self.forget_fractions.iter().any(|f| !(*f > 0.0 && *f <= 0.5)) {
                    return Err(invalid("forget_fractions", "fractions must lie in (0, 0.5]"));
                }
            }
            Mode::OneToOne | Mode::MethodComparison => {}
        }
        // cheap dry render catches universe and language errors before any training
        let mut probe = self.testbed.clone();
        if self.mode == Mode::ForgetSizeSweep {
            for (i, &f) in self.forget_fractions.iter().enumerate() {
                probe.forget_fraction = f;
                Testbed::render(&probe, self.seeds[0]).map_err(|e| invalid(format!("forget_fractions[{i}]"), e.to_string()))?;
            }
        } else {
            Testbed::render(&probe, self.seeds[0]).map_err(|e| invalid("testbed", e.to_string()))?;
        }
        Ok(())
    }

    fn is_sibling(&self, variant: &str) -> bool {
        self.testbed.languages.iter().any(|v| v.variant_id() == variant && v.is_sibling())
    }

    /// SHA-256 of the canonical JSON of the config with the output directory
    /// blanked, so the hash names the experiment rather than where it was written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let canon = serde_json::to_string(&c).expect("config serializes");
        let d = Sha256::digest(canon.as_bytes());
        d.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}
