use serde::{Deserialize, Serialize};

use crate::language::LanguageSpec;
use crate::universe::{FactUniverse, K_FALSE};
use crate::TestbedError;

/// Input length: (subject, relation, language marker).
pub const INPUT_LEN: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactExample {
    pub fact_id: usize,
    pub lang_id: String,
    pub script_id: String,
    pub input_tokens: [u32; INPUT_LEN],
    pub target_token: u32,
    pub false_targets: [u32; K_FALSE],
}

/// One example per fact, rendered through the language's token map.
pub fn render_language(u: &FactUniverse, spec: &LanguageSpec) -> Result<Vec<FactExample>, TestbedError> {
    if spec.vocab_size < u.vocab_size {
        return Err(TestbedError::InvalidConfig(format!(
            "language vocab {} smaller than universe vocab {}",
            spec.vocab_size, u.vocab_size
        )));
    }
    let marker = spec.map(u.layout.marker);
    Ok(u.facts
        .iter()
        .map(|f| {
            let ft = u.false_target_facts[f.fact_id];
            FactExample {
                fact_id: f.fact_id,
                lang_id: spec.lang_id.clone(),
                script_id: spec.script_id.clone(),
                input_tokens: [spec.map(f.subject_id), spec.map(f.relation_id), marker],
                target_token: spec.map(f.object_id),
                false_targets: ft.map(|g| spec.map(u.facts[g].object_id)),
            }
        })
        .collect())
}

/// Re-renders examples written in `source` through its script sibling.
pub fn transliterate(
    examples: &[FactExample],
    source: &LanguageSpec,
    sibling: &LanguageSpec,
) -> Result<Vec<FactExample>, TestbedError> {
    if sibling.lang_id != source.lang_id {
        return Err(TestbedError::LanguageMismatch {
            expected: source.lang_id.clone(),
            found: sibling.lang_id.clone(),
        });
    }
    if sibling.script_id == source.script_id {
        return Err(TestbedError::InvalidConfig("transliteration needs a different script".into()));
    }
    let inv = source.inverse();
    let re = |t: u32| sibling.map(inv[t as usize]);
    examples
        .iter()
        .map(|ex| {
            if ex.lang_id != source.lang_id || ex.script_id != source.script_id {
                return Err(TestbedError::LanguageMismatch {
                    expected: format!("{}/{}", source.lang_id, source.script_id),
                    found: format!("{}/{}", ex.lang_id, ex.script_id),
                });
            }
            Ok(FactExample {
                fact_id: ex.fact_id,
                lang_id: sibling.lang_id.clone(),
                script_id: sibling.script_id.clone(),
                input_tokens: ex.input_tokens.map(re),
                target_token: re(ex.target_token),
                false_targets: ex.false_targets.map(re),
            })
        })
        .collect()
}

/// Selects the examples of the given fact ids, in the order of `ids`.
pub fn subset(examples: &[FactExample], ids: &[usize]) -> Vec<FactExample> {
    ids.iter()
        .map(|&i| {
            let ex = &examples[i];
            debug_assert_eq!(ex.fact_id, i);
            ex.clone()
        })
        .collect()
}
