use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::FactExample;
use crate::language::LanguageSpec;
use crate::universe::FactUniverse;
use crate::TestbedError;

pub const REPLAY_SCHEMA: u32 = 1;

/// Everything needed to replay an experiment's data side.
///
/// ```text
/// {
///   "schema": 1,
///   "universe": { "seed", "vocab_size", "n_relations", "layout", "facts": [{fact_id, subject_id, relation_id, object_id}],
///                 "forget_fraction", "forget_ids", "retain_ids", "control_task_ids", "heldout_ids", "false_target_facts" },
///   "languages": [{ "lang_id", "script_id", "vocab_size", "token_map_seed", "script_overlap", "token_map": [..] }],
///   "datasets": [[{ "fact_id", "lang_id", "script_id", "input_tokens", "target_token", "false_targets" }]]
/// }
/// ```
/// `datasets[i]` is the rendering of `languages[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replay {
    pub schema: u32,
    pub universe: FactUniverse,
    pub languages: Vec<LanguageSpec>,
    pub datasets: Vec<Vec<FactExample>>,
}

impl Replay {
    pub fn new(universe: FactUniverse, languages: Vec<LanguageSpec>, datasets: Vec<Vec<FactExample>>) -> Replay {
        Replay { schema: REPLAY_SCHEMA, universe, languages, datasets }
    }
}

pub fn write_replay(path: &Path, r: &Replay) -> Result<(), TestbedError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, r)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_replay(path: &Path) -> Result<Replay, TestbedError> {
    let r: Replay = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if r.schema != REPLAY_SCHEMA {
        return Err(TestbedError::Replay(format!("schema {} not supported (expected {REPLAY_SCHEMA})", r.schema)));
    }
    if r.languages.len() != r.datasets.len() {
        return Err(TestbedError::Replay("languages and datasets differ in length".into()));
    }
    if let Some(l) = r.languages.iter().find(|l| !l.is_bijection()) {
        return Err(TestbedError::Replay(format!("token map of {} is not a bijection", l.variant_id())));
    }
    Ok(r)
}
