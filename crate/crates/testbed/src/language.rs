use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::TestbedError;

pub const NATIVE_SCRIPT: &str = "native";

/// A synthetic language: a bijection of the semantic vocabulary onto surface
/// tokens. Script variants of one language share `lang_id` and differ in
/// `script_id`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub lang_id: String,
    pub script_id: String,
    pub vocab_size: usize,
    pub token_map_seed: u64,
    /// fraction of token images shared with the sibling script it was derived
    /// from (1.0 for a base script)
    pub script_overlap: f64,
    token_map: Vec<u32>,
}

impl LanguageSpec {
    /// Base script: a seeded permutation that keeps every id in `anchors` fixed.
    pub fn new(
        lang_id: &str,
        script_id: &str,
        vocab_size: usize,
        token_map_seed: u64,
        anchors: &[u32],
    ) -> Result<LanguageSpec, TestbedError> {
        if let Some(a) = anchors.iter().find(|&&a| a as usize >= vocab_size) {
            return Err(TestbedError::InvalidConfig(format!("anchor {a} outside vocab {vocab_size}")));
        }
        let mut fixed = vec![false; vocab_size];
        for &a in anchors {
            fixed[a as usize] = true;
        }
        let free: Vec<u32> = (0..vocab_size as u32).filter(|&t| !fixed[t as usize]).collect();
        let mut images = free.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(token_map_seed);
        images.shuffle(&mut rng);
        let mut token_map: Vec<u32> = (0..vocab_size as u32).collect();
        for (src, dst) in free.iter().zip(images) {
            token_map[*src as usize] = dst;
        }
        Ok(LanguageSpec {
            lang_id: lang_id.to_string(),
            script_id: script_id.to_string(),
            vocab_size,
            token_map_seed,
            script_overlap: 1.0,
            token_map,
        })
    }

    /// Identity map, handy for tests and for an untranslated pivot.
    pub fn identity(lang_id: &str, script_id: &str, vocab_size: usize) -> LanguageSpec {
        LanguageSpec {
            lang_id: lang_id.to_string(),
            script_id: script_id.to_string(),
            vocab_size,
            token_map_seed: 0,
            script_overlap: 1.0,
            token_map: (0..vocab_size as u32).collect(),
        }
    }

    /// Sibling script sharing exactly ⌈overlap·V⌉ token images with `self`.
    ///
    /// The V − ⌈overlap·V⌉ changed positions are picked by seed and cyclically
    /// shifted among themselves, which is a derangement, so none of them keeps
    /// its image. The refusal id 0 is only changed when every position must be.
    pub fn sibling(
        &self,
        script_id: &str,
        overlap: f64,
        token_map_seed: u64,
    ) -> Result<LanguageSpec, TestbedError> {
        self.sibling_with(script_id, overlap, token_map_seed, &[])
    }

    /// As [`LanguageSpec::sibling`], but the ids in `must_change` are changed
    /// first whenever at least two positions change. Used to give a script its
    /// own language marker.
    pub fn sibling_with(
        &self,
        script_id: &str,
        overlap: f64,
        token_map_seed: u64,
        must_change: &[u32],
    ) -> Result<LanguageSpec, TestbedError> {
        if !(0.0..=1.0).contains(&overlap) {
            return Err(TestbedError::InvalidConfig(format!("script_overlap {overlap} outside [0,1]")));
        }
        if script_id == self.script_id {
            return Err(TestbedError::InvalidConfig("sibling must use a different script_id".into()));
        }
        let v = self.vocab_size;
        if let Some(t) = must_change.iter().find(|&&t| t == 0 || t as usize >= v) {
            return Err(TestbedError::InvalidConfig(format!("cannot force a change of id {t}")));
        }
        let shared = shared_count(overlap, v);
        let n_change = v - shared;
        if n_change == 1 {
            return Err(TestbedError::InvalidConfig(format!(
                "overlap {overlap} leaves exactly one changed token, which no bijection allows"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(token_map_seed);
        let mut rest: Vec<usize> = (1..v).filter(|t| !must_change.contains(&(*t as u32))).collect();
        rest.shuffle(&mut rng);
        let mut positions: Vec<usize> = must_change.iter().map(|&t| t as usize).collect();
        positions.extend(rest);
        positions.push(0);
        let mut change: Vec<usize> = positions[..n_change].to_vec();
        change.sort_unstable();
        change.shuffle(&mut rng);
        let mut token_map = self.token_map.clone();
        for i in 0..change.len() {
            let from = change[(i + change.len() - 1) % change.len()];
            token_map[change[i]] = self.token_map[from];
        }
        Ok(LanguageSpec {
            lang_id: self.lang_id.clone(),
            script_id: script_id.to_string(),
            vocab_size: v,
            token_map_seed,
            script_overlap: overlap,
            token_map,
        })
    }

    /// Short label used in reports: `hi` for the native script, `hi_la` for a
    /// romanized sibling.
    pub fn variant_id(&self) -> String {
        if self.script_id == NATIVE_SCRIPT {
            self.lang_id.clone()
        } else {
            format!("{}_{}", self.lang_id, self.script_id)
        }
    }

    #[inline]
    pub fn map(&self, semantic: u32) -> u32 {
        self.token_map[semantic as usize]
    }

    pub fn token_map(&self) -> &[u32] {
        &self.token_map
    }

    pub fn inverse(&self) -> Vec<u32> {
        let mut inv = vec![0u32; self.vocab_size];
        for (s, &t) in self.token_map.iter().enumerate() {
            inv[t as usize] = s as u32;
        }
        inv
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.vocab_size];
        for &t in &self.token_map {
            if t as usize >= self.vocab_size || seen[t as usize] {
                return false;
            }
            seen[t as usize] = true;
        }
        self.token_map.len() == self.vocab_size
    }

    /// Number of semantic ids mapped to the same token by both specs.
    pub fn shared_images(&self, other: &LanguageSpec) -> usize {
        self.token_map.iter().zip(&other.token_map).filter(|(a, b)| a == b).count()
    }
}

/// ⌈overlap·V⌉ with a guard against binary-float noise such as 0.3·10.
pub fn shared_count(overlap: f64, vocab_size: usize) -> usize {
    ((overlap * vocab_size as f64) - 1e-9).ceil().max(0.0) as usize
}
