use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::TestbedError;

/// Number of false targets attached to every fact.
pub const K_FALSE: usize = 4;

/// Semantic token layout shared by every language before its token map is
/// applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub idk: u32,
    pub marker: u32,
    pub relation0: u32,
    pub subject0: u32,
    pub object0: u32,
    /// first filler id; everything from here to vocab_size is unused by facts
    pub filler0: u32,
}

impl Layout {
    fn new(n_facts: usize, n_relations: usize) -> Layout {
        let relation0 = 2;
        let subject0 = relation0 + n_relations as u32;
        let object0 = subject0 + n_facts as u32;
        Layout { idk: 0, marker: 1, relation0, subject0, object0, filler0: object0 + n_facts as u32 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub fact_id: usize,
    pub subject_id: u32,
    pub relation_id: u32,
    pub object_id: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactUniverse {
    pub seed: u64,
    pub vocab_size: usize,
    pub n_relations: usize,
    pub layout: Layout,
    pub facts: Vec<Fact>,
    pub forget_fraction: f64,
    pub forget_ids: Vec<usize>,
    pub retain_ids: Vec<usize>,
    /// reserved for UNLEARN's control tasks (subset of retain)
    pub control_task_ids: Vec<usize>,
    /// retain facts that no unlearning procedure touches; used for utility
    pub heldout_ids: Vec<usize>,
    /// per fact: ids of the facts whose objects serve as false targets
    pub false_target_facts: Vec<[usize; K_FALSE]>,
}

/// Builds a seeded universe of single-relation facts.
///
/// The forget set is relation-blocked: relations are visited in a seeded order
/// and the first ⌈fraction·n⌉ facts of that walk are forgotten, so a forget
/// set occupies as few relations as possible (the analog of forgetting whole
/// author profiles). False targets are other objects of the same relation.
pub fn generate_universe(
    n_facts: usize,
    n_relations: usize,
    vocab_size: usize,
    forget_fraction: f64,
    seed: u64,
) -> Result<FactUniverse, TestbedError> {
    if n_facts < 20 {
        return Err(TestbedError::InvalidConfig(format!("n_facts {n_facts} < 20")));
    }
    if !(forget_fraction > 0.0 && forget_fraction <= 0.5) {
        return Err(TestbedError::InvalidConfig(format!("forget_fraction {forget_fraction} outside (0, 0.5]")));
    }
    if n_relations == 0 || n_facts / n_relations < K_FALSE + 1 {
        return Err(TestbedError::InvalidConfig(format!(
            "{n_relations} relations leave fewer than {} facts per relation",
            K_FALSE + 1
        )));
    }
    let layout = Layout::new(n_facts, n_relations);
    if vocab_size < 4 * n_facts || (layout.filler0 as usize) > vocab_size {
        return Err(TestbedError::VocabTooSmall { vocab_size, n_facts });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects: Vec<u32> = (0..n_facts as u32).map(|i| layout.object0 + i).collect();
    objects.shuffle(&mut rng);
    let facts: Vec<Fact> = (0..n_facts)
        .map(|i| Fact {
            fact_id: i,
            subject_id: layout.subject0 + i as u32,
            relation_id: layout.relation0 + (i % n_relations) as u32,
            object_id: objects[i],
        })
        .collect();

    let by_relation: Vec<Vec<usize>> =
        (0..n_relations).map(|r| (0..n_facts).filter(|i| i % n_relations == r).collect()).collect();

    let n_forget = (forget_fraction * n_facts as f64 - 1e-9).ceil() as usize;
    let mut relation_order: Vec<usize> = (0..n_relations).collect();
    relation_order.shuffle(&mut rng);
    let mut walk = Vec::with_capacity(n_facts);
    for &r in &relation_order {
        let mut members = by_relation[r].clone();
        members.shuffle(&mut rng);
        walk.extend(members);
    }
    let mut forget_ids: Vec<usize> = walk[..n_forget].to_vec();
    let mut retain_ids: Vec<usize> = walk[n_forget..].to_vec();
    forget_ids.sort_unstable();

    let false_target_facts = (0..n_facts)
        .map(|f| {
            let mut others: Vec<usize> =
                by_relation[f % n_relations].iter().copied().filter(|&g| g != f).collect();
            others.shuffle(&mut rng);
            let mut picked = [0usize; K_FALSE];
            picked.copy_from_slice(&others[..K_FALSE]);
            picked
        })
        .collect();

    retain_ids.shuffle(&mut rng);
    let n_side = (n_facts / 5).min(retain_ids.len() / 3).max(1);
    let mut control_task_ids = retain_ids[..n_side].to_vec();
    let mut heldout_ids = retain_ids[n_side..2 * n_side].to_vec();
    control_task_ids.sort_unstable();
    heldout_ids.sort_unstable();
    retain_ids.sort_unstable();

    Ok(FactUniverse {
        seed,
        vocab_size,
        n_relations,
        layout,
        facts,
        forget_fraction,
        forget_ids,
        retain_ids,
        control_task_ids,
        heldout_ids,
        false_target_facts,
    })
}

impl FactUniverse {
    pub fn n_facts(&self) -> usize {
        self.facts.len()
    }

    /// Retain facts available as a regularization set for unlearning: retain
    /// minus control tasks minus held-out facts.
    pub fn retain_train_ids(&self) -> Vec<usize> {
        self.retain_ids
            .iter()
            .copied()
            .filter(|i| !self.control_task_ids.contains(i) && !self.heldout_ids.contains(i))
            .collect()
    }

    pub fn object_tokens(&self) -> Vec<u32> {
        (0..self.n_facts() as u32).map(|i| self.layout.object0 + i).collect()
    }

    /// Semantic ids every base-language map keeps fixed: the refusal token plus
    /// a seeded `share` fraction of object ids (named entities spelled alike).
    pub fn anchor_tokens(&self, share: f64) -> Vec<u32> {
        let mut objs = self.object_tokens();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_0b1e);
        objs.shuffle(&mut rng);
        let k = ((share.clamp(0.0, 1.0) * objs.len() as f64).round()) as usize;
        let mut out = vec![self.layout.idk];
        out.extend_from_slice(&objs[..k]);
        out.sort_unstable();
        out
    }
}
