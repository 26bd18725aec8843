#![allow(dead_code)]

use std::path::PathBuf;

use honest_audit::dump::{Completion, CompletionDump, ModelDescriptor, ModelKind, ScaleLabel, TemplateCompletions};
use honest_audit::lexicon::Lexicon;
use honest_audit::template::{AgeGroup, GenderGroup, Relation, Subset, Template, TemplateManifest};
use rand::seq::SliceRandom;
use rand::Rng;

pub const VOCAB: [&str; 16] = [
    "nurse", "teacher", "doctor", "maid", "thief", "idiot", "kind", "smart", "ugly", "stupid", "sing", "dance",
    "kill", "read", "cook", "lawyer",
];

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn descriptor(id: &str, family: &str, scale: ScaleLabel) -> ModelDescriptor {
    ModelDescriptor {
        model_id: id.into(),
        family: family.into(),
        scale_label: scale,
        param_count: 1,
        kind: ModelKind::Masked,
    }
}

/// A dump over the given template ids, one fill-in list per template.
pub fn dump_from(model: ModelDescriptor, ids: &[String], fills: &[Vec<String>]) -> CompletionDump {
    let k_max = fills[0].len();
    CompletionDump {
        model,
        subset: Subset::Binary,
        k_max,
        template_manifest_hash: String::new(),
        producer_version: "test".into(),
        templates: ids
            .iter()
            .zip(fills)
            .map(|(id, row)| TemplateCompletions {
                template_id: id.clone(),
                completions: row
                    .iter()
                    .enumerate()
                    .map(|(j, w)| Completion {
                        rank: j as u32 + 1,
                        fill_in: w.clone(),
                        log_likelihood: -(j as f64),
                    })
                    .collect(),
            })
            .collect(),
    }
}

pub fn random_fills<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<Vec<String>> {
    (0..n)
        .map(|_| (0..k).map(|_| VOCAB.choose(rng).unwrap().to_string()).collect())
        .collect()
}

/// Binary-subset templates with random group labels.
pub fn random_manifest<R: Rng>(rng: &mut R, n: usize) -> TemplateManifest {
    let templates = (0..n)
        .map(|i| Template {
            id: format!("t{i:03}"),
            text: format!("template {i} [SLOT]"),
            identity_id: format!("id{i}"),
            predicate_id: "p".into(),
            relation: *Relation::ALL.choose(rng).unwrap(),
            gender_group: *GenderGroup::ALL.choose(rng).unwrap(),
            age_group: *AgeGroup::ALL.choose(rng).unwrap(),
            subset: Subset::Binary,
        })
        .collect();
    TemplateManifest::new(templates).unwrap()
}

pub fn random_lexicon<R: Rng>(rng: &mut R) -> Lexicon {
    let n = rng.gen_range(1..=VOCAB.len());
    let terms: Vec<&str> = VOCAB.choose_multiple(rng, n).copied().collect();
    Lexicon::from_entries(terms.into_iter().map(|t| (t, "x")), "random").unwrap()
}

/// Independent double loop over templates and ranks.
pub fn oracle_honest(fills: &[Vec<String>], lexicon_terms: &[&str], k: usize) -> f64 {
    let mut hits = 0u64;
    for row in fills {
        for word in row.iter().take(k) {
            if lexicon_terms.contains(&word.as_str()) {
                hits += 1;
            }
        }
    }
    hits as f64 / (fills.len() * k) as f64
}
