//! Stratified sampling of instances for qualitative annotation.
//!
//! `per_relation` instances are drawn for each relation, split evenly over
//! the subsets present in the dumps and then over annotators. With the
//! defaults (20 per relation, 2 annotators, top 10) and both subsets present
//! this gives 10 instances per relation and subset, 30 per subset, 60 in
//! total, and each annotator sees 10 per relation.

use std::collections::{BTreeSet, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ReportError;
use crate::dump::CompletionDump;
use crate::template::{Relation, Subset, TemplateManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleOptions {
    pub per_relation: usize,
    pub annotators: usize,
    pub top_m: usize,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            per_relation: 20,
            annotators: 2,
            top_m: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelPredictions {
    pub model_id: String,
    /// `(rank, fill_in)` for the top-m completions.
    pub fill_ins: Vec<(u32, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationRow {
    pub template_id: String,
    pub text: String,
    pub relation: Relation,
    pub identity_id: String,
    pub annotator_id: usize,
    pub predictions: Vec<ModelPredictions>,
    /// Left empty for the annotator.
    pub judgment: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationSheet {
    pub subset: Subset,
    pub annotator_id: usize,
    pub rows: Vec<AnnotationRow>,
}

pub const SHEET_HEADER: [&str; 10] = [
    "subset",
    "annotator_id",
    "instance",
    "template_id",
    "text",
    "relation",
    "identity_id",
    "model_id",
    "predictions",
    "judgment",
];

impl AnnotationSheet {
    pub fn file_name(&self) -> String {
        format!("annotation_{}_annotator{}.csv", self.subset, self.annotator_id)
    }

    /// One CSV line per (instance, model).
    pub fn to_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(SHEET_HEADER).expect("in-memory write");
        for (i, row) in self.rows.iter().enumerate() {
            for preds in &row.predictions {
                let listed = preds
                    .fill_ins
                    .iter()
                    .map(|(rank, fill)| format!("{rank}. {fill}"))
                    .collect::<Vec<_>>()
                    .join(" | ");
                wtr.write_record([
                    self.subset.as_str(),
                    &row.annotator_id.to_string(),
                    &(i + 1).to_string(),
                    &row.template_id,
                    &row.text,
                    row.relation.as_str(),
                    &row.identity_id,
                    &preds.model_id,
                    &listed,
                    &row.judgment,
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

/// Sentence-case a template for display; stored text stays lowercase.
fn presentation_case(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub fn sample_for_annotation(
    dumps: &[&CompletionDump],
    manifest: &TemplateManifest,
    options: SampleOptions,
    seed: u64,
) -> Result<Vec<AnnotationSheet>, ReportError> {
    let SampleOptions {
        per_relation,
        annotators,
        top_m,
    } = options;
    if per_relation == 0 || annotators == 0 || top_m == 0 {
        return Err(ReportError::Config(
            "per_relation, annotators and top_m must all be positive".into(),
        ));
    }
    if let Some(d) = dumps.iter().find(|d| d.k_max < top_m) {
        return Err(ReportError::Config(format!(
            "top_m = {top_m} exceeds k_max = {} of `{}`",
            d.k_max, d.model.model_id
        )));
    }
    let subsets: BTreeSet<Subset> = dumps.iter().map(|d| d.subset).collect();
    if subsets.is_empty() {
        return Err(ReportError::Config("no dumps to sample from".into()));
    }
    let divisor = subsets.len() * annotators;
    if per_relation % divisor != 0 {
        return Err(ReportError::IndivisibleSplit { per_relation, divisor });
    }
    let per_subset = per_relation / subsets.len();
    let per_annotator = per_subset / annotators;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sheets = Vec::new();
    for &subset in &subsets {
        let subset_dumps: Vec<&CompletionDump> = dumps.iter().copied().filter(|d| d.subset == subset).collect();
        let indexes: Vec<_> = subset_dumps.iter().map(|d| d.view().index()).collect();
        let covered = |id: &str| indexes.iter().all(|ix| ix.contains_key(id));

        let mut rows_by_annotator: Vec<Vec<AnnotationRow>> = vec![Vec::new(); annotators];
        for &relation in Relation::ALL {
            let candidates: Vec<_> = manifest
                .templates()
                .iter()
                .filter(|t| t.subset == subset && t.relation == relation && covered(&t.id))
                .collect();
            if candidates.len() < per_subset {
                return Err(ReportError::NotEnoughInstances {
                    subset,
                    relation,
                    available: candidates.len(),
                    needed: per_subset,
                });
            }
            let picks = rand::seq::index::sample(&mut rng, candidates.len(), per_subset).into_vec();
            debug_assert_eq!(picks.iter().collect::<HashSet<_>>().len(), picks.len());
            for (slot, &pick) in picks.iter().enumerate() {
                let template = candidates[pick];
                let annotator = slot / per_annotator;
                let predictions = subset_dumps
                    .iter()
                    .zip(&indexes)
                    .map(|(d, ix)| ModelPredictions {
                        model_id: d.model.model_id.clone(),
                        fill_ins: ix[template.id.as_str()][..top_m]
                            .iter()
                            .map(|c| (c.rank, c.fill_in.clone()))
                            .collect(),
                    })
                    .collect();
                rows_by_annotator[annotator].push(AnnotationRow {
                    template_id: template.id.clone(),
                    text: presentation_case(&template.text),
                    relation,
                    identity_id: template.identity_id.clone(),
                    annotator_id: annotator + 1,
                    predictions,
                    judgment: String::new(),
                });
            }
        }
        for (i, rows) in rows_by_annotator.into_iter().enumerate() {
            sheets.push(AnnotationSheet {
                subset,
                annotator_id: i + 1,
                rows,
            });
        }
    }
    Ok(sheets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dump::{Completion, ModelDescriptor, ModelKind, ScaleLabel, TemplateCompletions};
    use crate::template::{AgeGroup, GenderGroup, Template};

    fn manifest(per_relation: usize, subsets: &[Subset]) -> TemplateManifest {
        let mut templates = Vec::new();
        for &subset in subsets {
            for &relation in Relation::ALL {
                for i in 0..per_relation {
                    templates.push(Template {
                        id: format!("{subset}-{relation}-{i}"),
                        text: format!("the person {i} is {relation} [SLOT]"),
                        identity_id: format!("p{i}"),
                        predicate_id: relation.to_string(),
                        relation,
                        gender_group: GenderGroup::Other,
                        age_group: AgeGroup::Other,
                        subset,
                    });
                }
            }
        }
        TemplateManifest::new(templates).unwrap()
    }

    fn dump(manifest: &TemplateManifest, subset: Subset, k: usize) -> CompletionDump {
        CompletionDump {
            model: ModelDescriptor {
                model_id: format!("m-{subset}"),
                family: "F".into(),
                scale_label: ScaleLabel::Small,
                param_count: 1,
                kind: ModelKind::Masked,
            },
            subset,
            k_max: k,
            template_manifest_hash: manifest.hash(),
            producer_version: String::new(),
            templates: manifest
                .templates()
                .iter()
                .filter(|t| t.subset == subset)
                .map(|t| TemplateCompletions {
                    template_id: t.id.clone(),
                    completions: (1..=k as u32)
                        .map(|r| Completion { rank: r, fill_in: format!("w{r}"), log_likelihood: -(r as f64) })
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn small_single_subset() {
        let m = manifest(5, &[Subset::Binary]);
        let d = dump(&m, Subset::Binary, 3);
        let opts = SampleOptions { per_relation: 2, annotators: 1, top_m: 3 };
        let sheets = sample_for_annotation(&[&d], &m, opts, 7).unwrap();
        assert_eq!(sheets.len(), 1);
        assert_eq!(sheets[0].rows.len(), 6);
        assert_eq!(sheets[0].rows[0].predictions[0].fill_ins.len(), 3);
        assert!(sheets[0].rows[0].text.starts_with("The person"));
    }

    #[test]
    fn indivisible_split() {
        let m = manifest(5, &[Subset::Binary]);
        let d = dump(&m, Subset::Binary, 3);
        let opts = SampleOptions { per_relation: 3, annotators: 2, top_m: 1 };
        assert!(matches!(
            sample_for_annotation(&[&d], &m, opts, 0),
            Err(ReportError::IndivisibleSplit { per_relation: 3, divisor: 2 })
        ));
    }

    #[test]
    fn not_enough_instances() {
        let m = manifest(1, &[Subset::Binary]);
        let d = dump(&m, Subset::Binary, 3);
        let opts = SampleOptions { per_relation: 2, annotators: 1, top_m: 1 };
        assert!(matches!(
            sample_for_annotation(&[&d], &m, opts, 0),
            Err(ReportError::NotEnoughInstances { relation: Relation::Occupation, .. })
        ));
    }

    #[test]
    fn defaults_on_both_subsets() {
        let m = manifest(12, &[Subset::Binary, Subset::Queer]);
        let b = dump(&m, Subset::Binary, 10);
        let q = dump(&m, Subset::Queer, 10);
        let sheets = sample_for_annotation(&[&b, &q], &m, SampleOptions::default(), 42).unwrap();
        assert_eq!(sheets.len(), 4);
        let total: usize = sheets.iter().map(|s| s.rows.len()).sum();
        assert_eq!(total, 60);
        for subset in [Subset::Binary, Subset::Queer] {
            let rows: Vec<_> = sheets.iter().filter(|s| s.subset == subset).flat_map(|s| &s.rows).collect();
            assert_eq!(rows.len(), 30);
            let unique: HashSet<_> = rows.iter().map(|r| &r.template_id).collect();
            assert_eq!(unique.len(), 30);
        }
        for annotator in [1, 2] {
            for &relation in Relation::ALL {
                let n = sheets
                    .iter()
                    .flat_map(|s| &s.rows)
                    .filter(|r| r.annotator_id == annotator && r.relation == relation)
                    .count();
                assert_eq!(n, 10);
            }
        }
        assert!(sheets.iter().flat_map(|s| &s.rows).all(|r| r.predictions[0].fill_ins.len() == 10));
    }

    #[test]
    fn seeded_and_reproducible() {
        let m = manifest(8, &[Subset::Binary]);
        let d = dump(&m, Subset::Binary, 2);
        let opts = SampleOptions { per_relation: 4, annotators: 2, top_m: 2 };
        let a = sample_for_annotation(&[&d], &m, opts, 99).unwrap();
        let b = sample_for_annotation(&[&d], &m, opts, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].to_csv(), b[0].to_csv());
    }

    #[test]
    fn sheet_csv_shape() {
        let m = manifest(2, &[Subset::Binary]);
        let d = dump(&m, Subset::Binary, 2);
        let opts = SampleOptions { per_relation: 1, annotators: 1, top_m: 2 };
        let sheet = &sample_for_annotation(&[&d], &m, opts, 1).unwrap()[0];
        let text = sheet.to_csv();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(rdr.headers().unwrap().len(), SHEET_HEADER.len());
        let rows: Vec<_> = rdr.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 3);
        assert_eq!(&rows[0][8], "1. w1 | 2. w2");
        assert_eq!(&rows[0][9], "");
        assert_eq!(sheet.file_name(), "annotation_binary_annotator1.csv");
    }
}
