//! Completion dumps: each model's ranked top-K fill-ins per template.
//!
//! A dump is JSON Lines. The first line is a header describing the model and
//! the manifest the dump was generated against; every following line is one
//! ranked completion. Records of one template must be contiguous and carry
//! ranks `1..=k_max` in order with non-increasing log-likelihood. Validation
//! happens while streaming, so a malformed dump is rejected at the first
//! offending line.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::template::{label_enum, Subset, Template, TemplateManifest};

label_enum!(ScaleLabel {
    Small => "small",
    Medium => "medium",
    Large => "large",
});

label_enum!(ModelKind {
    Masked => "masked",
    Causal => "causal",
});

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("line {line}: {message}")]
    SchemaViolation { line: u64, message: String },
    #[error("template `{template_id}`: rank {rank} missing or out of order")]
    RankGap { template_id: String, rank: u32 },
    #[error("template `{template_id}`: log-likelihood at rank {rank} exceeds the previous rank")]
    LikelihoodOrderViolation { template_id: String, rank: u32 },
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("k = {k} outside 1..={k_max}")]
    KOutOfRange { k: usize, k_max: usize },
    #[error("template `{0}` is not in the manifest")]
    UnknownTemplateId(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub model_id: String,
    pub family: String,
    pub scale_label: ScaleLabel,
    pub param_count: u64,
    pub kind: ModelKind,
}

/// First line of a dump file. Field order here is the canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DumpHeader {
    model_id: String,
    family: String,
    scale_label: ScaleLabel,
    param_count: u64,
    kind: ModelKind,
    subset: Subset,
    k_max: usize,
    template_manifest_hash: String,
    producer_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionRecord {
    pub template_id: String,
    pub rank: u32,
    pub fill_in: String,
    /// Natural-log probability of the fill-in, `<= 0`.
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub rank: u32,
    pub fill_in: String,
    pub log_likelihood: f64,
}

/// The ranked completions of one template, rank 1 first.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateCompletions {
    pub template_id: String,
    pub completions: Vec<Completion>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionDump {
    pub model: ModelDescriptor,
    pub subset: Subset,
    pub k_max: usize,
    pub template_manifest_hash: String,
    pub producer_version: String,
    pub templates: Vec<TemplateCompletions>,
}

impl CompletionDump {
    pub fn view(&self) -> DumpView<'_> {
        DumpView {
            dump: self,
            depth: self.k_max,
            blocks: self.templates.iter().collect(),
        }
    }

    pub fn record_count(&self) -> usize {
        self.templates.iter().map(|t| t.completions.len()).sum()
    }

    /// All records in file order.
    pub fn records(&self) -> impl Iterator<Item = CompletionRecord> + '_ {
        self.templates.iter().flat_map(|t| {
            t.completions.iter().map(move |c| CompletionRecord {
                template_id: t.template_id.clone(),
                rank: c.rank,
                fill_in: c.fill_in.clone(),
                log_likelihood: c.log_likelihood,
            })
        })
    }

    /// Check the dump against the manifest it claims to be generated from:
    /// matching hash, and exactly the manifest's templates of this subset.
    pub fn verify_against(&self, manifest: &TemplateManifest) -> Result<(), DumpError> {
        let expected = manifest.hash();
        if self.template_manifest_hash != expected {
            return Err(DumpError::ManifestMismatch(format!(
                "dump `{}` was generated against {}, manifest hashes to {}",
                self.model.model_id, self.template_manifest_hash, expected
            )));
        }
        let mut present = HashSet::with_capacity(self.templates.len());
        for block in &self.templates {
            match manifest.get(&block.template_id) {
                None => return Err(DumpError::UnknownTemplateId(block.template_id.clone())),
                Some(t) if t.subset != self.subset => {
                    return Err(DumpError::ManifestMismatch(format!(
                        "template `{}` belongs to subset {}, dump is {}",
                        t.id, t.subset, self.subset
                    )))
                }
                Some(_) => {
                    present.insert(block.template_id.as_str());
                }
            }
        }
        if let Some(missing) = manifest
            .templates()
            .iter()
            .find(|t| t.subset == self.subset && !present.contains(t.id.as_str()))
        {
            return Err(DumpError::ManifestMismatch(format!(
                "dump `{}` has no completions for template `{}`",
                self.model.model_id, missing.id
            )));
        }
        Ok(())
    }

    fn header(&self) -> DumpHeader {
        DumpHeader {
            model_id: self.model.model_id.clone(),
            family: self.model.family.clone(),
            scale_label: self.model.scale_label,
            param_count: self.model.param_count,
            kind: self.model.kind,
            subset: self.subset,
            k_max: self.k_max,
            template_manifest_hash: self.template_manifest_hash.clone(),
            producer_version: self.producer_version.clone(),
        }
    }
}

fn schema(line: u64, message: impl Into<String>) -> DumpError {
    DumpError::SchemaViolation {
        line,
        message: message.into(),
    }
}

/// Incremental validator for one template's block of records.
struct Block {
    template_id: String,
    completions: Vec<Completion>,
}

impl Block {
    fn push(&mut self, rec: CompletionRecord, k_max: usize, line: u64) -> Result<(), DumpError> {
        let expected = self.completions.len() as u32 + 1;
        if expected as usize > k_max {
            return Err(schema(
                line,
                format!("template `{}` has more than k_max = {k_max} records", self.template_id),
            ));
        }
        if rec.rank != expected {
            return Err(DumpError::RankGap {
                template_id: self.template_id.clone(),
                rank: expected,
            });
        }
        if let Some(prev) = self.completions.last() {
            if rec.log_likelihood > prev.log_likelihood {
                return Err(DumpError::LikelihoodOrderViolation {
                    template_id: self.template_id.clone(),
                    rank: rec.rank,
                });
            }
        }
        self.completions.push(Completion {
            rank: rec.rank,
            fill_in: rec.fill_in,
            log_likelihood: rec.log_likelihood,
        });
        Ok(())
    }

    fn finish(self, k_max: usize) -> Result<TemplateCompletions, DumpError> {
        if self.completions.len() != k_max {
            return Err(DumpError::RankGap {
                template_id: self.template_id,
                rank: self.completions.len() as u32 + 1,
            });
        }
        Ok(TemplateCompletions {
            template_id: self.template_id,
            completions: self.completions,
        })
    }
}

/// Parse and validate a dump from any reader.
pub fn read_dump_from<R: Read>(reader: R) -> Result<CompletionDump, DumpError> {
    let mut lines = BufReader::new(reader).lines();
    let mut line_no = 0u64;

    let header: DumpHeader = loop {
        line_no += 1;
        match lines.next() {
            None => return Err(schema(line_no, "missing header line")),
            Some(line) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| schema(line_no, format!("header: {e}")))?;
            }
        }
    };
    if header.param_count == 0 {
        return Err(schema(line_no, "param_count must be positive"));
    }
    if header.k_max == 0 {
        return Err(schema(line_no, "k_max must be at least 1"));
    }
    let k_max = header.k_max;

    let mut templates = Vec::new();
    let mut finished: HashSet<String> = HashSet::new();
    let mut current: Option<Block> = None;
    for line in lines {
        line_no += 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CompletionRecord =
            serde_json::from_str(&line).map_err(|e| schema(line_no, e.to_string()))?;
        if !rec.log_likelihood.is_finite() || rec.log_likelihood > 0.0 {
            return Err(schema(line_no, "log_likelihood must be finite and <= 0"));
        }
        let same = current.as_ref().is_some_and(|b| b.template_id == rec.template_id);
        if !same {
            if let Some(block) = current.take() {
                finished.insert(block.template_id.clone());
                templates.push(block.finish(k_max)?);
            }
            if finished.contains(&rec.template_id) {
                return Err(schema(
                    line_no,
                    format!("records of template `{}` are not contiguous", rec.template_id),
                ));
            }
            current = Some(Block {
                template_id: rec.template_id.clone(),
                completions: Vec::with_capacity(k_max),
            });
        }
        current
            .as_mut()
            .expect("block opened above")
            .push(rec, k_max, line_no)?;
    }
    if let Some(block) = current.take() {
        templates.push(block.finish(k_max)?);
    }

    Ok(CompletionDump {
        model: ModelDescriptor {
            model_id: header.model_id,
            family: header.family,
            scale_label: header.scale_label,
            param_count: header.param_count,
            kind: header.kind,
        },
        subset: header.subset,
        k_max,
        template_manifest_hash: header.template_manifest_hash,
        producer_version: header.producer_version,
        templates,
    })
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<CompletionDump, DumpError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|err| match err.kind() {
        std::io::ErrorKind::NotFound => DumpError::MissingFile(path.to_path_buf()),
        _ => DumpError::Io(err),
    })?;
    read_dump_from(file)
}

/// [`read_dump`] followed by [`CompletionDump::verify_against`].
pub fn read_dump_checked(
    path: impl AsRef<Path>,
    manifest: &TemplateManifest,
) -> Result<CompletionDump, DumpError> {
    let dump = read_dump(path)?;
    dump.verify_against(manifest)?;
    Ok(dump)
}

/// Canonical serialization: header, then records grouped by template.
pub fn write_dump<W: Write>(dump: &CompletionDump, mut writer: W) -> std::io::Result<()> {
    serde_json::to_writer(&mut writer, &dump.header())?;
    writer.write_all(b"\n")?;
    for rec in dump.records() {
        serde_json::to_writer(&mut writer, &rec)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// A read-only window onto a dump: a subset of its templates, each truncated
/// to the first `depth` ranks.
#[derive(Debug, Clone)]
pub struct DumpView<'a> {
    dump: &'a CompletionDump,
    depth: usize,
    blocks: Vec<&'a TemplateCompletions>,
}

impl<'a> DumpView<'a> {
    pub fn dump(&self) -> &'a CompletionDump {
        self.dump
    }

    pub fn model(&self) -> &'a ModelDescriptor {
        &self.dump.model
    }

    pub fn subset(&self) -> Subset {
        self.dump.subset
    }

    pub fn k_max(&self) -> usize {
        self.dump.k_max
    }

    /// Number of ranks visible per template.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn record_count(&self) -> usize {
        self.blocks.len() * self.depth
    }

    /// `(template_id, completions)` pairs, completions truncated to depth.
    pub fn templates(&self) -> impl Iterator<Item = (&'a str, &'a [Completion])> + '_ {
        let depth = self.depth;
        self.blocks
            .iter()
            .map(move |b| (b.template_id.as_str(), &b.completions[..depth]))
    }

    pub fn index(&self) -> HashMap<&'a str, &'a [Completion]> {
        self.templates().collect()
    }

    pub fn slice_top(&self, k: usize) -> Result<DumpView<'a>, DumpError> {
        if k == 0 || k > self.dump.k_max {
            return Err(DumpError::KOutOfRange {
                k,
                k_max: self.dump.k_max,
            });
        }
        Ok(DumpView {
            dump: self.dump,
            depth: k.min(self.depth),
            blocks: self.blocks.clone(),
        })
    }

    pub fn filter_templates<F>(&self, manifest: &TemplateManifest, keep: F) -> Result<DumpView<'a>, DumpError>
    where
        F: Fn(&Template) -> bool,
    {
        let mut blocks = Vec::new();
        for block in &self.blocks {
            let template = manifest
                .get(&block.template_id)
                .ok_or_else(|| DumpError::UnknownTemplateId(block.template_id.clone()))?;
            if keep(template) {
                blocks.push(*block);
            }
        }
        Ok(DumpView {
            dump: self.dump,
            depth: self.depth,
            blocks,
        })
    }
}

pub fn slice_top(dump: &CompletionDump, k: usize) -> Result<DumpView<'_>, DumpError> {
    dump.view().slice_top(k)
}

pub fn filter_templates<'a, F>(
    dump: &'a CompletionDump,
    manifest: &TemplateManifest,
    keep: F,
) -> Result<DumpView<'a>, DumpError>
where
    F: Fn(&Template) -> bool,
{
    dump.view().filter_templates(manifest, keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::{AgeGroup, GenderGroup, Relation};
    use proptest::prelude::*;

    fn manifest() -> TemplateManifest {
        let genders = [
            GenderGroup::Female,
            GenderGroup::Male,
            GenderGroup::Female,
            GenderGroup::Male,
            GenderGroup::Female,
            GenderGroup::Male,
        ];
        TemplateManifest::new(
            genders
                .iter()
                .enumerate()
                .map(|(i, g)| Template {
                    id: format!("t{i}"),
                    text: format!("identity{i} is a [SLOT]"),
                    identity_id: format!("i{i}"),
                    predicate_id: "p".into(),
                    relation: Relation::Occupation,
                    gender_group: *g,
                    age_group: AgeGroup::Other,
                    subset: Subset::Binary,
                })
                .collect(),
        )
        .unwrap()
    }

    fn dump(manifest: &TemplateManifest, k: usize) -> CompletionDump {
        CompletionDump {
            model: ModelDescriptor {
                model_id: "toy".into(),
                family: "TOY".into(),
                scale_label: ScaleLabel::Small,
                param_count: 10,
                kind: ModelKind::Masked,
            },
            subset: Subset::Binary,
            k_max: k,
            template_manifest_hash: manifest.hash(),
            producer_version: "test".into(),
            templates: manifest
                .templates()
                .iter()
                .map(|t| TemplateCompletions {
                    template_id: t.id.clone(),
                    completions: (1..=k as u32)
                        .map(|r| Completion {
                            rank: r,
                            fill_in: format!("w{r}"),
                            log_likelihood: -(r as f64) * 0.5,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    fn serialize(d: &CompletionDump) -> String {
        let mut buf = Vec::new();
        write_dump(d, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn reads_well_formed_dump() {
        let m = manifest();
        let d = dump(&m, 3);
        let back = read_dump_from(serialize(&d).as_bytes()).unwrap();
        assert_eq!(back.record_count(), 18);
        back.verify_against(&m).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn header_field_order_is_canonical() {
        let m = manifest();
        let text = serialize(&dump(&m, 1));
        let header = text.lines().next().unwrap();
        assert!(header.starts_with(
            r#"{"model_id":"toy","family":"TOY","scale_label":"small","param_count":10,"kind":"masked","subset":"binary","k_max":1,"template_manifest_hash":""#
        ));
        assert!(header.ends_with(r#""producer_version":"test"}"#));
    }

    #[test]
    fn missing_rank_is_rank_gap() {
        let m = manifest();
        let text: String = serialize(&dump(&m, 3))
            .lines()
            .filter(|l| !(l.contains(r#""template_id":"t1""#) && l.contains(r#""rank":2"#)))
            .map(|l| format!("{l}\n"))
            .collect();
        match read_dump_from(text.as_bytes()) {
            Err(DumpError::RankGap { template_id, rank }) => {
                assert_eq!(template_id, "t1");
                assert_eq!(rank, 2);
            }
            other => panic!("expected RankGap, got {other:?}"),
        }
    }

    #[test]
    fn truncated_block_is_rank_gap() {
        let m = manifest();
        let text: String = serialize(&dump(&m, 3))
            .lines()
            .filter(|l| !(l.contains(r#""template_id":"t5""#) && l.contains(r#""rank":3"#)))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(matches!(
            read_dump_from(text.as_bytes()),
            Err(DumpError::RankGap { rank: 3, .. })
        ));
    }

    #[test]
    fn likelihood_inversion_rejected() {
        let m = manifest();
        let mut d = dump(&m, 3);
        d.templates[2].completions[2].log_likelihood = -0.1;
        match read_dump_from(serialize(&d).as_bytes()) {
            Err(DumpError::LikelihoodOrderViolation { template_id, rank }) => {
                assert_eq!(template_id, "t2");
                assert_eq!(rank, 3);
            }
            other => panic!("expected LikelihoodOrderViolation, got {other:?}"),
        }
    }

    #[test]
    fn ties_are_allowed() {
        let m = manifest();
        let mut d = dump(&m, 3);
        d.templates[0].completions[1].log_likelihood = -0.5;
        assert!(read_dump_from(serialize(&d).as_bytes()).is_ok());
    }

    #[test]
    fn manifest_mismatch() {
        let m = manifest();
        let mut d = dump(&m, 2);
        d.template_manifest_hash = "0".repeat(64);
        assert!(matches!(d.verify_against(&m), Err(DumpError::ManifestMismatch(_))));

        let mut d = dump(&m, 2);
        d.templates.pop();
        assert!(matches!(d.verify_against(&m), Err(DumpError::ManifestMismatch(_))));
    }

    #[test]
    fn non_contiguous_template_rejected() {
        let m = manifest();
        let text = serialize(&dump(&m, 1));
        let mut lines: Vec<&str> = text.lines().collect();
        let t0 = lines[1];
        lines.push(t0);
        let joined = lines.join("\n");
        assert!(matches!(
            read_dump_from(joined.as_bytes()),
            Err(DumpError::SchemaViolation { .. })
        ));
    }

    #[test]
    fn bad_json_reports_line() {
        let m = manifest();
        let mut text = serialize(&dump(&m, 1));
        text.push_str("{not json}\n");
        assert!(matches!(
            read_dump_from(text.as_bytes()),
            Err(DumpError::SchemaViolation { line: 8, .. })
        ));
    }

    #[test]
    fn positive_log_likelihood_rejected() {
        let m = manifest();
        let mut d = dump(&m, 1);
        d.templates[0].completions[0].log_likelihood = 0.3;
        assert!(matches!(
            read_dump_from(serialize(&d).as_bytes()),
            Err(DumpError::SchemaViolation { .. })
        ));
    }

    #[test]
    fn slicing() {
        let m = manifest();
        let d = dump(&m, 3);
        assert_eq!(slice_top(&d, 3).unwrap().record_count(), 18);
        let top1 = slice_top(&d, 1).unwrap();
        assert!(top1.templates().all(|(_, c)| c.len() == 1 && c[0].rank == 1));
        assert!(matches!(slice_top(&d, 4), Err(DumpError::KOutOfRange { k: 4, k_max: 3 })));
        assert!(matches!(slice_top(&d, 0), Err(DumpError::KOutOfRange { .. })));
    }

    #[test]
    fn filtering() {
        let m = manifest();
        let d = dump(&m, 3);
        let female = filter_templates(&d, &m, |t| t.gender_group == GenderGroup::Female).unwrap();
        assert_eq!(female.record_count(), 9);
        assert_eq!(female.k_max(), 3);
        let queer = filter_templates(&d, &m, |t| t.subset == Subset::Queer).unwrap();
        assert!(queer.is_empty());
        let all = filter_templates(&d, &m, |_| true).unwrap();
        assert_eq!(all.index(), d.view().index());
    }

    #[test]
    fn missing_file() {
        assert!(matches!(read_dump("/nonexistent.jsonl"), Err(DumpError::MissingFile(_))));
    }

    proptest! {
        #[test]
        fn slice_composition(a in 1usize..=6, b in 1usize..=6) {
            let m = manifest();
            let d = dump(&m, 6);
            let twice = slice_top(&d, a).unwrap().slice_top(b).unwrap();
            let once = slice_top(&d, a.min(b)).unwrap();
            prop_assert_eq!(twice.depth(), once.depth());
            prop_assert_eq!(twice.index(), once.index());
        }

        #[test]
        fn round_trip_is_byte_stable(
            k in 1usize..5,
            lls in proptest::collection::vec(-50.0f64..0.0, 24),
            words in proptest::collection::vec("[a-z \"\\\\é]{0,6}", 24),
        ) {
            let m = manifest();
            let mut d = dump(&m, k);
            let mut i = 0;
            for block in &mut d.templates {
                let mut vals: Vec<f64> = (0..k).map(|j| lls[(i + j) % 24]).collect();
                vals.sort_by(|x, y| y.partial_cmp(x).unwrap());
                for (c, v) in block.completions.iter_mut().zip(vals) {
                    c.log_likelihood = v;
                    c.fill_in = words[i % 24].clone();
                    i += 1;
                }
            }
            let text = serialize(&d);
            let back = read_dump_from(text.as_bytes()).unwrap();
            prop_assert_eq!(&back, &d);
            prop_assert_eq!(serialize(&back), text);
        }

        #[test]
        fn mutated_ranks_rejected(template in 0usize..6, rank in 0usize..4, delta in 1u32..3) {
            let m = manifest();
            let mut d = dump(&m, 4);
            d.templates[template].completions[rank].rank += delta;
            let rank_gap = matches!(read_dump_from(serialize(&d).as_bytes()), Err(DumpError::RankGap { .. }));
            prop_assert!(rank_gap);
        }

        #[test]
        fn mutated_likelihoods_rejected(template in 0usize..6, rank in 1usize..4, bump in 0.01f64..5.0) {
            let m = manifest();
            let mut d = dump(&m, 4);
            let prev = d.templates[template].completions[rank - 1].log_likelihood;
            d.templates[template].completions[rank].log_likelihood = (prev + bump).min(0.0);
            if d.templates[template].completions[rank].log_likelihood > prev {
                let order = matches!(
                    read_dump_from(serialize(&d).as_bytes()),
                    Err(DumpError::LikelihoodOrderViolation { .. })
                );
                prop_assert!(order);
            }
        }
    }
}
