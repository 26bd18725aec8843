//! Prediction agreement between models as cosine similarity of fill-in
//! embeddings.
//!
//! For one template and depth `k`, each model's top-k fill-ins are embedded
//! and reduced to a centroid; agreement is the cosine between the two
//! centroids. Template-level values are averaged into a pair score, and pair
//! scores are averaged over every unordered model pair in a family or group.
//! The `pairwise` and `rank-matched` methods replace the centroid step with
//! the mean cosine over all k² cross pairs or over same-rank pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dump::{Completion, CompletionDump, DumpError, DumpView};
use crate::lexicon::normalize_term;
use crate::scoring::choice_enum;
use crate::template::{GroupAxis, TemplateManifest};

#[derive(Debug, thiserror::Error)]
pub enum SimilarityError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("line {line}: {message}")]
    SchemaViolation { line: u64, message: String },
    #[error("vector for `{fill_in}` has dimension {found}, expected {expected}")]
    DimensionMismatch {
        fill_in: String,
        expected: usize,
        found: usize,
    },
    #[error("vector for `{0}` has zero norm")]
    ZeroNormVector(String),
    #[error("conflicting vectors for `{0}`")]
    DuplicateFillIn(String),
    #[error("no embedding for {} fill-in(s): {}", .0.len(), .0.join(", "))]
    MissingVectors(Vec<String>),
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("k = {k} outside 1..={k_max}")]
    KOutOfRange { k: usize, k_max: usize },
    #[error("no templates to compare")]
    EmptyTemplateSet,
    #[error("every template had a zero centroid")]
    NoComparableTemplates,
    #[error("`{label}` has {count} model(s); agreement needs at least 2")]
    FamilyTooSmall { label: String, count: usize },
    #[error("template `{0}` is not in the manifest")]
    UnknownTemplateId(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<DumpError> for SimilarityError {
    fn from(err: DumpError) -> Self {
        match err {
            DumpError::KOutOfRange { k, k_max } => SimilarityError::KOutOfRange { k, k_max },
            DumpError::UnknownTemplateId(id) => SimilarityError::UnknownTemplateId(id),
            DumpError::ManifestMismatch(m) => SimilarityError::ManifestMismatch(m),
            other => unreachable!("views only fail on range or lookup: {other}"),
        }
    }
}

choice_enum!(AgreementMethod {
    Centroid => "centroid",
    Pairwise => "pairwise",
    RankMatched => "rank-matched",
} default Centroid);

choice_enum!(AgreementScope {
    IntraFamily => "intra_family",
    InterFamily => "inter_family",
    IntraGroup => "intra_group",
} default IntraFamily);

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarHeader {
    dimension: usize,
    encoder_id: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarRow {
    fill_in: String,
    vector: Vec<f64>,
}

/// Fill-in vectors keyed by normalized fill-in.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    encoder_id: String,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dimension: usize, encoder_id: impl Into<String>) -> Self {
        EmbeddingTable {
            dimension,
            encoder_id: encoder_id.into(),
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, fill_in: &str, vector: Vec<f64>) -> Result<(), SimilarityError> {
        let key = normalize_term(fill_in);
        if vector.len() != self.dimension {
            return Err(SimilarityError::DimensionMismatch {
                fill_in: key,
                expected: self.dimension,
                found: vector.len(),
            });
        }
        if norm(&vector) == 0.0 {
            return Err(SimilarityError::ZeroNormVector(key));
        }
        match self.vectors.get(&key) {
            Some(existing) if *existing != vector => Err(SimilarityError::DuplicateFillIn(key)),
            Some(_) => Ok(()),
            None => {
                self.vectors.insert(key, vector);
                Ok(())
            }
        }
    }

    pub fn read_jsonl<R: Read>(reader: R) -> Result<Self, SimilarityError> {
        let mut lines = BufReader::new(reader).lines().enumerate();
        let header: SidecarHeader = loop {
            match lines.next() {
                None => {
                    return Err(SimilarityError::SchemaViolation {
                        line: 1,
                        message: "missing header line".into(),
                    })
                }
                Some((i, line)) => {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line).map_err(|e| SimilarityError::SchemaViolation {
                        line: i as u64 + 1,
                        message: format!("header: {e}"),
                    })?;
                }
            }
        };
        if header.dimension == 0 {
            return Err(SimilarityError::SchemaViolation {
                line: 1,
                message: "dimension must be positive".into(),
            });
        }
        let mut table = EmbeddingTable::new(header.dimension, header.encoder_id);
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: SidecarRow = serde_json::from_str(&line).map_err(|e| SimilarityError::SchemaViolation {
                line: i as u64 + 1,
                message: e.to_string(),
            })?;
            if row.vector.iter().any(|v| !v.is_finite()) {
                return Err(SimilarityError::SchemaViolation {
                    line: i as u64 + 1,
                    message: "non-finite vector component".into(),
                });
            }
            table.insert(&row.fill_in, row.vector)?;
        }
        Ok(table)
    }

    /// Fold another sidecar into this one; dimension and encoder must agree.
    pub fn merge(mut self, other: EmbeddingTable) -> Result<Self, SimilarityError> {
        if other.encoder_id != self.encoder_id {
            return Err(SimilarityError::SchemaViolation {
                line: 1,
                message: format!("encoder `{}` differs from `{}`", other.encoder_id, self.encoder_id),
            });
        }
        let mut keys: Vec<_> = other.vectors.into_iter().collect();
        keys.sort_by(|a, b| a.0.cmp(&b.0));
        for (fill_in, vector) in keys {
            self.insert(&fill_in, vector)?;
        }
        Ok(self)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, fill_in: &str) -> Option<&[f64]> {
        self.vectors.get(&normalize_term(fill_in)).map(Vec::as_slice)
    }

    /// Every fill-in of the given dumps must have a vector. Missing ones are
    /// reported together, normalized and sorted.
    pub fn ensure_covers<'a, I>(&self, dumps: I) -> Result<(), SimilarityError>
    where
        I: IntoIterator<Item = &'a CompletionDump>,
    {
        let mut missing = BTreeSet::new();
        for dump in dumps {
            for block in &dump.templates {
                for c in &block.completions {
                    let key = normalize_term(&c.fill_in);
                    if !self.vectors.contains_key(&key) {
                        missing.insert(key);
                    }
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(SimilarityError::MissingVectors(missing.into_iter().collect()))
        }
    }

    /// Multiply every vector by `factor`.
    pub fn scaled(&self, factor: f64) -> EmbeddingTable {
        EmbeddingTable {
            dimension: self.dimension,
            encoder_id: self.encoder_id.clone(),
            vectors: self
                .vectors
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|x| x * factor).collect()))
                .collect(),
        }
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable, SimilarityError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|err| match err.kind() {
        std::io::ErrorKind::NotFound => SimilarityError::MissingFile(path.to_path_buf()),
        _ => SimilarityError::Io(err),
    })?;
    EmbeddingTable::read_jsonl(file)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine of two vectors, clamped to [-1, 1]. `None` if either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        return None;
    }
    Some((dot(a, b) / denom).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairAgreement {
    /// Mean over compared templates.
    pub value: f64,
    /// Templates that entered the mean.
    pub compared: usize,
    /// Templates dropped because a centroid had zero norm.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementSeries {
    pub scope: AgreementScope,
    pub label: String,
    /// Entry `i` is the agreement at depth `i + 1`.
    pub values_by_k: Vec<f64>,
    /// Template comparisons per depth: templates × model pairs.
    pub n_template_pairs: usize,
    /// Template comparisons dropped for zero centroids, summed over depths.
    pub skipped: usize,
}

impl AgreementSeries {
    pub fn at(&self, k: usize) -> f64 {
        self.values_by_k[k - 1]
    }
}

type Aligned<'a> = Vec<(&'a str, Vec<&'a [f64]>, Vec<&'a [f64]>)>;

/// Pair up the two views template by template and resolve embeddings.
fn align<'a>(
    a: &DumpView<'a>,
    b: &DumpView<'a>,
    table: &'a EmbeddingTable,
    k: usize,
) -> Result<Aligned<'a>, SimilarityError> {
    if a.dump().template_manifest_hash != b.dump().template_manifest_hash {
        return Err(SimilarityError::ManifestMismatch(format!(
            "`{}` and `{}` were generated against different manifests",
            a.model().model_id,
            b.model().model_id
        )));
    }
    let depth = a.depth().min(b.depth());
    if k == 0 || k > depth {
        return Err(SimilarityError::KOutOfRange { k, k_max: depth });
    }
    let b_index = b.index();
    if b_index.len() != a.len() {
        return Err(SimilarityError::ManifestMismatch(format!(
            "`{}` covers {} templates, `{}` covers {}",
            a.model().model_id,
            a.len(),
            b.model().model_id,
            b_index.len()
        )));
    }
    if a.is_empty() {
        return Err(SimilarityError::EmptyTemplateSet);
    }
    let resolve = |completions: &'a [Completion]| -> Result<Vec<&'a [f64]>, SimilarityError> {
        completions[..k]
            .iter()
            .map(|c| {
                table
                    .get(&c.fill_in)
                    .ok_or_else(|| SimilarityError::MissingVectors(vec![normalize_term(&c.fill_in)]))
            })
            .collect()
    };
    let mut out = Vec::with_capacity(a.len());
    for (id, ca) in a.templates() {
        let cb = b_index.get(id).ok_or_else(|| {
            SimilarityError::ManifestMismatch(format!("template `{id}` missing from `{}`", b.model().model_id))
        })?;
        out.push((id, resolve(ca)?, resolve(cb)?));
    }
    Ok(out)
}

fn finish(values: Vec<(f64, Option<&str>)>) -> Result<PairAgreement, SimilarityError> {
    let mut sum = 0.0;
    let mut compared = 0;
    let mut skipped = Vec::new();
    for (value, skip) in values {
        match skip {
            Some(id) => skipped.push(id.to_string()),
            None => {
                sum += value;
                compared += 1;
            }
        }
    }
    if compared == 0 {
        return Err(SimilarityError::NoComparableTemplates);
    }
    Ok(PairAgreement {
        value: (sum / compared as f64).clamp(-1.0, 1.0),
        compared,
        skipped,
    })
}

fn vector_sum(vectors: &[&[f64]]) -> Vec<f64> {
    let mut acc = vec![0.0; vectors[0].len()];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += x;
        }
    }
    acc
}

/// Agreement of two models at a single depth `k`.
pub fn pair_agreement_at_k(
    a: &DumpView<'_>,
    b: &DumpView<'_>,
    table: &EmbeddingTable,
    k: usize,
    method: AgreementMethod,
) -> Result<PairAgreement, SimilarityError> {
    let aligned = align(a, b, table, k)?;
    let values = aligned
        .iter()
        .map(|(id, va, vb)| match method {
            AgreementMethod::Centroid => match cosine(&vector_sum(va), &vector_sum(vb)) {
                Some(c) => (c, None),
                None => (0.0, Some(*id)),
            },
            AgreementMethod::Pairwise => {
                let total: f64 = va
                    .iter()
                    .flat_map(|x| vb.iter().map(move |y| cosine(x, y).unwrap_or(0.0)))
                    .sum();
                (total / (k * k) as f64, None)
            }
            AgreementMethod::RankMatched => {
                let total: f64 = va.iter().zip(vb).map(|(x, y)| cosine(x, y).unwrap_or(0.0)).sum();
                (total / k as f64, None)
            }
        })
        .collect();
    finish(values)
}

/// Agreement of two models at every depth 1..=k_max, computed incrementally.
pub fn pair_agreement_series(
    a: &DumpView<'_>,
    b: &DumpView<'_>,
    table: &EmbeddingTable,
    k_max: usize,
    method: AgreementMethod,
) -> Result<Vec<PairAgreement>, SimilarityError> {
    let aligned = align(a, b, table, k_max)?;
    // per_k[k][t] = (value, skipped?)
    let mut per_k: Vec<Vec<(f64, Option<&str>)>> = vec![Vec::with_capacity(aligned.len()); k_max];
    for (id, va, vb) in &aligned {
        match method {
            AgreementMethod::Centroid => {
                let mut sa = vec![0.0; table.dimension()];
                let mut sb = vec![0.0; table.dimension()];
                for k in 0..k_max {
                    sa.iter_mut().zip(va[k]).for_each(|(s, x)| *s += x);
                    sb.iter_mut().zip(vb[k]).for_each(|(s, x)| *s += x);
                    per_k[k].push(match cosine(&sa, &sb) {
                        Some(c) => (c, None),
                        None => (0.0, Some(*id)),
                    });
                }
            }
            AgreementMethod::Pairwise => {
                let mut total = 0.0;
                for k in 0..k_max {
                    // New row and column of the k × k cosine grid.
                    total += vb[..=k].iter().map(|y| cosine(va[k], y).unwrap_or(0.0)).sum::<f64>();
                    total += va[..k].iter().map(|x| cosine(x, vb[k]).unwrap_or(0.0)).sum::<f64>();
                    per_k[k].push((total / ((k + 1) * (k + 1)) as f64, None));
                }
            }
            AgreementMethod::RankMatched => {
                let mut total = 0.0;
                for k in 0..k_max {
                    total += cosine(va[k], vb[k]).unwrap_or(0.0);
                    per_k[k].push((total / (k + 1) as f64, None));
                }
            }
        }
    }
    per_k.into_iter().map(finish).collect()
}

fn all_pairs<'v, 'a>(views: &'v [DumpView<'a>]) -> Vec<(&'v DumpView<'a>, &'v DumpView<'a>)> {
    let mut out = Vec::new();
    for i in 0..views.len() {
        for j in i + 1..views.len() {
            out.push((&views[i], &views[j]));
        }
    }
    out
}

fn mean_over_pairs(
    scope: AgreementScope,
    label: String,
    pairs: &[(&DumpView<'_>, &DumpView<'_>)],
    table: &EmbeddingTable,
    k_max: usize,
    method: AgreementMethod,
) -> Result<AgreementSeries, SimilarityError> {
    let mut sums = vec![0.0; k_max];
    let mut n_template_pairs = 0;
    let mut skipped = 0;
    for (a, b) in pairs {
        let series = pair_agreement_series(a, b, table, k_max, method)?;
        for (sum, pair) in sums.iter_mut().zip(&series) {
            *sum += pair.value;
            skipped += pair.skipped.len();
        }
        n_template_pairs += a.len();
    }
    if skipped > 0 {
        log::warn!("{label}: {skipped} template comparison(s) skipped for zero centroids");
    }
    Ok(AgreementSeries {
        scope,
        label,
        values_by_k: sums
            .into_iter()
            .map(|s| (s / pairs.len() as f64).clamp(-1.0, 1.0))
            .collect(),
        n_template_pairs,
        skipped,
    })
}

/// Mean agreement over every unordered pair of scales within one family.
pub fn intra_family_agreement(
    family: &[DumpView<'_>],
    table: &EmbeddingTable,
    k_max: usize,
    method: AgreementMethod,
) -> Result<AgreementSeries, SimilarityError> {
    let label = family.first().map(|v| v.model().family.clone()).unwrap_or_default();
    if family.len() < 2 {
        return Err(SimilarityError::FamilyTooSmall {
            label,
            count: family.len(),
        });
    }
    mean_over_pairs(AgreementScope::IntraFamily, label, &all_pairs(family), table, k_max, method)
}

/// Mean agreement over every cross-family model pair. Labelled `A|B`.
pub fn inter_family_agreement(
    first: &[DumpView<'_>],
    second: &[DumpView<'_>],
    table: &EmbeddingTable,
    k_max: usize,
    method: AgreementMethod,
) -> Result<AgreementSeries, SimilarityError> {
    let name = |views: &[DumpView<'_>]| views.first().map(|v| v.model().family.clone()).unwrap_or_default();
    let label = format!("{}|{}", name(first), name(second));
    if first.is_empty() || second.is_empty() {
        return Err(SimilarityError::FamilyTooSmall { label, count: 1 });
    }
    let pairs: Vec<_> = first.iter().flat_map(|a| second.iter().map(move |b| (a, b))).collect();
    mean_over_pairs(AgreementScope::InterFamily, label, &pairs, table, k_max, method)
}

/// Per group label: mean agreement over all model pairs, restricted to that
/// group's templates. Empty groups are omitted and logged.
pub fn group_agreement(
    views: &[DumpView<'_>],
    table: &EmbeddingTable,
    manifest: &TemplateManifest,
    axis: GroupAxis,
    k_max: usize,
    method: AgreementMethod,
) -> Result<BTreeMap<String, AgreementSeries>, SimilarityError> {
    if views.len() < 2 {
        return Err(SimilarityError::FamilyTooSmall {
            label: format!("{axis} groups"),
            count: views.len(),
        });
    }
    let mut out = BTreeMap::new();
    for &label in axis.labels() {
        let restricted = views
            .iter()
            .map(|v| v.filter_templates(manifest, |t| t.group(axis) == label))
            .collect::<Result<Vec<_>, _>>()?;
        if restricted.iter().any(|v| v.is_empty()) {
            log::warn!("no templates in {axis} group `{label}`, omitted from agreement");
            continue;
        }
        let series = mean_over_pairs(
            AgreementScope::IntraGroup,
            label.to_string(),
            &all_pairs(&restricted),
            table,
            k_max,
            method,
        )?;
        out.insert(label.to_string(), series);
    }
    Ok(out)
}
