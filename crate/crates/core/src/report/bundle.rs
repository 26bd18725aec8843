use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{emit_table1, ReportError, RunConfig};
use crate::dump::{read_dump_checked, CompletionDump, DumpView, ModelDescriptor, ScaleLabel};
use crate::error::AuditError;
use crate::lexicon::{load_lexicon, Lexicon};
use crate::scoring::{
    combine_subsets, group_series, honest_series, per_template_scores, rank_models, summarize, PercentileOver,
    PercentileSummary, RankedModel, ScoreSeries,
};
use crate::similarity::{
    group_agreement, inter_family_agreement, intra_family_agreement, load_embeddings, AgreementScope,
    AgreementSeries, EmbeddingTable,
};
use crate::template::{GroupAxis, Subset, TemplateManifest};

/// Files of a bundle, in write order.
pub const BUNDLE_FILES: [&str; 7] = [
    "summary.csv",
    "table1.txt",
    "scores.csv",
    "group_scores.csv",
    "agreement_family.csv",
    "agreement_group.csv",
    "run.json",
];

/// One line of `scores.csv` / `group_scores.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model_id: String,
    pub family: String,
    pub scale_label: ScaleLabel,
    pub subset: Subset,
    pub group_axis: Option<GroupAxis>,
    pub group_label: Option<String>,
    pub k: usize,
    pub score: f64,
}

/// One line of `agreement_family.csv` / `agreement_group.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub scope: AgreementScope,
    pub label: String,
    pub k: usize,
    pub value: f64,
    pub n_template_pairs: usize,
}

/// Rendered outputs, held in memory until written.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub files: Vec<(String, String)>,
}

impl Bundle {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    /// Each file goes to a temporary sibling and is renamed into place. If
    /// any write fails, files already placed by this call are removed.
    pub fn write_to(&self, dir: &Path) -> Result<(), ReportError> {
        fs::create_dir_all(dir)?;
        let mut placed: Vec<PathBuf> = Vec::new();
        let result = (|| -> Result<(), ReportError> {
            for (name, contents) in &self.files {
                let target = dir.join(name);
                let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
                tmp.write_all(contents.as_bytes())?;
                tmp.as_file().sync_all()?;
                tmp.persist(&target).map_err(|e| ReportError::Io(e.error))?;
                placed.push(target);
            }
            Ok(())
        })();
        if result.is_err() {
            for path in placed {
                let _ = fs::remove_file(path);
            }
        }
        result
    }
}

fn csv_of<T: Serialize>(header: &[&str], rows: &[T]) -> String {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    wtr.write_record(header).expect("in-memory write");
    for row in rows {
        wtr.serialize(row).expect("in-memory write");
    }
    String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8")
}

const SCORE_HEADER: [&str; 8] = ["model_id", "family", "scale_label", "subset", "group_axis", "group_label", "k", "score"];
const AGREEMENT_HEADER: [&str; 5] = ["scope", "label", "k", "value", "n_template_pairs"];

fn score_rows(series: &ScoreSeries) -> impl Iterator<Item = ScoreRow> + '_ {
    series.scores_by_k.iter().enumerate().map(move |(i, &score)| ScoreRow {
        model_id: series.model.model_id.clone(),
        family: series.model.family.clone(),
        scale_label: series.model.scale_label,
        subset: series.subset,
        group_axis: series.group_axis,
        group_label: series.group_label.clone(),
        k: i + 1,
        score,
    })
}

fn agreement_rows(series: &AgreementSeries, label: String) -> impl Iterator<Item = AgreementRow> + '_ {
    series.values_by_k.iter().enumerate().map(move |(i, &value)| AgreementRow {
        scope: series.scope,
        label: label.clone(),
        k: i + 1,
        value,
        n_template_pairs: series.n_template_pairs,
    })
}

/// Read every dump of the config, check it against the manifest and check
/// that model descriptors are consistent across dumps.
pub fn load_dumps(paths: &[PathBuf], manifest: &TemplateManifest) -> Result<Vec<CompletionDump>, AuditError> {
    let mut dumps: Vec<CompletionDump> = Vec::with_capacity(paths.len());
    let mut models: HashMap<String, ModelDescriptor> = HashMap::new();
    let mut slots: HashMap<(String, ScaleLabel), String> = HashMap::new();
    for path in paths {
        let dump = read_dump_checked(path, manifest).map_err(|source| AuditError::DumpFile {
            path: path.clone(),
            source,
        })?;
        let model = &dump.model;
        if dumps.iter().any(|d| d.model.model_id == model.model_id && d.subset == dump.subset) {
            return Err(ReportError::DuplicateDump {
                model_id: model.model_id.clone(),
                subset: dump.subset,
            }
            .into());
        }
        match models.get(&model.model_id) {
            Some(known) if known != model => return Err(ReportError::InconsistentModel(model.model_id.clone()).into()),
            Some(_) => {}
            None => {
                models.insert(model.model_id.clone(), model.clone());
            }
        }
        let slot = (model.family.clone(), model.scale_label);
        match slots.get(&slot) {
            Some(id) if *id != model.model_id => {
                return Err(ReportError::DuplicateFamilyScale {
                    family: model.family.clone(),
                    scale: model.scale_label.to_string(),
                }
                .into())
            }
            Some(_) => {}
            None => {
                slots.insert(slot, model.model_id.clone());
            }
        }
        dumps.push(dump);
    }
    Ok(dumps)
}

#[derive(Serialize)]
struct LexiconMeta<'a> {
    source_version: &'a str,
    terms: usize,
    match_mode: &'static str,
}

#[derive(Serialize)]
struct ManifestMeta {
    hash: String,
    templates: usize,
}

#[derive(Serialize)]
struct DumpMeta<'a> {
    model_id: &'a str,
    family: &'a str,
    scale_label: ScaleLabel,
    subset: Subset,
    k_max: usize,
    templates: usize,
    producer_version: &'a str,
}

#[derive(Serialize)]
struct EmbeddingMeta<'a> {
    encoder_id: &'a str,
    dimension: usize,
    vectors: usize,
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    tool: &'static str,
    tool_version: &'static str,
    seed: u64,
    config: &'a RunConfig,
    lexicon: LexiconMeta<'a>,
    manifest: ManifestMeta,
    dumps: Vec<DumpMeta<'a>>,
    embeddings: Option<EmbeddingMeta<'a>>,
    ranking: Vec<(&'a str, usize)>,
    agreement_skipped_comparisons: usize,
    notes: Vec<String>,
    outputs: Vec<&'static str>,
}

fn model_summary(
    config: &RunConfig,
    lexicon: &Lexicon,
    views: &[&DumpView<'_>],
    series: &[&ScoreSeries],
) -> Result<PercentileSummary, AuditError> {
    let values = match config.percentile_over {
        PercentileOver::K => combine_subsets(series, config.dataset_weighting),
        PercentileOver::Template => {
            let mut pooled = Vec::new();
            for view in views {
                pooled.extend(per_template_scores(view, lexicon, config.k_max)?);
            }
            pooled
        }
    };
    Ok(summarize(&values, config.std)?)
}

fn load_embedding_tables(paths: &[PathBuf]) -> Result<Option<EmbeddingTable>, AuditError> {
    let mut merged: Option<EmbeddingTable> = None;
    for path in paths {
        let table = load_embeddings(path)?;
        merged = Some(match merged {
            None => table,
            Some(acc) => acc.merge(table)?,
        });
    }
    Ok(merged)
}

/// Compute every output of a run without touching the output directory.
pub fn build_bundle(config: &RunConfig) -> Result<Bundle, AuditError> {
    let manifest = TemplateManifest::load(&config.manifest)?;
    let lexicon = load_lexicon(&config.lexicon, config.lexicon_categories.as_ref())?.with_match_mode(config.match_mode);
    let dumps = load_dumps(&config.dumps, &manifest)?;
    let mut notes = Vec::new();

    let views: Vec<DumpView<'_>> = dumps.iter().map(|d| d.view()).collect();

    // Whole-set and per-group series for every dump.
    let mut series = Vec::with_capacity(dumps.len());
    let mut score_out = Vec::new();
    let mut group_out = Vec::new();
    for view in &views {
        let s = honest_series(view, &lexicon, config.k_max)?;
        score_out.extend(score_rows(&s));
        for axis in GroupAxis::ALL.iter().copied() {
            let groups = group_series(view, &lexicon, &manifest, axis, config.k_max)?;
            for label in axis.labels() {
                if !groups.contains_key(*label) {
                    notes.push(format!(
                        "{} / {}: {axis} group `{label}` has no templates",
                        view.model().model_id,
                        view.subset()
                    ));
                }
            }
            for g in groups.values() {
                group_out.extend(score_rows(g));
            }
        }
        series.push(s);
    }

    // One summary per model, models in order of first appearance.
    let mut order: Vec<&ModelDescriptor> = Vec::new();
    for d in &dumps {
        if !order.iter().any(|m| m.model_id == d.model.model_id) {
            order.push(&d.model);
        }
    }
    let mut summaries = Vec::with_capacity(order.len());
    for model in &order {
        let idx: Vec<usize> = (0..dumps.len()).filter(|&i| dumps[i].model.model_id == model.model_id).collect();
        let model_views: Vec<&DumpView<'_>> = idx.iter().map(|&i| &views[i]).collect();
        let model_series: Vec<&ScoreSeries> = idx.iter().map(|&i| &series[i]).collect();
        summaries.push(((*model).clone(), model_summary(config, &lexicon, &model_views, &model_series)?));
    }
    let ranked = rank_models(&summaries)?;
    let mut in_input_order: Vec<RankedModel> = ranked.clone();
    in_input_order.sort_by_key(|r| order.iter().position(|m| m.model_id == r.model.model_id));
    let table = emit_table1(&in_input_order);

    // Agreement curves.
    let embeddings = load_embedding_tables(&config.embeddings)?;
    let mut family_rows = Vec::new();
    let mut group_rows = Vec::new();
    let mut skipped = 0;
    match &embeddings {
        None => notes.push("no embedding sidecar given; agreement files hold headers only".into()),
        Some(table) => {
            table.ensure_covers(&dumps)?;
            let subsets: BTreeSet<Subset> = dumps.iter().map(|d| d.subset).collect();
            for subset in subsets {
                let in_subset: Vec<DumpView<'_>> =
                    views.iter().filter(|v| v.subset() == subset).map(|v| v.slice_top(config.k_max)).collect::<Result<_, _>>()?;
                let mut families: Vec<&str> = Vec::new();
                for v in &in_subset {
                    if !families.contains(&v.model().family.as_str()) {
                        families.push(&v.model().family);
                    }
                }
                let members = |family: &str| -> Vec<DumpView<'_>> {
                    in_subset.iter().filter(|v| v.model().family == family).cloned().collect()
                };
                for family in &families {
                    let family_views = members(family);
                    if family_views.len() < 2 {
                        notes.push(format!("{subset}: family {family} has one model, no intra-family agreement"));
                        continue;
                    }
                    let s = intra_family_agreement(&family_views, table, config.k_max, config.agreement)?;
                    skipped += s.skipped;
                    family_rows.extend(agreement_rows(&s, format!("{subset}:{}", s.label)));
                }
                for (i, first) in families.iter().enumerate() {
                    for second in &families[i + 1..] {
                        let s = inter_family_agreement(&members(first), &members(second), table, config.k_max, config.agreement)?;
                        skipped += s.skipped;
                        family_rows.extend(agreement_rows(&s, format!("{subset}:{}", s.label)));
                    }
                }
                if in_subset.len() < 2 {
                    notes.push(format!("{subset}: fewer than two models, no group agreement"));
                    continue;
                }
                for axis in GroupAxis::ALL.iter().copied() {
                    let groups = group_agreement(&in_subset, table, &manifest, axis, config.k_max, config.agreement)?;
                    for (label, s) in &groups {
                        skipped += s.skipped;
                        group_rows.extend(agreement_rows(s, format!("{subset}:{axis}:{label}")));
                    }
                }
            }
        }
    }

    let metadata = RunMetadata {
        tool: env!("CARGO_PKG_NAME"),
        tool_version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        config,
        lexicon: LexiconMeta {
            source_version: lexicon.source_version(),
            terms: lexicon.len(),
            match_mode: lexicon.match_mode().as_str(),
        },
        manifest: ManifestMeta {
            hash: manifest.hash(),
            templates: manifest.len(),
        },
        dumps: dumps
            .iter()
            .map(|d| DumpMeta {
                model_id: &d.model.model_id,
                family: &d.model.family,
                scale_label: d.model.scale_label,
                subset: d.subset,
                k_max: d.k_max,
                templates: d.templates.len(),
                producer_version: &d.producer_version,
            })
            .collect(),
        embeddings: embeddings.as_ref().map(|t| EmbeddingMeta {
            encoder_id: t.encoder_id(),
            dimension: t.dimension(),
            vectors: t.len(),
        }),
        ranking: ranked.iter().map(|r| (r.model.model_id.as_str(), r.rank)).collect(),
        agreement_skipped_comparisons: skipped,
        notes,
        outputs: BUNDLE_FILES.to_vec(),
    };
    let mut run_json = serde_json::to_string_pretty(&metadata).expect("metadata serializes");
    run_json.push('\n');

    let text = format!(
        "{}lexicon {} | seed {}\n",
        table.text,
        lexicon.source_version(),
        config.seed
    );
    let contents = [
        table.csv,
        text,
        csv_of(&SCORE_HEADER, &score_out),
        csv_of(&SCORE_HEADER, &group_out),
        csv_of(&AGREEMENT_HEADER, &family_rows),
        csv_of(&AGREEMENT_HEADER, &group_rows),
        run_json,
    ];
    Ok(Bundle {
        files: BUNDLE_FILES.iter().map(|n| n.to_string()).zip(contents).collect(),
    })
}

/// Validate the config, build the bundle and write it to `output_dir`.
pub fn run_audit(config: &RunConfig) -> Result<Bundle, AuditError> {
    config.validate()?;
    let bundle = build_bundle(config)?;
    bundle.write_to(&config.output_dir)?;
    Ok(bundle)
}
