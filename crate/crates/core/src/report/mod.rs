//! End-to-end audit runs: configuration, output bundle, summary table and
//! annotation sheets.

mod bundle;
mod config;
mod sample;
mod table;

use std::path::PathBuf;

pub use bundle::{build_bundle, load_dumps, run_audit, AgreementRow, Bundle, ScoreRow, BUNDLE_FILES};
pub use config::RunConfig;
pub use sample::{
    sample_for_annotation, AnnotationRow, AnnotationSheet, ModelPredictions, SampleOptions, SHEET_HEADER,
};
pub use table::{emit_table1, SummaryRow, Table1, SUMMARY_HEADER};

use crate::template::{Relation, Subset};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{0}")]
    Config(String),
    #[error("subset {subset}, relation {relation}: {available} instance(s) available, {needed} needed")]
    NotEnoughInstances {
        subset: Subset,
        relation: Relation,
        available: usize,
        needed: usize,
    },
    #[error("per_relation = {per_relation} is not divisible by subsets × annotators = {divisor}")]
    IndivisibleSplit { per_relation: usize, divisor: usize },
    #[error("model `{model_id}` has more than one {subset} dump")]
    DuplicateDump { model_id: String, subset: Subset },
    #[error("model `{0}` is described differently across dumps")]
    InconsistentModel(String),
    #[error("family `{family}` has two models at scale {scale}")]
    DuplicateFamilyScale { family: String, scale: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
