use std::path::PathBuf;

use crate::dump::DumpError;
use crate::lexicon::LexiconError;
use crate::report::ReportError;
use crate::scoring::ScoringError;
use crate::similarity::SimilarityError;
use crate::template::TemplateError;

/// Any failure of the pipeline, tagged with the stage that produced it.
#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("template-engine: {0}")]
    Template(#[from] TemplateError),
    #[error("lexicon: {0}")]
    Lexicon(#[from] LexiconError),
    #[error("dump-model: {0}")]
    Dump(#[from] DumpError),
    #[error("dump-model: {}: {source}", path.display())]
    DumpFile { path: PathBuf, source: DumpError },
    #[error("scoring: {0}")]
    Scoring(#[from] ScoringError),
    #[error("similarity: {0}")]
    Similarity(#[from] SimilarityError),
    #[error("report: {0}")]
    Report(#[from] ReportError),
}
