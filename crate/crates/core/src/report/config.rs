use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::lexicon::MatchMode;
use crate::scoring::{DatasetWeighting, PercentileOver, StdKind};
use crate::similarity::AgreementMethod;

fn default_k_max() -> usize {
    100
}

/// Everything one audit run needs. Relative paths in a config file are
/// resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub lexicon: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon_categories: Option<BTreeSet<String>>,
    pub dumps: Vec<PathBuf>,
    #[serde(default)]
    pub embeddings: Vec<PathBuf>,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default, rename = "match")]
    pub match_mode: MatchMode,
    #[serde(default)]
    pub percentile_over: PercentileOver,
    #[serde(default)]
    pub agreement: AgreementMethod,
    #[serde(default)]
    pub dataset_weighting: DatasetWeighting,
    #[serde(default)]
    pub std: StdKind,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, ReportError> {
        let mut config: RunConfig =
            serde_json::from_str(text).map_err(|e| ReportError::Config(format!("invalid config: {e}")))?;
        config.resolve_paths(base_dir);
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReportError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ReportError::MissingFile(path.to_path_buf()),
            _ => ReportError::Io(e),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.manifest);
        join(&mut self.lexicon);
        join(&mut self.output_dir);
        self.dumps.iter_mut().for_each(join);
        self.embeddings.iter_mut().for_each(join);
    }

    /// All referenced input files exist and `k_max >= 1`.
    pub fn validate(&self) -> Result<(), ReportError> {
        if self.k_max == 0 {
            return Err(ReportError::Config("k_max must be at least 1".into()));
        }
        if self.dumps.is_empty() {
            return Err(ReportError::Config("no dumps listed".into()));
        }
        let inputs = [&self.manifest, &self.lexicon]
            .into_iter()
            .chain(&self.dumps)
            .chain(&self.embeddings);
        for path in inputs {
            if !path.is_file() {
                return Err(ReportError::MissingFile(path.clone()));
            }
        }
        Ok(())
    }
}
