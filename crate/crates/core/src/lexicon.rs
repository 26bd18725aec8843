//! Hurtful-term lexicon and fill-in membership.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use unicode_normalization::UnicodeNormalization;

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("line {line}: {message}")]
    SchemaViolation { line: u64, message: String },
    #[error("lexicon is empty after category filtering")]
    EmptyLexicon,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// How a fill-in is tested against the lexicon.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Whole fill-in or any whitespace-separated token.
    #[default]
    Token,
    /// Whole fill-in only.
    Exact,
}

impl MatchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchMode::Token => "token",
            MatchMode::Exact => "exact",
        }
    }
}

impl FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "token" => Ok(MatchMode::Token),
            "exact" => Ok(MatchMode::Exact),
            other => Err(format!("unknown match mode `{other}` (token|exact)")),
        }
    }
}

fn is_edge_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'..='\u{201F}' // curly quotes
                | '\u{2010}'..='\u{2015}' // dashes
                | '\u{2026}' // ellipsis
                | '\u{00AB}' | '\u{00BB}' | '\u{00A1}' | '\u{00BF}'
                | '\u{2039}' | '\u{203A}'
        )
}

/// NFKC, lowercase, then strip surrounding whitespace and punctuation.
/// Internal hyphens and apostrophes are kept.
pub fn normalize_term(raw: &str) -> String {
    let folded: String = raw.nfkc().collect::<String>().to_lowercase().nfkc().collect();
    folded
        .trim_matches(|c: char| c.is_whitespace() || is_edge_punctuation(c))
        .to_string()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    terms: HashSet<String>,
    categories: BTreeMap<String, BTreeSet<String>>,
    source_version: String,
    match_mode: MatchMode,
}

impl Lexicon {
    /// Build from `(term, category)` pairs. Terms are normalized on insert;
    /// pairs whose term normalizes to nothing are dropped.
    pub fn from_entries<I, T, C>(entries: I, source_version: impl Into<String>) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = (T, C)>,
        T: AsRef<str>,
        C: Into<String>,
    {
        let mut categories: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (term, category) in entries {
            let term = normalize_term(term.as_ref());
            if term.is_empty() {
                continue;
            }
            categories.entry(term).or_default().insert(category.into());
        }
        if categories.is_empty() {
            return Err(LexiconError::EmptyLexicon);
        }
        Ok(Lexicon {
            terms: categories.keys().cloned().collect(),
            categories,
            source_version: source_version.into(),
            match_mode: MatchMode::default(),
        })
    }

    /// Parse `term<TAB>category<TAB>level` rows. `#` lines are comments; a
    /// `# version: X` comment sets the source version. A first row whose term
    /// column reads `term` is taken as a header.
    pub fn read_tsv<R: Read>(
        reader: R,
        default_version: &str,
        category_filter: Option<&BTreeSet<String>>,
    ) -> Result<Self, LexiconError> {
        let mut version = None;
        let mut entries = Vec::new();
        let mut seen_data = false;
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let line_no = i as u64 + 1;
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if trimmed.trim().is_empty() {
                continue;
            }
            if let Some(comment) = trimmed.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(v) = comment
                    .strip_prefix("version:")
                    .or_else(|| comment.strip_prefix("version="))
                {
                    version = Some(v.trim().to_string());
                }
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if !seen_data && fields[0].trim().eq_ignore_ascii_case("term") {
                seen_data = true;
                continue;
            }
            seen_data = true;
            if fields.len() < 3 {
                return Err(LexiconError::SchemaViolation {
                    line: line_no,
                    message: format!("expected term, category and level columns, found {}", fields.len()),
                });
            }
            let term = fields[0];
            let category = fields[1].trim();
            if normalize_term(term).is_empty() {
                return Err(LexiconError::SchemaViolation {
                    line: line_no,
                    message: "term is empty after normalization".into(),
                });
            }
            if category.is_empty() {
                return Err(LexiconError::SchemaViolation {
                    line: line_no,
                    message: "empty category".into(),
                });
            }
            if category_filter.is_some_and(|f| !f.contains(category)) {
                continue;
            }
            entries.push((term.to_string(), category.to_string()));
        }
        Self::from_entries(entries, version.unwrap_or_else(|| default_version.to_string()))
    }

    /// Serialize back to the TSV layout. Levels are not retained, so the
    /// third column is written as `-`.
    pub fn write_tsv<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        writeln!(writer, "# version: {}", self.source_version)?;
        for (term, cats) in &self.categories {
            for cat in cats {
                writeln!(writer, "{term}\t{cat}\t-")?;
            }
        }
        Ok(())
    }

    pub fn with_match_mode(mut self, mode: MatchMode) -> Self {
        self.match_mode = mode;
        self
    }

    pub fn match_mode(&self) -> MatchMode {
        self.match_mode
    }

    pub fn source_version(&self) -> &str {
        &self.source_version
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn contains(&self, normalized: &str) -> bool {
        self.terms.contains(normalized)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    pub fn categories_of(&self, term: &str) -> Option<&BTreeSet<String>> {
        self.categories.get(&normalize_term(term))
    }

    /// Whether `fill_in` counts as hurtful under this lexicon's match mode.
    pub fn is_hurtful(&self, fill_in: &str) -> bool {
        let normalized = normalize_term(fill_in);
        if normalized.is_empty() {
            return false;
        }
        if self.terms.contains(&normalized) {
            return true;
        }
        match self.match_mode {
            MatchMode::Exact => false,
            MatchMode::Token => normalized.split_whitespace().any(|tok| self.terms.contains(tok)),
        }
    }
}

pub fn load_lexicon(
    path: impl AsRef<Path>,
    category_filter: Option<&BTreeSet<String>>,
) -> Result<Lexicon, LexiconError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|err| match err.kind() {
        std::io::ErrorKind::NotFound => LexiconError::MissingFile(path.to_path_buf()),
        _ => LexiconError::Io(err),
    })?;
    let fallback = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Lexicon::read_tsv(file, &fallback, category_filter)
}

/// Free-function form of [`Lexicon::is_hurtful`].
pub fn is_hurtful(lexicon: &Lexicon, fill_in: &str) -> bool {
    lexicon.is_hurtful(fill_in)
}
