//! Identity and predicate tables and their expansion into templates.
//!
//! Identities and predicates are loaded from two CSV files. Every identity is
//! paired with every predicate (identity-major order), producing one
//! [`Template`] per pair. Group tags (gender, age, subset) travel with each
//! template so that later stages can split scores without re-reading the
//! source tables.
//!
//! The emitted manifest is JSON Lines, one template per line. Its SHA-256
//! over the canonical serialization is the hash that completion dumps are
//! pinned to.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Placeholder for the fill-in position in predicate and template text.
pub const SLOT: &str = "[SLOT]";

const IDENTITY_COLUMNS: [&str; 7] = [
    "id",
    "surface",
    "determiner",
    "gender_group",
    "age_group",
    "subset",
    "plural",
];
const PREDICATE_COLUMNS: [&str; 4] = ["id", "surface", "surface_plural", "relation"];

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{file}: row {row}, column `{column}`: {message}")]
    SchemaViolation {
        file: String,
        row: u64,
        column: String,
        message: String,
    },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
        pub enum $name {
            $(
                #[serde(rename = $label)]
                $variant,
            )+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl std::str::FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim() {
                    $($label => Ok($name::$variant),)+
                    other => Err(format!(
                        "expected one of [{}], got `{}`",
                        [$($label),+].join(", "),
                        other
                    )),
                }
            }
        }
    };
}
pub(crate) use label_enum;

label_enum!(GenderGroup {
    Female => "female",
    Male => "male",
    Other => "other",
});

label_enum!(AgeGroup {
    Young => "young",
    Old => "old",
    Other => "other",
});

label_enum!(
    /// Which template collection an identity belongs to.
    Subset {
        Binary => "binary",
        Queer => "queer",
    }
);

label_enum!(
    /// The three predicate relations used by the template set.
    Relation {
        Occupation => "occupation",
        DescriptiveAdjective => "descriptive_adjective",
        DescriptiveVerb => "descriptive_verb",
    }
);

label_enum!(
    /// Identity attribute used to split templates into groups.
    GroupAxis {
        Gender => "gender",
        Age => "age",
    }
);

impl GroupAxis {
    /// Every group label that can appear on this axis, in report order.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            GroupAxis::Gender => &["female", "male", "other"],
            GroupAxis::Age => &["young", "old", "other"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityTerm {
    pub id: String,
    pub surface: String,
    pub determiner: Option<String>,
    pub gender_group: GenderGroup,
    pub age_group: AgeGroup,
    pub subset: Subset,
    /// Selects the plural predicate surface, e.g. for singular "they".
    pub plural: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predicate {
    pub id: String,
    /// Text following the identity, containing exactly one [`SLOT`].
    pub surface: String,
    pub surface_plural: Option<String>,
    pub relation: Relation,
}

/// One prompt instance. Field layout mirrors a manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub text: String,
    pub identity_id: String,
    pub predicate_id: String,
    pub relation: Relation,
    pub gender_group: GenderGroup,
    pub age_group: AgeGroup,
    pub subset: Subset,
}

impl Template {
    pub fn group(&self, axis: GroupAxis) -> &'static str {
        group_of(self, axis)
    }
}

/// Group label of a template's identity along `axis`.
pub fn group_of(template: &Template, axis: GroupAxis) -> &'static str {
    match axis {
        GroupAxis::Gender => template.gender_group.as_str(),
        GroupAxis::Age => template.age_group.as_str(),
    }
}

/// Stable template id: first 16 hex digits of SHA-256 over both ids.
pub fn template_id(identity_id: &str, predicate_id: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(identity_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(predicate_id.as_bytes());
    hex::encode(&hasher.finalize()[..8])
}

fn open(path: &Path) -> Result<File, TemplateError> {
    File::open(path).map_err(|err| match err.kind() {
        std::io::ErrorKind::NotFound => TemplateError::MissingFile(path.to_path_buf()),
        _ => TemplateError::Io(err),
    })
}

pub fn load_template_spec(
    identities_path: impl AsRef<Path>,
    predicates_path: impl AsRef<Path>,
) -> Result<(Vec<IdentityTerm>, Vec<Predicate>), TemplateError> {
    let identities_path = identities_path.as_ref();
    let predicates_path = predicates_path.as_ref();
    let identities = read_identities(
        open(identities_path)?,
        &identities_path.display().to_string(),
    )?;
    let predicates = read_predicates(
        open(predicates_path)?,
        &predicates_path.display().to_string(),
    )?;
    Ok((identities, predicates))
}

/// Column lookup over a CSV header that reports schema violations by name.
struct Columns<'a> {
    file: &'a str,
    index: HashMap<String, usize>,
}

impl<'a> Columns<'a> {
    fn new(
        file: &'a str,
        headers: &csv::StringRecord,
        required: &[&str],
        optional: &[&str],
    ) -> Result<Self, TemplateError> {
        let index: HashMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        for column in required {
            if !index.contains_key(*column) && !optional.contains(column) {
                return Err(TemplateError::SchemaViolation {
                    file: file.to_string(),
                    row: 1,
                    column: column.to_string(),
                    message: "column missing from header".into(),
                });
            }
        }
        Ok(Columns { file, index })
    }

    fn get<'r>(&self, record: &'r csv::StringRecord, column: &str) -> &'r str {
        self.index
            .get(column)
            .and_then(|&i| record.get(i))
            .unwrap_or("")
            .trim()
    }

    fn violation(&self, row: u64, column: &str, message: impl Into<String>) -> TemplateError {
        TemplateError::SchemaViolation {
            file: self.file.to_string(),
            row,
            column: column.to_string(),
            message: message.into(),
        }
    }

    fn parse<T: FromStr<Err = String>>(
        &self,
        record: &csv::StringRecord,
        row: u64,
        column: &str,
    ) -> Result<T, TemplateError> {
        self.get(record, column)
            .parse()
            .map_err(|msg| self.violation(row, column, msg))
    }
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader)
}

fn csv_err(file: &str, err: csv::Error) -> TemplateError {
    let row = err.position().map(|p| p.line()).unwrap_or(0);
    TemplateError::SchemaViolation {
        file: file.to_string(),
        row,
        column: String::new(),
        message: err.to_string(),
    }
}

fn row_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

/// Parse an identities CSV. `file` names the source in error messages.
pub fn read_identities<R: Read>(reader: R, file: &str) -> Result<Vec<IdentityTerm>, TemplateError> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_err(file, e))?.clone();
    let cols = Columns::new(file, &headers, &IDENTITY_COLUMNS, &[])?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(file, e))?;
        let row = row_of(&record);
        let id = cols.get(&record, "id");
        if id.is_empty() {
            return Err(cols.violation(row, "id", "empty id"));
        }
        let surface = cols.get(&record, "surface");
        if surface.is_empty() {
            return Err(cols.violation(row, "surface", "empty surface"));
        }
        let determiner = cols.get(&record, "determiner");
        let determiner = (!determiner.is_empty()).then(|| determiner.to_lowercase());
        let gender_group: GenderGroup = cols.parse(&record, row, "gender_group")?;
        let age_group: AgeGroup = cols.parse(&record, row, "age_group")?;
        let subset: Subset = cols.parse(&record, row, "subset")?;
        if subset == Subset::Queer && gender_group != GenderGroup::Other {
            return Err(cols.violation(
                row,
                "gender_group",
                "queer-subset identities must use gender_group `other`",
            ));
        }
        let plural = match cols.get(&record, "plural").to_ascii_lowercase().as_str() {
            "true" => true,
            "false" | "" => false,
            other => {
                return Err(cols.violation(row, "plural", format!("expected true/false, got `{other}`")))
            }
        };
        if !seen.insert(id.to_string()) {
            return Err(TemplateError::DuplicateId(id.to_string()));
        }
        out.push(IdentityTerm {
            id: id.to_string(),
            surface: surface.to_string(),
            determiner,
            gender_group,
            age_group,
            subset,
            plural,
        });
    }
    Ok(out)
}

fn check_slot(surface: &str) -> Result<(), String> {
    match surface.matches(SLOT).count() {
        1 => Ok(()),
        n => Err(format!("expected exactly one {SLOT} marker, found {n}")),
    }
}

/// Parse a predicates CSV. The `surface_plural` column may be absent.
pub fn read_predicates<R: Read>(reader: R, file: &str) -> Result<Vec<Predicate>, TemplateError> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_err(file, e))?.clone();
    let cols = Columns::new(file, &headers, &PREDICATE_COLUMNS, &["surface_plural"])?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(file, e))?;
        let row = row_of(&record);
        let id = cols.get(&record, "id");
        if id.is_empty() {
            return Err(cols.violation(row, "id", "empty id"));
        }
        let surface = cols.get(&record, "surface");
        check_slot(surface).map_err(|m| cols.violation(row, "surface", m))?;
        let plural = cols.get(&record, "surface_plural");
        let surface_plural = if plural.is_empty() {
            None
        } else {
            check_slot(plural).map_err(|m| cols.violation(row, "surface_plural", m))?;
            Some(plural.to_string())
        };
        let relation: Relation = cols.parse(&record, row, "relation")?;
        if !seen.insert(id.to_string()) {
            return Err(TemplateError::DuplicateId(id.to_string()));
        }
        out.push(Predicate {
            id: id.to_string(),
            surface: surface.to_string(),
            surface_plural,
            relation,
        });
    }
    Ok(out)
}

/// Cartesian product of identities and predicates, identity-major.
pub fn expand_templates(identities: &[IdentityTerm], predicates: &[Predicate]) -> Vec<Template> {
    let mut out = Vec::with_capacity(identities.len() * predicates.len());
    for identity in identities {
        for predicate in predicates {
            let tail = match (&predicate.surface_plural, identity.plural) {
                (Some(plural), true) => plural.as_str(),
                _ => predicate.surface.as_str(),
            };
            let text = match &identity.determiner {
                Some(det) => format!("{det} {} {tail}", identity.surface),
                None => format!("{} {tail}", identity.surface),
            };
            out.push(Template {
                id: template_id(&identity.id, &predicate.id),
                text,
                identity_id: identity.id.clone(),
                predicate_id: predicate.id.clone(),
                relation: predicate.relation,
                gender_group: identity.gender_group,
                age_group: identity.age_group,
                subset: identity.subset,
            });
        }
    }
    out
}

/// An ordered, id-indexed template set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateManifest {
    templates: Vec<Template>,
    index: HashMap<String, usize>,
}

impl TemplateManifest {
    pub fn new(templates: Vec<Template>) -> Result<Self, TemplateError> {
        let mut index = HashMap::with_capacity(templates.len());
        for (i, t) in templates.iter().enumerate() {
            if index.insert(t.id.clone(), i).is_some() {
                return Err(TemplateError::DuplicateId(t.id.clone()));
            }
        }
        Ok(TemplateManifest { templates, index })
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn get(&self, id: &str) -> Option<&Template> {
        self.index.get(id).map(|&i| &self.templates[i])
    }

    /// Position of a template in manifest order.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for t in &self.templates {
            serde_json::to_writer(&mut writer, t)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// SHA-256 (hex) of the canonical JSON Lines serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }

    pub fn read_jsonl<R: Read>(reader: R, file: &str) -> Result<Self, TemplateError> {
        let mut templates = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let template: Template =
                serde_json::from_str(&line).map_err(|e| TemplateError::SchemaViolation {
                    file: file.to_string(),
                    row: i as u64 + 1,
                    column: String::new(),
                    message: e.to_string(),
                })?;
            if let Err(message) = check_slot(&template.text) {
                return Err(TemplateError::SchemaViolation {
                    file: file.to_string(),
                    row: i as u64 + 1,
                    column: "text".into(),
                    message,
                });
            }
            templates.push(template);
        }
        Self::new(templates)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let path = path.as_ref();
        Self::read_jsonl(open(path)?, &path.display().to_string())
    }
}
