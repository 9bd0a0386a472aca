//! Manifest and dataset tables: loading, cleaning, and writing results.
//!
//! The manifest (`df_info`) has one row per dataset with the natural-language
//! criteria. Each dataset is its own table of titles and abstracts, optionally
//! carrying human labels and earlier model output. Results are written back in
//! the same shape with all six columns present, which also makes a results file
//! a valid input for resuming.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const COL_DATASET_NAME: &str = "Dataset Name";
pub const COL_INCLUSION: &str = "Inclusion Criteria";
pub const COL_EXCLUSION: &str = "Exclusion Criteria";
/// Spelling used in the original `df_info` column listing.
pub const COL_EXCLUSION_ALIAS: &str = "Excusion Criteria";

pub const COL_TITLE: &str = "title";
pub const COL_ABSTRACT: &str = "abstract";
pub const COL_HUMAN_DECISION: &str = "human_decision";
pub const COL_DECISION: &str = "decision";
pub const COL_EXPLANATION: &str = "explanation";
pub const COL_REFLECTION: &str = "reflection";

/// Column order of a results file.
pub const RESULT_COLUMNS: [&str; 6] = [
    COL_TITLE,
    COL_ABSTRACT,
    COL_HUMAN_DECISION,
    COL_DECISION,
    COL_EXPLANATION,
    COL_REFLECTION,
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed table: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{column}`")]
    MissingColumn { column: String },
    #[error("duplicate dataset name `{0}`")]
    DuplicateDatasetName(String),
    #[error("manifest has no entries")]
    EmptyManifest,
    #[error("row {row}: `{column}` is empty after cleaning")]
    EmptyField { row: usize, column: String },
    #[error("unknown dataset `{0}` (not listed in the manifest)")]
    UnknownDataset(String),
    #[error("row {row}: column `{column}` holds `{value}`, expected included/excluded/unparseable/error")]
    UnparseableDecisionValue {
        row: usize,
        column: String,
        value: String,
    },
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Screening outcome for one record.
///
/// Only `Included` and `Excluded` are labels; `Unparseable` and `Error` mark
/// rows where the backend produced no usable answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Included,
    Excluded,
    Unparseable,
    Error,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Included => "included",
            Decision::Excluded => "excluded",
            Decision::Unparseable => "unparseable",
            Decision::Error => "error",
        }
    }

    /// True for `Included` and `Excluded`.
    pub fn is_label(self) -> bool {
        matches!(self, Decision::Included | Decision::Excluded)
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("not a decision value: `{0}`")]
pub struct ParseDecisionError(pub String);

impl FromStr for Decision {
    type Err = ParseDecisionError;

    /// Accepts the serialized forms, ignoring case and surrounding whitespace.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "included" => Ok(Decision::Included),
            "excluded" => Ok(Decision::Excluded),
            "unparseable" => Ok(Decision::Unparseable),
            "error" => Ok(Decision::Error),
            _ => Err(ParseDecisionError(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriteriaSet {
    pub inclusion: String,
    pub exclusion: String,
}

impl CriteriaSet {
    pub fn new(inclusion: impl Into<String>, exclusion: impl Into<String>) -> Self {
        Self {
            inclusion: inclusion.into(),
            exclusion: exclusion.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub dataset_name: String,
    pub criteria: CriteriaSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScreeningManifest {
    pub entries: Vec<ManifestEntry>,
}

impl ScreeningManifest {
    /// Builds a manifest from entries, enforcing unique non-empty names.
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self, CorpusError> {
        if entries.is_empty() {
            return Err(CorpusError::EmptyManifest);
        }
        let mut seen = HashSet::new();
        for (row, entry) in entries.iter().enumerate() {
            if entry.dataset_name.is_empty() {
                return Err(CorpusError::EmptyField {
                    row,
                    column: COL_DATASET_NAME.to_string(),
                });
            }
            if !seen.insert(entry.dataset_name.as_str()) {
                return Err(CorpusError::DuplicateDatasetName(entry.dataset_name.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, dataset_name: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.dataset_name == dataset_name)
    }

    pub fn criteria(&self, dataset_name: &str) -> Result<&CriteriaSet, CorpusError> {
        self.get(dataset_name)
            .map(|e| &e.criteria)
            .ok_or_else(|| CorpusError::UnknownDataset(dataset_name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.dataset_name.as_str())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, CorpusError> {
        let mut rdr = csv_reader(reader, b',');
        let headers = rdr.headers()?.clone();
        let name_col = require_column(&headers, &[COL_DATASET_NAME])?;
        let inc_col = require_column(&headers, &[COL_INCLUSION])?;
        let exc_col = require_column(&headers, &[COL_EXCLUSION, COL_EXCLUSION_ALIAS])?;

        let mut entries = Vec::new();
        for (row, result) in rdr.records().enumerate() {
            let record = result?;
            let field = |idx: usize, column: &str| -> Result<String, CorpusError> {
                let value = clean_text(record.get(idx).unwrap_or(""));
                if value.is_empty() {
                    return Err(CorpusError::EmptyField {
                        row,
                        column: column.to_string(),
                    });
                }
                Ok(value)
            };
            entries.push(ManifestEntry {
                dataset_name: field(name_col, COL_DATASET_NAME)?,
                criteria: CriteriaSet {
                    inclusion: field(inc_col, COL_INCLUSION)?,
                    exclusion: field(exc_col, COL_EXCLUSION)?,
                },
            });
        }
        Self::new(entries)
    }
}

/// One title/abstract row plus whatever labels and model output it carries.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScreeningRecord {
    pub row_index: usize,
    pub title: String,
    pub abstract_text: String,
    pub human_decision: Option<Decision>,
    pub model_decision: Option<Decision>,
    pub explanation: Option<String>,
    pub reflection: Option<String>,
}

impl ScreeningRecord {
    pub fn new(row_index: usize, title: impl Into<String>, abstract_text: impl Into<String>) -> Self {
        Self {
            row_index,
            title: title.into(),
            abstract_text: abstract_text.into(),
            ..Self::default()
        }
    }

    pub fn with_human(mut self, decision: Decision) -> Self {
        self.human_decision = Some(decision);
        self
    }

    pub fn with_model(mut self, decision: Decision) -> Self {
        self.model_decision = Some(decision);
        self
    }
}

/// Strips a raw string down to printable ASCII.
///
/// Code points above U+007F and control characters are deleted, ASCII
/// whitespace (space, tab, newlines, form feed, vertical tab) collapses to a
/// single space, and the result is trimmed.
pub fn clean_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars() {
        if ch.is_ascii_whitespace() || ch == '\x0b' {
            pending_space = true;
            continue;
        }
        if !ch.is_ascii() || ch.is_ascii_control() {
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        out.push(ch);
    }
    out
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<ScreeningManifest, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    ScreeningManifest::from_reader(file)
}

/// Loads a dataset table named `name`, which must be listed in `manifest`.
pub fn load_dataset(
    path: impl AsRef<Path>,
    name: &str,
    manifest: &ScreeningManifest,
) -> Result<Vec<ScreeningRecord>, CorpusError> {
    if manifest.get(name).is_none() {
        return Err(CorpusError::UnknownDataset(name.to_string()));
    }
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    read_records(file)
}

/// Parses a dataset or results table from any reader.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<ScreeningRecord>, CorpusError> {
    let mut rdr = csv_reader(reader, b',');
    let headers = rdr.headers()?.clone();
    let title_col = require_column(&headers, &[COL_TITLE])?;
    let abstract_col = require_column(&headers, &[COL_ABSTRACT])?;
    let human_col = find_column(&headers, &[COL_HUMAN_DECISION]);
    let decision_col = find_column(&headers, &[COL_DECISION]);
    let explanation_col = find_column(&headers, &[COL_EXPLANATION]);
    let reflection_col = find_column(&headers, &[COL_REFLECTION]);

    let mut records = Vec::new();
    for (row_index, result) in rdr.records().enumerate() {
        let row = result?;
        let text = |col: Option<usize>| col.and_then(|i| row.get(i)).map(clean_text);
        let optional_text = |col: Option<usize>| text(col).filter(|s| !s.is_empty());
        let decision = |col: Option<usize>, column: &str| -> Result<Option<Decision>, CorpusError> {
            parse_decision_cell(col.and_then(|i| row.get(i)), row_index, column)
        };

        let title = text(Some(title_col)).unwrap_or_default();
        if title.is_empty() {
            return Err(CorpusError::EmptyField {
                row: row_index,
                column: COL_TITLE.to_string(),
            });
        }
        records.push(ScreeningRecord {
            row_index,
            title,
            abstract_text: text(Some(abstract_col)).unwrap_or_default(),
            human_decision: decision(human_col, COL_HUMAN_DECISION)?,
            model_decision: decision(decision_col, COL_DECISION)?,
            explanation: optional_text(explanation_col),
            reflection: optional_text(reflection_col),
        });
    }
    Ok(records)
}

/// One decision cell per data row; `None` for empty cells.
pub type DecisionColumn = Vec<Option<Decision>>;

/// Reads two decision columns by header name, for scoring one against the other.
pub fn load_decision_columns(
    path: impl AsRef<Path>,
    truth_column: &str,
    pred_column: &str,
) -> Result<(DecisionColumn, DecisionColumn), CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut rdr = csv_reader(file, b',');
    let headers = rdr.headers()?.clone();
    let truth_idx = require_column(&headers, &[truth_column])?;
    let pred_idx = require_column(&headers, &[pred_column])?;

    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for (row_index, result) in rdr.records().enumerate() {
        let row = result?;
        truth.push(parse_decision_cell(row.get(truth_idx), row_index, truth_column)?);
        pred.push(parse_decision_cell(row.get(pred_idx), row_index, pred_column)?);
    }
    Ok((truth, pred))
}

/// Writes a results table, atomically replacing `path`.
///
/// Rows are ordered by `row_index`; absent values become empty cells.
pub fn write_results(records: &[ScreeningRecord], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CorpusError::io(dir, e))?;
    write_results_to(records, tmp.as_file_mut())?;
    tmp.as_file_mut()
        .sync_all()
        .map_err(|e| CorpusError::io(path, e))?;
    tmp.persist(path).map_err(|e| CorpusError::io(path, e.error))?;
    Ok(())
}

pub fn write_results_to<W: Write>(records: &[ScreeningRecord], writer: W) -> Result<(), CorpusError> {
    let mut ordered: Vec<&ScreeningRecord> = records.iter().collect();
    ordered.sort_by_key(|r| r.row_index);

    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(RESULT_COLUMNS)?;
    for r in ordered {
        wtr.write_record([
            r.title.as_str(),
            r.abstract_text.as_str(),
            r.human_decision.map(Decision::as_str).unwrap_or(""),
            r.model_decision.map(Decision::as_str).unwrap_or(""),
            r.explanation.as_deref().unwrap_or(""),
            r.reflection.as_deref().unwrap_or(""),
        ])?;
    }
    wtr.flush().map_err(|e| CorpusError::Csv(e.into()))?;
    Ok(())
}

fn csv_reader<R: Read>(reader: R, delimiter: u8) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader)
}

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers.iter().position(|h| {
        let h = h.trim().trim_start_matches('\u{feff}');
        names.iter().any(|n| h.eq_ignore_ascii_case(n))
    })
}

fn require_column(headers: &csv::StringRecord, names: &[&str]) -> Result<usize, CorpusError> {
    find_column(headers, names).ok_or_else(|| CorpusError::MissingColumn {
        column: names[0].to_string(),
    })
}

fn parse_decision_cell(
    cell: Option<&str>,
    row: usize,
    column: &str,
) -> Result<Option<Decision>, CorpusError> {
    match cell.map(str::trim) {
        None | Some("") => Ok(None),
        Some(value) => value
            .parse()
            .map(Some)
            .map_err(|_| CorpusError::UnparseableDecisionValue {
                row,
                column: column.to_string(),
                value: value.to_string(),
            }),
    }
}
