//! Cohort data model and score-file ingestion.
//!
//! A score file is UTF-8 CSV with a header row. The entity id, score and
//! label columns are required; an as-of date, a model id and any number of
//! group-attribute columns are optional. Empty attribute cells are mapped to
//! the reserved [`UNKNOWN_CATEGORY`] so that people with missing group
//! information are still audited as a group of their own.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Category assigned to examples whose attribute cell is empty.
pub const UNKNOWN_CATEGORY: &str = "unknown";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("score file is empty (no header or no data rows)")]
    Empty,
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("line {line}: malformed score `{value}`")]
    BadScore { line: u64, value: String },
    #[error("line {line}: label `{value}` is not 0 or 1")]
    BadLabel { line: u64, value: String },
    #[error("line {line}: malformed date `{value}` (expected YYYY-MM-DD)")]
    BadDate { line: u64, value: String },
    #[error("line {line}: empty entity id")]
    EmptyId { line: u64 },
    #[error("duplicate key {key} on rows {first} and {second}")]
    DuplicateKey { key: String, first: u64, second: u64 },
    #[error("example `{0}` has a non-finite score")]
    NonFiniteScore(String),
    #[error("example `{id}` has no value for attribute `{attribute}`")]
    MissingAttributeValue { id: String, attribute: String },
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("invalid ingest config: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One person-level prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub entity_id: String,
    /// Higher means higher predicted risk. Any finite scale is accepted.
    pub score: f64,
    pub label: bool,
    pub group_values: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub as_of_date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
}

impl ScoredExample {
    pub fn new(entity_id: impl Into<String>, score: f64, label: bool) -> Self {
        Self {
            entity_id: entity_id.into(),
            score,
            label,
            group_values: BTreeMap::new(),
            as_of_date: None,
            model_id: None,
        }
    }

    pub fn with_group(mut self, attribute: impl Into<String>, category: impl Into<String>) -> Self {
        self.group_values.insert(attribute.into(), category.into());
        self
    }

    pub fn with_date(mut self, date: NaiveDate) -> Self {
        self.as_of_date = Some(date);
        self
    }

    pub fn with_model(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = Some(model_id.into());
        self
    }

    pub fn group(&self, attribute: &str) -> Option<&str> {
        self.group_values.get(attribute).map(String::as_str)
    }

    fn key(&self) -> String {
        format!(
            "(entity_id={}, model_id={}, as_of_date={})",
            self.entity_id,
            self.model_id.as_deref().unwrap_or("-"),
            self.as_of_date.map(|d| d.to_string()).unwrap_or_else(|| "-".into())
        )
    }
}

/// Column mapping for a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    #[serde(default = "default_id_col")]
    pub id_col: String,
    #[serde(default = "default_score_col")]
    pub score_col: String,
    #[serde(default = "default_label_col")]
    pub label_col: String,
    /// Group attribute columns. When empty, every column not claimed by
    /// another field is treated as an attribute.
    #[serde(default)]
    pub attribute_cols: Vec<String>,
    /// When unset, a column named `as_of_date` is picked up if present.
    #[serde(default)]
    pub date_col: Option<String>,
    /// When unset, a column named `model_id` is picked up if present.
    #[serde(default)]
    pub model_col: Option<String>,
}

fn default_id_col() -> String {
    "entity_id".into()
}
fn default_score_col() -> String {
    "score".into()
}
fn default_label_col() -> String {
    "label".into()
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            id_col: default_id_col(),
            score_col: default_score_col(),
            label_col: default_label_col(),
            attribute_cols: Vec::new(),
            date_col: None,
            model_col: None,
        }
    }
}

impl IngestConfig {
    pub fn with_attributes<I, S>(attributes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { attribute_cols: attributes.into_iter().map(Into::into).collect(), ..Self::default() }
    }

    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        serde_json::from_str(text).map_err(|e| IngestError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub ingested_at: DateTime<Utc>,
}

/// Row count and per-attribute category counts, computed at construction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub rows: usize,
    pub categories: BTreeMap<String, BTreeMap<String, usize>>,
}

/// A validated, immutable set of scored examples.
#[derive(Debug, Clone, Serialize)]
pub struct Cohort {
    examples: Vec<ScoredExample>,
    attributes: Vec<String>,
    provenance: Provenance,
    summary: ValidationSummary,
}

impl Cohort {
    /// Builds a cohort, checking the example invariants.
    pub fn new(
        examples: Vec<ScoredExample>,
        attributes: Vec<String>,
        source: impl Into<String>,
    ) -> Result<Self, IngestError> {
        let mut seen: HashMap<String, u64> = HashMap::with_capacity(examples.len());
        for (idx, ex) in examples.iter().enumerate() {
            let row = idx as u64 + 1;
            if ex.entity_id.is_empty() {
                return Err(IngestError::EmptyId { line: row });
            }
            if !ex.score.is_finite() {
                return Err(IngestError::NonFiniteScore(ex.entity_id.clone()));
            }
            for attr in &attributes {
                if !ex.group_values.contains_key(attr) {
                    return Err(IngestError::MissingAttributeValue {
                        id: ex.entity_id.clone(),
                        attribute: attr.clone(),
                    });
                }
            }
            if let Some(first) = seen.insert(ex.key(), row) {
                return Err(IngestError::DuplicateKey { key: ex.key(), first, second: row });
            }
        }
        Ok(Self::assemble(examples, attributes, source.into()))
    }

    fn assemble(examples: Vec<ScoredExample>, attributes: Vec<String>, source: String) -> Self {
        let mut categories: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for attr in &attributes {
            let counts = categories.entry(attr.clone()).or_default();
            for ex in &examples {
                if let Some(cat) = ex.group(attr) {
                    *counts.entry(cat.to_string()).or_default() += 1;
                }
            }
        }
        let summary = ValidationSummary { rows: examples.len(), categories };
        Self { examples, attributes, provenance: Provenance { source, ingested_at: Utc::now() }, summary }
    }

    pub fn examples(&self) -> &[ScoredExample] {
        &self.examples
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn summary(&self) -> &ValidationSummary {
        &self.summary
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn has_attribute(&self, attribute: &str) -> bool {
        self.attributes.iter().any(|a| a == attribute)
    }

    /// Categories observed for `attribute`, sorted.
    pub fn categories(&self, attribute: &str) -> Result<Vec<String>, IngestError> {
        self.summary
            .categories
            .get(attribute)
            .map(|m| m.keys().cloned().collect())
            .ok_or_else(|| IngestError::UnknownAttribute(attribute.to_string()))
    }

    /// Keeps the examples matching `pred`. The result is re-validated.
    pub fn filter<F>(&self, mut pred: F) -> Cohort
    where
        F: FnMut(&ScoredExample) -> bool,
    {
        let examples = self.examples.iter().filter(|e| pred(e)).cloned().collect();
        Self::assemble(examples, self.attributes.clone(), self.provenance.source.clone())
    }

    /// Column mapping that re-reads the output of [`write_score_file`].
    pub fn ingest_config(&self) -> IngestConfig {
        IngestConfig {
            attribute_cols: self.attributes.clone(),
            date_col: self.examples.iter().any(|e| e.as_of_date.is_some()).then(|| "as_of_date".into()),
            model_col: self.examples.iter().any(|e| e.model_id.is_some()).then(|| "model_id".into()),
            ..IngestConfig::default()
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, IngestError> {
    headers.iter().position(|h| h == name).ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}

/// Parses a delimited score file into a [`Cohort`].
pub fn parse_score_file<R: Read>(source: R, schema: &IngestConfig, source_name: &str) -> Result<Cohort, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(IngestError::Empty);
    }

    let id_idx = column(&headers, &schema.id_col)?;
    let score_idx = column(&headers, &schema.score_col)?;
    let label_idx = column(&headers, &schema.label_col)?;
    let date_idx = match &schema.date_col {
        Some(name) => Some(column(&headers, name)?),
        None => headers.iter().position(|h| h == "as_of_date"),
    };
    let model_idx = match &schema.model_col {
        Some(name) => Some(column(&headers, name)?),
        None => headers.iter().position(|h| h == "model_id"),
    };
    let claimed = [Some(id_idx), Some(score_idx), Some(label_idx), date_idx, model_idx];
    let attributes: Vec<(String, usize)> = if schema.attribute_cols.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !claimed.contains(&Some(*i)))
            .map(|(i, h)| (h.to_string(), i))
            .collect()
    } else {
        schema.attribute_cols.iter().map(|a| column(&headers, a).map(|i| (a.clone(), i))).collect::<Result<_, _>>()?
    };

    let mut examples = Vec::new();
    let mut lines = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);

        let entity_id = record[id_idx].to_string();
        if entity_id.is_empty() {
            return Err(IngestError::EmptyId { line });
        }
        let raw_score = &record[score_idx];
        let score: f64 = raw_score
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| IngestError::BadScore { line, value: raw_score.to_string() })?;
        let label = match &record[label_idx] {
            "0" => false,
            "1" => true,
            other => return Err(IngestError::BadLabel { line, value: other.to_string() }),
        };
        let as_of_date = match date_idx.map(|i| &record[i]) {
            None | Some("") => None,
            Some(raw) => Some(
                NaiveDate::parse_from_str(raw, "%Y-%m-%d")
                    .map_err(|_| IngestError::BadDate { line, value: raw.to_string() })?,
            ),
        };
        let model_id = model_idx.map(|i| record[i].to_string()).filter(|m| !m.is_empty());
        let group_values = attributes
            .iter()
            .map(|(name, i)| {
                let cell = &record[*i];
                let cat = if cell.is_empty() { UNKNOWN_CATEGORY } else { cell };
                (name.clone(), cat.to_string())
            })
            .collect();

        examples.push(ScoredExample { entity_id, score, label, group_values, as_of_date, model_id });
        lines.push(line);
    }
    if examples.is_empty() {
        return Err(IngestError::Empty);
    }

    let mut seen: HashMap<String, u64> = HashMap::with_capacity(examples.len());
    for (ex, line) in examples.iter().zip(&lines) {
        if let Some(first) = seen.insert(ex.key(), *line) {
            return Err(IngestError::DuplicateKey { key: ex.key(), first, second: *line });
        }
    }

    let names = attributes.into_iter().map(|(n, _)| n).collect();
    Ok(Cohort::assemble(examples, names, source_name.to_string()))
}

/// Writes a cohort in the score-file format read by [`parse_score_file`].
///
/// Scores are written with the shortest representation that parses back to
/// the same `f64`.
pub fn write_score_file<W: Write>(cohort: &Cohort, sink: W) -> Result<(), IngestError> {
    let with_date = cohort.examples.iter().any(|e| e.as_of_date.is_some());
    let with_model = cohort.examples.iter().any(|e| e.model_id.is_some());
    let mut writer = csv::Writer::from_writer(sink);

    let mut header = vec!["entity_id", "score", "label"];
    if with_date {
        header.push("as_of_date");
    }
    if with_model {
        header.push("model_id");
    }
    header.extend(cohort.attributes.iter().map(String::as_str));
    writer.write_record(&header)?;

    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for ex in &cohort.examples {
        row.clear();
        row.push(ex.entity_id.clone());
        row.push(format!("{:?}", ex.score));
        row.push(if ex.label { "1" } else { "0" }.into());
        if with_date {
            row.push(ex.as_of_date.map(|d| d.to_string()).unwrap_or_default());
        }
        if with_model {
            row.push(ex.model_id.clone().unwrap_or_default());
        }
        for attr in &cohort.attributes {
            row.push(ex.group(attr).unwrap_or(UNKNOWN_CATEGORY).to_string());
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Splits a cohort by the categories of one attribute.
pub fn partition_by_group<'a>(
    cohort: &'a Cohort,
    attribute: &str,
) -> Result<BTreeMap<String, Vec<&'a ScoredExample>>, IngestError> {
    if !cohort.has_attribute(attribute) {
        return Err(IngestError::UnknownAttribute(attribute.to_string()));
    }
    let mut parts: BTreeMap<String, Vec<&ScoredExample>> = BTreeMap::new();
    for ex in &cohort.examples {
        let cat = ex.group(attribute).unwrap_or(UNKNOWN_CATEGORY);
        match parts.get_mut(cat) {
            Some(v) => v.push(ex),
            None => {
                parts.insert(cat.to_string(), vec![ex]);
            }
        }
    }
    Ok(parts)
}
