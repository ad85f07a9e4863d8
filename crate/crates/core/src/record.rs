//! Records, datasets, and their file formats (CSV and JSON lines).

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque record identifier, unique within a dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordId(pub String);

impl RecordId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RecordId {
    fn from(s: &str) -> Self {
        RecordId(s.to_owned())
    }
}

impl From<String> for RecordId {
    fn from(s: String) -> Self {
        RecordId(s)
    }
}

/// An attribute value. Missing is a distinct state, not an empty string;
/// in JSON it maps to null, in CSV to an empty cell or a configured marker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Option<String>", into = "Option<String>")]
pub enum AttrValue {
    Missing,
    Text(String),
}

impl AttrValue {
    pub fn text(s: impl Into<String>) -> Self {
        AttrValue::Text(s.into())
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            AttrValue::Text(s) => Some(s),
            AttrValue::Missing => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, AttrValue::Missing)
    }
}

impl From<Option<String>> for AttrValue {
    fn from(v: Option<String>) -> Self {
        match v {
            Some(s) => AttrValue::Text(s),
            None => AttrValue::Missing,
        }
    }
}

impl From<AttrValue> for Option<String> {
    fn from(v: AttrValue) -> Self {
        match v {
            AttrValue::Text(s) => Some(s),
            AttrValue::Missing => None,
        }
    }
}

/// A keyed bag of attribute name to value pairs. Attribute order is preserved
/// and names are unique (enforced by the map).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: RecordId,
    pub attrs: IndexMap<String, AttrValue>,
}

impl Record {
    pub fn new(id: impl Into<RecordId>) -> Self {
        Record { id: id.into(), attrs: IndexMap::new() }
    }

    pub fn with_attr(mut self, name: impl Into<String>, value: AttrValue) -> Self {
        self.attrs.insert(name.into(), value);
        self
    }

    pub fn with_text(self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.with_attr(name, AttrValue::Text(value.into()))
    }

    pub fn get(&self, name: &str) -> Option<&AttrValue> {
        self.attrs.get(name)
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        self.attrs.get(name).and_then(AttrValue::as_text)
    }

    pub fn is_missing(&self, name: &str) -> bool {
        matches!(self.attrs.get(name), Some(AttrValue::Missing))
    }

    pub fn missing_attrs(&self) -> Vec<&str> {
        self.attrs
            .iter()
            .filter(|(_, v)| v.is_missing())
            .map(|(k, _)| k.as_str())
            .collect()
    }
}

/// Renders a record as "a1 is e1; a2 is e2; ... an is en." over the given
/// attributes in order, skipping missing values and the excluded attribute.
/// Returns an empty string when nothing is available to serialize.
pub fn serialize_record(record: &Record, attrs: &[String], exclude: Option<&str>) -> String {
    let mut parts = Vec::new();
    for name in attrs {
        if Some(name.as_str()) == exclude {
            continue;
        }
        if let Some(value) = record.text(name) {
            parts.push(format!("{name} is {value}"));
        }
    }
    if parts.is_empty() {
        String::new()
    } else {
        format!("{}.", parts.join("; "))
    }
}

/// An ordered collection of records sharing a schema. Record order is stable
/// and used for deterministic tie-breaking throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub schema: Vec<String>,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, schema: Vec<String>) -> Self {
        Dataset { name: name.into(), schema, records: Vec::new() }
    }

    /// Append a record, enforcing id uniqueness and schema membership.
    pub fn push(&mut self, record: Record) -> Result<(), DatasetError> {
        if self.records.iter().any(|r| r.id == record.id) {
            return Err(DatasetError::DuplicateId(record.id.to_string()));
        }
        for name in record.attrs.keys() {
            if !self.schema.iter().any(|s| s == name) {
                return Err(DatasetError::UnknownAttribute {
                    record: record.id.to_string(),
                    attr: name.clone(),
                });
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &RecordId) -> Option<&Record> {
        self.records.iter().find(|r| &r.id == id)
    }

    pub fn index_of(&self, id: &RecordId) -> Option<usize> {
        self.records.iter().position(|r| &r.id == id)
    }

    /// Read a CSV with a header row. The header is the schema; an `id` column
    /// is mandatory and is not part of the schema. Empty cells and any
    /// configured per-column marker read as missing.
    pub fn from_csv_reader<R: Read>(
        reader: R,
        name: impl Into<String>,
        options: &CsvOptions,
    ) -> Result<Self, DatasetError> {
        let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = csv_reader.headers()?.clone();
        let id_pos = headers
            .iter()
            .position(|h| h == "id")
            .ok_or(DatasetError::MissingIdColumn)?;
        let schema: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != id_pos)
            .map(|(_, h)| h.to_owned())
            .collect();
        let mut dataset = Dataset::new(name, schema);
        for row in csv_reader.records() {
            let row = row?;
            let id = row
                .get(id_pos)
                .ok_or(DatasetError::MissingIdColumn)?
                .to_owned();
            let mut record = Record::new(id);
            for (i, header) in headers.iter().enumerate() {
                if i == id_pos {
                    continue;
                }
                let cell = row.get(i).unwrap_or("");
                let marker = options.missing_markers.get(header).map(String::as_str);
                let value = if cell.is_empty() || Some(cell) == marker {
                    AttrValue::Missing
                } else {
                    AttrValue::Text(cell.to_owned())
                };
                record.attrs.insert(header.to_owned(), value);
            }
            dataset.push(record)?;
        }
        Ok(dataset)
    }

    pub fn from_csv_path(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_owned());
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, name, options)
    }

    /// Read JSON lines: one object per line with an "id" field; every other
    /// field is an attribute, null meaning missing. The schema is the union
    /// of attribute names in first-seen order.
    pub fn from_jsonl_reader<R: Read>(
        reader: R,
        name: impl Into<String>,
    ) -> Result<Self, DatasetError> {
        let mut records = Vec::new();
        let mut schema: Vec<String> = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        for (line_no, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: IndexMap<String, serde_json::Value> = serde_json::from_str(&line)
                .map_err(|source| DatasetError::Json { line: line_no + 1, source })?;
            let mut id = None;
            let mut record_attrs = IndexMap::new();
            for (key, value) in row {
                if key == "id" {
                    id = Some(match value {
                        serde_json::Value::String(s) => s,
                        other => other.to_string(),
                    });
                    continue;
                }
                let attr = match value {
                    serde_json::Value::Null => AttrValue::Missing,
                    serde_json::Value::String(s) => AttrValue::Text(s),
                    other => AttrValue::Text(other.to_string()),
                };
                if seen.insert(key.clone()) {
                    schema.push(key.clone());
                }
                record_attrs.insert(key, attr);
            }
            let id = id.ok_or(DatasetError::MissingIdColumn)?;
            records.push(Record { id: RecordId(id), attrs: record_attrs });
        }
        let mut dataset = Dataset::new(name, schema);
        for record in records {
            dataset.push(record)?;
        }
        Ok(dataset)
    }

    pub fn from_jsonl_path(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_owned());
        let file = std::fs::File::open(path)?;
        Self::from_jsonl_reader(file, name)
    }
}

/// Per-column markers that read as missing in CSV, on top of the empty cell.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub missing_markers: std::collections::BTreeMap<String, String>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("record {record:?} has attribute {attr:?} outside the schema")]
    UnknownAttribute { record: String, attr: String },
    #[error("input has no id column")]
    MissingIdColumn,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}
