//! News records, datasets, and line-delimited ingestion.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Binary veracity label. Integer codes are fixed: `0` real, `1` fake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Verdict {
    Real,
    Fake,
}

impl Verdict {
    pub fn code(self) -> u8 {
        match self {
            Verdict::Real => 0,
            Verdict::Fake => 1,
        }
    }

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            0 => Some(Verdict::Real),
            1 => Some(Verdict::Fake),
            _ => None,
        }
    }

    /// Lower-case word used in prompts ("fake" / "real").
    pub fn word(self) -> &'static str {
        match self {
            Verdict::Real => "real",
            Verdict::Fake => "fake",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

impl Serialize for Verdict {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.code())
    }
}

impl<'de> Deserialize<'de> for Verdict {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let code = i64::deserialize(deserializer)?;
        Verdict::from_code(code)
            .ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {code}")))
    }
}

/// One news record: content, optional comments, gold label, and domain tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub content: String,
    #[serde(default)]
    pub comments: Vec<String>,
    pub label: Verdict,
    pub domain: String,
}

impl NewsItem {
    pub fn has_comments(&self) -> bool {
        !self.comments.is_empty()
    }
}

/// Trim and case-fold a domain tag.
pub fn normalize_domain(tag: &str) -> String {
    tag.trim().to_lowercase()
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: record lacks required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: label must be 0 or 1, got {value}")]
    BadLabel { line: usize, value: String },
    #[error("duplicate item id `{0}`")]
    DuplicateId(String),
    #[error("file contains no records")]
    EmptyFile,
    #[error("dataset is empty")]
    EmptyDataset,
}

/// A named, ordered collection of news items with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    items: Vec<NewsItem>,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate ids. Domain tags are normalized.
    pub fn new(name: impl Into<String>, items: Vec<NewsItem>) -> Result<Self, DataError> {
        let mut seen = HashSet::with_capacity(items.len());
        let mut items = items;
        for item in &mut items {
            item.domain = normalize_domain(&item.domain);
            if !seen.insert(item.id.clone()) {
                return Err(DataError::DuplicateId(item.id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            items,
        })
    }

    pub fn items(&self) -> &[NewsItem] {
        &self.items
    }

    pub fn into_items(self) -> Vec<NewsItem> {
        self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn domains(&self) -> BTreeSet<String> {
        self.items.iter().map(|i| i.domain.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&NewsItem> {
        self.items.iter().find(|i| i.id == id)
    }

    /// Serializes to the line-delimited record format read by [`load_dataset`].
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).expect("news items always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), DataError> {
        let io_err = |source| DataError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut file = fs::File::create(path).map_err(io_err)?;
        file.write_all(self.to_jsonl().as_bytes()).map_err(io_err)
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    content: Option<String>,
    #[serde(default)]
    comments: Option<Vec<String>>,
    label: Option<serde_json::Value>,
    domain: Option<String>,
}

/// Loads a line-delimited record file. Blank lines are skipped; ids default
/// to `<filename>:<line>`.
pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let name = path
        .file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| file_name.clone());
    parse_records(&name, &file_name, &text)
}

/// Parses line-delimited records from an in-memory string.
pub fn parse_records(name: &str, file_name: &str, text: &str) -> Result<Dataset, DataError> {
    let mut items = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| DataError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        items.push(parse_record(raw, file_name, line_no)?);
    }
    if items.is_empty() {
        return Err(DataError::EmptyFile);
    }
    Dataset::new(name, items)
}

fn parse_record(raw: RawRecord, file_name: &str, line: usize) -> Result<NewsItem, DataError> {
    let content = raw
        .content
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty())
        .ok_or(DataError::MissingField {
            line,
            field: "content",
        })?;
    let domain = raw
        .domain
        .map(|d| normalize_domain(&d))
        .filter(|d| !d.is_empty())
        .ok_or(DataError::MissingField {
            line,
            field: "domain",
        })?;
    let label_value = raw.label.ok_or(DataError::MissingField {
        line,
        field: "label",
    })?;
    let label = label_value
        .as_i64()
        .and_then(Verdict::from_code)
        .ok_or_else(|| DataError::BadLabel {
            line,
            value: label_value.to_string(),
        })?;
    let id = raw
        .id
        .filter(|s| !s.trim().is_empty())
        .unwrap_or_else(|| format!("{file_name}:{line}"));
    Ok(NewsItem {
        id,
        content,
        comments: raw.comments.unwrap_or_default(),
        label,
        domain,
    })
}

/// Partitions a dataset by domain tag. Item order within each part is preserved.
pub fn split_by_domain(dataset: &Dataset) -> Result<BTreeMap<String, Dataset>, DataError> {
    if dataset.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let mut parts: BTreeMap<String, Vec<NewsItem>> = BTreeMap::new();
    for item in dataset.items() {
        parts
            .entry(item.domain.clone())
            .or_default()
            .push(item.clone());
    }
    Ok(parts
        .into_iter()
        .map(|(domain, items)| {
            let name = format!("{}/{}", dataset.name, domain);
            (domain, Dataset { name, items })
        })
        .collect())
}
