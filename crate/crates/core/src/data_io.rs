//! Observation tables and the on-disk formats shared by the pipeline.
//!
//! Input data is long-format CSV: a `glass` column (group id), a `week`
//! column (time level), then one column per response. Comma delimiter,
//! decimal point, UTF-8, LF line endings. Missing cells are empty; `NA` is
//! accepted on read and never written.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dispersion::Family;
use crate::error::{Error, Result};

pub const GROUP_COLUMN: &str = "glass";
pub const TIME_COLUMN: &str = "week";

/// Version stamped into every JSON document written by this crate.
pub const FORMAT_VERSION: u32 = 1;

/// Orders labels numerically when both parse as numbers, lexically otherwise,
/// so that weeks `6, 12, 18` and glasses `1..10` sort the way people expect.
pub fn label_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) if x.is_finite() && y.is_finite() => {
            x.total_cmp(&y).then_with(|| a.cmp(b))
        }
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub group: String,
    pub time: String,
    pub values: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationTable {
    response_names: Vec<String>,
    rows: Vec<Row>,
    keys: HashSet<(String, String)>,
}

impl ObservationTable {
    pub fn new(response_names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for name in &response_names {
            if name == GROUP_COLUMN || name == TIME_COLUMN {
                return Err(Error::Input(format!("response name '{name}' is reserved")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Input(format!("duplicate response name '{name}'")));
            }
        }
        Ok(Self {
            response_names,
            rows: Vec::new(),
            keys: HashSet::new(),
        })
    }

    pub fn push_row(
        &mut self,
        group: impl Into<String>,
        time: impl Into<String>,
        values: Vec<Option<f64>>,
    ) -> Result<()> {
        let group = group.into();
        let time = time.into();
        if values.len() != self.response_names.len() {
            return Err(Error::Input(format!(
                "row ({group}, {time}) has {} values, expected {}",
                values.len(),
                self.response_names.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find_map(|(i, v)| v.filter(|x| !x.is_finite()).map(|x| (i, x)))
        {
            return Err(Error::Input(format!(
                "non-finite value {v} for '{}' in row ({group}, {time})",
                self.response_names[i]
            )));
        }
        if !self.keys.insert((group.clone(), time.clone())) {
            return Err(Error::Input(format!(
                "duplicate ({GROUP_COLUMN}, {TIME_COLUMN}) pair ({group}, {time})"
            )));
        }
        self.rows.push(Row {
            group,
            time,
            values,
        });
        Ok(())
    }

    pub fn response_names(&self) -> &[String] {
        &self.response_names
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn response_index(&self, name: &str) -> Result<usize> {
        self.response_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Input(format!("response column '{name}' not found")))
    }

    /// Distinct group ids in label order.
    pub fn group_ids(&self) -> Vec<String> {
        sorted_unique(self.rows.iter().map(|r| r.group.as_str()))
    }

    /// Distinct time levels in label order.
    pub fn time_levels(&self) -> Vec<String> {
        sorted_unique(self.rows.iter().map(|r| r.time.as_str()))
    }

    /// A copy restricted to the named responses, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| self.response_index(n))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Self::new(names.to_vec())?;
        for row in &self.rows {
            out.push_row(
                row.group.clone(),
                row.time.clone(),
                idx.iter().map(|&i| row.values[i]).collect(),
            )?;
        }
        Ok(out)
    }
}

fn sorted_unique<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = labels
        .collect::<HashSet<_>>()
        .into_iter()
        .map(str::to_owned)
        .collect();
    out.sort_by(|a, b| label_cmp(a, b));
    out
}

/// A table together with non-fatal findings from parsing it.
#[derive(Clone, Debug)]
pub struct LoadedTable {
    pub table: ObservationTable,
    pub warnings: Vec<String>,
}

/// Read a long-format CSV, keeping the responses named in `schema` in schema
/// order and validating every present value against its family's support.
pub fn read_table(path: impl AsRef<Path>, schema: &[(String, Family)]) -> Result<LoadedTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_table(&text, schema)
}

pub fn parse_table(text: &str, schema: &[(String, Family)]) -> Result<LoadedTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(Ok(h)) if !(h.len() == 1 && h[0].trim().is_empty()) => h,
        Some(Err(e)) => return Err(Error::Input(format!("unreadable header: {e}"))),
        _ => return Err(Error::Input("missing header".into())),
    };
    let header: Vec<String> = header.iter().map(|h| h.trim().to_owned()).collect();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("missing required column '{name}'")))
    };
    let group_col = column(GROUP_COLUMN)?;
    let time_col = column(TIME_COLUMN)?;
    let response_cols = schema
        .iter()
        .map(|(name, _)| column(name))
        .collect::<Result<Vec<_>>>()?;

    let mut warnings = Vec::new();
    for h in &header {
        if h != GROUP_COLUMN && h != TIME_COLUMN && !schema.iter().any(|(n, _)| n == h) {
            warnings.push(format!("column '{h}' is not in the schema and was ignored"));
        }
    }

    let names = schema.iter().map(|(n, _)| n.clone()).collect();
    let mut table = ObservationTable::new(names)?;
    for (i, record) in records.enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Input(format!("line {line}: {e}")))?;
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != header.len() {
            return Err(Error::Input(format!(
                "line {line}: {} fields, header has {}",
                record.len(),
                header.len()
            )));
        }
        let mut values = Vec::with_capacity(schema.len());
        for ((name, family), &col) in schema.iter().zip(&response_cols) {
            let cell = record[col].trim();
            if cell.is_empty() || cell == "NA" {
                values.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::Input(format!("line {line}, column '{name}': non-numeric value '{cell}'"))
            })?;
            family.check_support(v).map_err(|_| {
                Error::Input(format!(
                    "line {line}, column '{name}': value {v} outside the support of {family}"
                ))
            })?;
            values.push(Some(v));
        }
        if values.iter().all(Option::is_none) && !values.is_empty() {
            warnings.push(format!("line {line}: every response is missing"));
        }
        table
            .push_row(record[group_col].trim(), record[time_col].trim(), values)
            .map_err(|e| match e {
                Error::Input(msg) => Error::Input(format!("line {line}: {msg}")),
                other => other,
            })?;
    }
    Ok(LoadedTable { table, warnings })
}

/// Serialise a table to the long-format CSV. Floats are written in their
/// shortest round-trip representation.
pub fn table_to_csv(table: &ObservationTable) -> String {
    let mut out = String::new();
    out.push_str(GROUP_COLUMN);
    out.push(',');
    out.push_str(TIME_COLUMN);
    for name in table.response_names() {
        out.push(',');
        out.push_str(&csv_field(name));
    }
    out.push('\n');
    for row in table.rows() {
        out.push_str(&csv_field(&row.group));
        out.push(',');
        out.push_str(&csv_field(&row.time));
        for v in &row.values {
            out.push(',');
            if let Some(v) = v {
                out.push_str(&format!("{v}"));
            }
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn write_table(table: &ObservationTable, path: impl AsRef<Path>) -> Result<()> {
    write_text(path, &table_to_csv(table))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A JSON document with a format version.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Document<T> {
    pub format_version: u32,
    pub kind: String,
    pub body: T,
}

pub fn to_json<T: Serialize>(kind: &str, body: &T) -> Result<String> {
    let doc = Document {
        format_version: FORMAT_VERSION,
        kind: kind.to_owned(),
        body,
    };
    let mut s = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Input(format!("cannot serialise {kind}: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let doc: Document<T> = serde_json::from_str(text)
        .map_err(|e| Error::Input(format!("invalid {kind} document: {e}")))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::Input(format!(
            "unsupported formatVersion {} (expected {FORMAT_VERSION})",
            doc.format_version
        )));
    }
    if doc.kind != kind {
        return Err(Error::Input(format!("expected a '{kind}' document, found '{}'", doc.kind)));
    }
    Ok(doc.body)
}

pub fn write_json<T: Serialize>(kind: &str, body: &T, path: impl AsRef<Path>) -> Result<()> {
    write_text(path, &to_json(kind, body)?)
}

pub fn read_json<T: DeserializeOwned>(kind: &str, path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(kind, &text)
}
