//! The CSV dialect shared with the plotting scripts.
//!
//! A file starts with `#`-prefixed metadata lines of the form `# key: value`,
//! followed by a header row and comma-separated records. Lines end in `\n`,
//! numbers are written with Rust's shortest round-trip `Display` (so `NaN` and
//! `inf` may occur) and a missing value is an empty field. The `config`
//! metadata entry holds the generating configuration as one line of JSON.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{ExpError, ExpResult};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Formats a number for a table cell.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Formats an optional number; `None` becomes the empty field.
pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Table {
        Table {
            meta: Vec::new(),
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Table {
        self.set_meta(key, value);
        self
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Raw field values of a column.
    pub fn column(&self, name: &str) -> ExpResult<Vec<&str>> {
        let j = self
            .column_index(name)
            .ok_or_else(|| ExpError::Invalid(format!("no column '{name}'")))?;
        Ok(self.rows.iter().map(|r| r[j].as_str()).collect())
    }

    /// A numeric column; empty fields map to `None`.
    pub fn column_f64(&self, name: &str) -> ExpResult<Vec<Option<f64>>> {
        self.column(name)?
            .into_iter()
            .map(|s| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<f64>()
                        .map(Some)
                        .map_err(|_| ExpError::Invalid(format!("column '{name}': '{s}' is not a number")))
                }
            })
            .collect()
    }

    /// Rows whose field in `column` equals `value`.
    pub fn filter(&self, column: &str, value: &str) -> ExpResult<Table> {
        let j = self
            .column_index(column)
            .ok_or_else(|| ExpError::Invalid(format!("no column '{column}'")))?;
        Ok(Table {
            meta: self.meta.clone(),
            columns: self.columns.clone(),
            rows: self.rows.iter().filter(|r| r[j] == value).cloned().collect(),
        })
    }

    pub fn to_csv_string(&self) -> ExpResult<String> {
        let mut out = String::new();
        for (k, v) in &self.meta {
            if k.contains(':') || k.contains('\n') || v.contains('\n') {
                return Err(ExpError::Invalid(format!("metadata entry '{k}' must be a single line")));
            }
            writeln!(out, "# {k}: {v}").expect("writing to a String");
        }
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        writer.write_record(&self.columns)?;
        for row in &self.rows {
            writer.write_record(row)?;
        }
        let body = writer
            .into_inner()
            .map_err(|e| ExpError::Invalid(format!("csv buffer: {e}")))?;
        out.push_str(std::str::from_utf8(&body).expect("csv output is UTF-8"));
        Ok(out)
    }

    pub fn parse(text: &str) -> ExpResult<Table> {
        let mut meta = Vec::new();
        let mut body_start = 0;
        for line in text.split_inclusive('\n') {
            let Some(rest) = line.strip_prefix('#') else { break };
            body_start += line.len();
            let rest = rest.trim_end_matches('\n').trim_start();
            if let Some((k, v)) = rest.split_once(": ") {
                meta.push((k.to_string(), v.to_string()));
            } else if let Some(k) = rest.strip_suffix(':') {
                meta.push((k.to_string(), String::new()));
            }
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text[body_start..].as_bytes());
        let columns = reader.headers()?.iter().map(String::from).collect();
        let rows = reader
            .records()
            .map(|r| r.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()?;
        Ok(Table { meta, columns, rows })
    }

    pub fn write(&self, path: &Path) -> ExpResult<()> {
        std::fs::write(path, self.to_csv_string()?).map_err(|e| ExpError::io(path, e))
    }

    pub fn read(path: &Path) -> ExpResult<Table> {
        let text = std::fs::read_to_string(path).map_err(|e| ExpError::io(path, e))?;
        Table::parse(&text)
    }
}
