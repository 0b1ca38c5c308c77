//! Minimal comma-separated text reading.
//!
//! The file formats this crate consumes are plain comma-separated values with
//! a header row and no quoting (fields never contain commas). A strict
//! hand-rolled reader keeps parse behavior auditable and line numbers exact.

use crate::error::{Error, Result};
use std::path::Path;

/// A parsed delimiter-separated file: header names plus raw rows with
/// their 1-based line numbers.
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file = path.display().to_string();
        let mut lines = text.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => split_fields(line),
            None => {
                return Err(Error::Data(format!("{file}: empty file")));
            }
        };
        let mut rows = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            rows.push((idx + 1, split_fields(line)));
        }
        Ok(Table { file, header, rows })
    }

    /// Index of a required column, or a schema error naming it.
    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                file: self.file.clone(),
                column: name.to_string(),
            })
    }

    pub fn column_opt(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn field<'a>(&self, row: &'a (usize, Vec<String>), col: usize) -> Result<&'a str> {
        row.1
            .get(col)
            .map(String::as_str)
            .ok_or_else(|| Error::Malformed {
                file: self.file.clone(),
                line: row.0,
                message: format!(
                    "row has {} fields, expected at least {}",
                    row.1.len(),
                    col + 1
                ),
            })
    }

    pub fn malformed(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Malformed {
            file: self.file.clone(),
            line,
            message: message.into(),
        }
    }
}

fn split_fields(line: &str) -> Vec<String> {
    line.trim_end_matches('\r')
        .split(',')
        .map(|f| f.trim().to_string())
        .collect()
}

/// One line of a skip report: `<file>:<line>: <reason>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skip {
    pub file: String,
    pub line: usize,
    pub reason: String,
}

impl std::fmt::Display for Skip {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}: {}", self.file, self.line, self.reason)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_header_and_rows_with_line_numbers() {
        let f = write_temp("a,b\n1,2\n\n3,4\n");
        let t = Table::read(f.path()).unwrap();
        assert_eq!(t.header, vec!["a", "b"]);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].0, 2);
        assert_eq!(t.rows[1].0, 4);
    }

    #[test]
    fn missing_column_names_the_column() {
        let f = write_temp("a,b\n1,2\n");
        let t = Table::read(f.path()).unwrap();
        let err = t.column("median_income").unwrap_err();
        assert!(err.to_string().contains("median_income"));
    }

    #[test]
    fn skip_line_format() {
        let s = Skip {
            file: "crimes.csv".into(),
            line: 17,
            reason: "latitude out of range".into(),
        };
        assert_eq!(s.to_string(), "crimes.csv:17: latitude out of range");
    }
}
