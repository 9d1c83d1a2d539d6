//! Minimal reader for the comma-separated input files (no quoting).

use std::fs;
use std::path::Path;

#[derive(Debug)]
pub(crate) struct Table {
    pub file: String,
    pub header: Vec<String>,
    /// (1-based line number, fields)
    pub rows: Vec<(usize, Vec<String>)>,
}

#[derive(Debug)]
pub(crate) enum TableError {
    Io(std::io::Error),
    Format { line: usize, reason: String },
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, TableError> {
        let text = fs::read_to_string(path).map_err(TableError::Io)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, file: &str) -> Result<Self, TableError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_start_matches('\u{feff}').trim()))
            .filter(|(_, l)| !l.is_empty());
        let (_, head) = lines.next().ok_or(TableError::Format {
            line: 1,
            reason: "missing header".into(),
        })?;
        let header: Vec<String> = head.split(',').map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (n, l) in lines {
            let fields: Vec<String> = l.split(',').map(|s| s.trim().to_string()).collect();
            if fields.len() != header.len() {
                return Err(TableError::Format {
                    line: n,
                    reason: format!("expected {} fields, found {}", header.len(), fields.len()),
                });
            }
            rows.push((n, fields));
        }
        Ok(Self {
            file: file.to_string(),
            header,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<usize, TableError> {
        self.header.iter().position(|h| h == name).ok_or(TableError::Format {
            line: 1,
            reason: format!("missing column `{name}`"),
        })
    }

    pub fn optional_column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub(crate) fn field<T: std::str::FromStr>(
    fields: &[String],
    col: usize,
    line: usize,
    name: &str,
) -> Result<T, TableError> {
    fields[col].parse().map_err(|_| TableError::Format {
        line,
        reason: format!("cannot parse {name} from `{}`", fields[col]),
    })
}
