//! Result tables and their CSV form.
//!
//! The CSV carries only the header and the numeric rows; metadata (seed list,
//! configuration hash, plot hints) lives in a `<stem>.meta.json` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TableMetadata {
    pub preset: String,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    /// Plot the y-axis on a log scale.
    #[serde(default)]
    pub log_y: bool,
    #[serde(default)]
    pub log_x: bool,
}

/// Numeric table; the first column is the x-axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub metadata: TableMetadata,
}

impl ResultTable {
    pub fn new(columns: Vec<String>, metadata: TableMetadata) -> Self {
        ResultTable {
            columns,
            rows: Vec::new(),
            metadata,
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match header");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// CSV text: header plus one line per row, LF endings, shortest
    /// round-trip floats.
    pub fn to_csv(&self) -> Result<String> {
        if self.rows.is_empty() {
            return Err(Error::config("table", "cannot emit an empty table"));
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let ctx = |e: csv::Error| Error::Parse {
            context: "csv".into(),
            message: e.to_string(),
        };
        w.write_record(&self.columns).map_err(ctx)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(ctx)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse {
            context: "csv".into(),
            message: e.to_string(),
        })?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(text: &str, metadata: TableMetadata) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let ctx = |e: csv::Error| Error::Parse {
            context: "csv".into(),
            message: e.to_string(),
        };
        let columns: Vec<String> = r.headers().map_err(ctx)?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(ctx)?;
            let row = rec
                .iter()
                .enumerate()
                .map(|(j, f)| {
                    f.parse::<f64>().map_err(|e| Error::Parse {
                        context: format!("csv row {} column {}", line + 1, columns[j]),
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(ResultTable {
            columns,
            rows,
            metadata,
        })
    }
}

/// `<dir>/<stem>.meta.json` next to a CSV path.
pub fn metadata_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path.file_stem().unwrap_or_default().to_string_lossy();
    csv_path.with_file_name(format!("{stem}.meta.json"))
}

/// Writes the CSV, its metadata sidecar, and the SVG chart next to it.
pub fn emit_result_table(table: &ResultTable, path: &Path) -> Result<()> {
    let csv = table.to_csv()?;
    fs::write(path, csv).map_err(|e| Error::io(path, e))?;
    let meta_path = metadata_path(path);
    let meta = serde_json::to_string_pretty(&table.metadata).expect("metadata serializes");
    fs::write(&meta_path, meta + "\n").map_err(|e| Error::io(&meta_path, e))?;
    let svg_path = path.with_extension("svg");
    fs::write(&svg_path, super::svg::render(table)).map_err(|e| Error::io(&svg_path, e))?;
    Ok(())
}

/// Reads a table written by [`emit_result_table`].
pub fn read_result_table(path: &Path) -> Result<ResultTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let meta_path = metadata_path(path);
    let metadata = match fs::read_to_string(&meta_path) {
        Ok(m) => serde_json::from_str(&m).map_err(|e| Error::Parse {
            context: meta_path.display().to_string(),
            message: e.to_string(),
        })?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => TableMetadata::default(),
        Err(e) => return Err(Error::io(&meta_path, e)),
    };
    ResultTable::from_csv(&text, metadata)
}
