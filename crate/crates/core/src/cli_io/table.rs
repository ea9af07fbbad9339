//! Diagnostics CSV: a header with the [`DiagnosticsRow`] columns in declared
//! order, then one row per sample. Numbers use the shortest decimal form that
//! parses back to the same `f64`; non-finite values are `NaN`, `inf`, `-inf`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::diagnostics::DiagnosticsRow;
use crate::error::{Error, Result};

/// Shortest round-trip text for `v`.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

/// Incremental writer; the header goes out on creation.
pub struct DiagnosticsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl DiagnosticsWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufWriter::new(file))
    }
}

impl<W: Write> DiagnosticsWriter<W> {
    pub fn new(sink: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(sink);
        inner.write_record(DiagnosticsRow::COLUMNS).map_err(csv_err)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &DiagnosticsRow) -> Result<()> {
        self.inner
            .write_record(row.values().iter().map(|&v| format_f64(v)))
            .map_err(csv_err)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::Csv(e.to_string()))
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner.into_inner().map_err(|e| Error::Csv(e.to_string()))
    }
}

/// Parses a diagnostics CSV; the header must match exactly.
pub fn parse_diagnostics(source: impl Read) -> Result<Vec<DiagnosticsRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().ne(DiagnosticsRow::COLUMNS) {
        return Err(Error::Csv(format!(
            "header mismatch: expected {}, found {}",
            DiagnosticsRow::COLUMNS.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let mut v = [0.0; 14];
        for (slot, (field, name)) in v.iter_mut().zip(record.iter().zip(DiagnosticsRow::COLUMNS)) {
            *slot = field
                .parse()
                .map_err(|_| Error::Csv(format!("row {}: {name} is not a number: \"{field}\"", i + 1)))?;
        }
        rows.push(DiagnosticsRow::from_values(v));
    }
    Ok(rows)
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticsRow>> {
    let file = File::open(path).map_err(|e| Error::io(PathBuf::from(path), e))?;
    parse_diagnostics(file)
}
