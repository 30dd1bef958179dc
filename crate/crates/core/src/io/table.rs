//! CSV tables and the schema file written next to them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub unit: String,
    pub doc: String,
}

/// A named table of text cells. Numbers go through [`cell`], so equal runs
/// give byte-identical files.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub doc: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, doc: &str) -> Self {
        Self {
            name: name.to_string(),
            doc: doc.to_string(),
            columns: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn column(mut self, name: &str, unit: &str, doc: &str) -> Self {
        self.columns.push(Column {
            name: name.to_string(),
            unit: unit.to_string(),
            doc: doc.to_string(),
        });
        self
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::ShapeMismatch(format!(
                "table {}: row of {} cells for {} columns",
                self.name,
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(self.columns.iter().map(|c| c.name.as_str())).map_err(err)?;
        for row in &self.rows {
            w.write_record(row).map_err(err)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.to_string()))
    }
}

/// Formats a float cell in shortest round-trip form, switching to exponent
/// notation for very small or large magnitudes.
pub fn cell(v: f64) -> String {
    format!("{v:?}")
}

/// `None` becomes an empty cell.
pub fn opt_cell(v: Option<f64>) -> String {
    v.map(cell).unwrap_or_default()
}

/// An output directory that records every file it writes in `schema.txt`.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    schema: String,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            schema: String::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_table(&mut self, table: &Table) -> Result<()> {
        fs::write(self.path(&table.file_name()), table.to_csv()?)?;
        let _ = writeln!(self.schema, "{}: {}", table.file_name(), table.doc);
        for c in &table.columns {
            let unit = if c.unit.is_empty() { "-" } else { &c.unit };
            let _ = writeln!(self.schema, "  {} [{}] {}", c.name, unit, c.doc);
        }
        self.schema.push('\n');
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, doc: &str, content: &str) -> Result<()> {
        fs::write(self.path(name), content)?;
        let _ = writeln!(self.schema, "{name}: {doc}\n");
        Ok(())
    }

    /// Registers a file written by someone else, e.g. a snapshot series.
    pub fn note(&mut self, pattern: &str, doc: &str) {
        let _ = writeln!(self.schema, "{pattern}: {doc}\n");
    }

    /// Writes `schema.txt`; call once after all other files.
    pub fn finish(self) -> Result<()> {
        fs::write(self.root.join("schema.txt"), self.schema)?;
        Ok(())
    }
}
